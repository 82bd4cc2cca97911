"""Retrieval metrics over packed codes: MAP, Hamming-radius PR, Precision@N.

Relevance ground truth: two items are relevant iff their multi-hot label
vectors share at least one active label. Queries with no relevant database
item are skipped and counted. Per-query work parallelizes over disjoint
query chunks; UCH_THREADS caps the worker count (0 or unset = auto).
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError
from .codes import _POP8, CodeMatrix

_CHUNK = 256


def thread_count():
    raw = os.environ.get("UCH_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = min(8, os.cpu_count() or 1)
    return n


@dataclass
class RetrievalReport:
    direction: str  # "image->text" or "text->image"
    map_score: float
    skipped_queries: int
    pr_points: list  # (radius, precision, recall)
    precision_at: list = field(default_factory=list)  # (N, precision)


def relevance_matrix(query_labels, db_labels):
    q = np.asarray(query_labels).astype(bool)
    d = np.asarray(db_labels).astype(bool)
    return (q.astype(np.int32) @ d.astype(np.int32).T) > 0


def _chunk_distances(queries: CodeMatrix, database: CodeMatrix, lo, hi):
    x = queries.words[lo:hi, None, :] ^ database.words[None, :, :]
    return (
        _POP8[x.view(np.uint8)]
        .reshape(hi - lo, database.n, -1)
        .sum(axis=2, dtype=np.int64)
    )


def _map_chunk(dist, rel):
    """(sum of APs, valid count) for one distance/relevance chunk."""
    n_db = dist.shape[1]
    ranks = np.arange(1, n_db + 1, dtype=np.float64)
    total = 0.0
    valid = 0
    for i in range(dist.shape[0]):
        n_rel = int(rel[i].sum())
        if n_rel == 0:
            continue
        order = np.argsort(dist[i], kind="stable")
        hits = rel[i][order]
        cum = np.cumsum(hits)
        total += float((cum[hits] / ranks[hits]).sum()) / n_rel
        valid += 1
    return total, valid


def _parallel_chunks(n_queries, worker):
    chunks = [(lo, min(lo + _CHUNK, n_queries)) for lo in range(0, n_queries, _CHUNK)]
    threads = min(thread_count(), len(chunks))
    if threads <= 1:
        return [worker(lo, hi) for lo, hi in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: worker(*c), chunks))


def mean_average_precision(queries, database, query_labels, db_labels):
    """Full-ranking MAP; AP denominator is the relevant-item count."""
    if queries.k != database.k:
        raise ContractError(f"code length mismatch: {queries.k} vs {database.k}")
    rel = relevance_matrix(query_labels, db_labels)

    def worker(lo, hi):
        return _map_chunk(_chunk_distances(queries, database, lo, hi), rel[lo:hi])

    results = _parallel_chunks(queries.n, worker)
    total = sum(r[0] for r in results)
    valid = sum(r[1] for r in results)
    if valid == 0:
        raise ContractError("no query has a relevant database item")
    return total / valid, queries.n - valid


def pr_curve(queries, database, query_labels, db_labels):
    """Mean precision/recall of the radius-r retrieved set, r = 0..K.

    A query retrieving nothing at radius r contributes precision 1, recall 0.
    """
    if queries.k != database.k:
        raise ContractError(f"code length mismatch: {queries.k} vs {database.k}")
    k = queries.k
    rel = relevance_matrix(query_labels, db_labels)

    def worker(lo, hi):
        dist = _chunk_distances(queries, database, lo, hi)
        prec_sum = np.zeros(k + 1)
        rec_sum = np.zeros(k + 1)
        valid = 0
        for i in range(dist.shape[0]):
            n_rel = int(rel[lo + i].sum())
            if n_rel == 0:
                continue
            counts = np.bincount(dist[i], minlength=k + 1)[: k + 1]
            rel_counts = np.bincount(dist[i][rel[lo + i]], minlength=k + 1)[: k + 1]
            retrieved = np.cumsum(counts)
            rel_retrieved = np.cumsum(rel_counts)
            prec = np.where(retrieved > 0, rel_retrieved / np.maximum(retrieved, 1), 1.0)
            prec_sum += prec
            rec_sum += rel_retrieved / n_rel
            valid += 1
        return prec_sum, rec_sum, valid

    results = _parallel_chunks(queries.n, worker)
    valid = sum(r[2] for r in results)
    if valid == 0:
        raise ContractError("no query has a relevant database item")
    prec = sum(r[0] for r in results) / valid
    rec = sum(r[1] for r in results) / valid
    return [(r, float(prec[r]), float(rec[r])) for r in range(k + 1)]


def precision_at(queries, database, query_labels, db_labels, n_list):
    """Mean relevant fraction among the top-N ranked items, per N."""
    if queries.k != database.k:
        raise ContractError(f"code length mismatch: {queries.k} vs {database.k}")
    n_list = list(n_list)
    for n in n_list:
        if n > database.n:
            raise ContractError(f"N={n} exceeds database size {database.n}")
        if n < 1:
            raise ContractError(f"N={n} must be positive")
    rel = relevance_matrix(query_labels, db_labels)

    def worker(lo, hi):
        dist = _chunk_distances(queries, database, lo, hi)
        sums = np.zeros(len(n_list))
        valid = 0
        for i in range(dist.shape[0]):
            if not rel[lo + i].any():
                continue
            order = np.argsort(dist[i], kind="stable")
            hits = rel[lo + i][order]
            cum = np.cumsum(hits)
            for j, n in enumerate(n_list):
                sums[j] += cum[n - 1] / n
            valid += 1
        return sums, valid

    results = _parallel_chunks(queries.n, worker)
    valid = sum(r[1] for r in results)
    if valid == 0:
        raise ContractError("no query has a relevant database item")
    sums = sum(r[0] for r in results)
    return [(n, float(sums[j] / valid)) for j, n in enumerate(n_list)]


def evaluate(queries, database, query_labels, db_labels, direction, n_list=()):
    map_score, skipped = mean_average_precision(
        queries, database, query_labels, db_labels
    )
    points = pr_curve(queries, database, query_labels, db_labels)
    pat = (
        precision_at(queries, database, query_labels, db_labels, n_list)
        if n_list
        else []
    )
    return RetrievalReport(
        direction=direction,
        map_score=map_score,
        skipped_queries=skipped,
        pr_points=points,
        precision_at=pat,
    )


def write_report(path, report: RetrievalReport):
    with open(path, "w") as f:
        f.write(f"# direction,{report.direction}\n")
        f.write("# metric,value\n")
        f.write(f"map,{report.map_score:.12g}\n")
        f.write(f"skipped_queries,{report.skipped_queries}\n")
        f.write("# pr_curve: radius,precision,recall\n")
        for r, p, rec in report.pr_points:
            f.write(f"{r},{p:.12g},{rec:.12g}\n")
        f.write("# precision_at: N,precision\n")
        for n, p in report.precision_at:
            f.write(f"{n},{p:.12g}\n")


def read_report(path) -> RetrievalReport:
    direction = ""
    map_score = 0.0
    skipped = 0
    pr_points = []
    pat = []
    section = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line.startswith("# direction"):
                direction = line.split(",", 1)[1]
            elif line.startswith("# pr_curve"):
                section = "pr"
            elif line.startswith("# precision_at"):
                section = "pat"
            elif line.startswith("#") or not line:
                continue
            elif section is None:
                key, val = line.split(",", 1)
                if key == "map":
                    map_score = float(val)
                elif key == "skipped_queries":
                    skipped = int(val)
            elif section == "pr":
                r, p, rec = line.split(",")
                pr_points.append((int(r), float(p), float(rec)))
            else:
                n, p = line.split(",")
                pat.append((int(n), float(p)))
    return RetrievalReport(
        direction=direction,
        map_score=map_score,
        skipped_queries=skipped,
        pr_points=pr_points,
        precision_at=pat,
    )
