"""Bit-packed binary codes and XOR+popcount Hamming distance."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError

CODE_MAGIC = b"UCHCODE1"

_POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def words_per_item(k):
    return (k + 63) // 64


@dataclass
class CodeMatrix:
    """n items of K bits, little-endian 64-bit words, bit set <=> value +1."""

    n: int
    k: int
    words: np.ndarray  # shape (n, words_per_item(k)), dtype uint64

    @classmethod
    def pack(cls, signs):
        signs = np.asarray(signs)
        n, k = signs.shape
        w = words_per_item(k)
        bits = np.zeros((n, w * 64), dtype=np.uint8)
        bits[:, :k] = signs > 0
        weights = (np.uint64(1) << np.arange(64, dtype=np.uint64))
        words = (bits.reshape(n, w, 64).astype(np.uint64) * weights).sum(
            axis=2, dtype=np.uint64
        )
        return cls(n=n, k=k, words=words)

    def unpack(self):
        """Back to a dense +-1 int8 matrix."""
        w = self.words.shape[1]
        shifts = np.arange(64, dtype=np.uint64)
        bits = (self.words[:, :, None] >> shifts) & np.uint64(1)
        bits = bits.reshape(self.n, w * 64)[:, : self.k]
        return np.where(bits > 0, 1, -1).astype(np.int8)


def hamming_distance(a, b, k=None):
    """Differing-bit count between two packed code rows."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ContractError(f"code length mismatch: {a.shape} vs {b.shape}")
    x = (a ^ b).view(np.uint8)
    return int(_POP8[x].sum())


def distance_matrix(queries: CodeMatrix, database: CodeMatrix):
    """All pairwise Hamming distances, shape (n_queries, n_database)."""
    if queries.k != database.k:
        raise ContractError(f"code length mismatch: {queries.k} vs {database.k}")
    x = queries.words[:, None, :] ^ database.words[None, :, :]
    pop = _POP8[x.view(np.uint8)].reshape(queries.n, database.n, -1)
    return pop.sum(axis=2, dtype=np.int64)


def rank_by_hamming(query_words, database: CodeMatrix):
    """Database indices by ascending distance; ties break by ascending index."""
    if database.n == 0:
        return np.zeros(0, dtype=np.int64)
    x = np.asarray(query_words, dtype=np.uint64)[None, :] ^ database.words
    dist = _POP8[x.view(np.uint8)].reshape(database.n, -1).sum(axis=1, dtype=np.int64)
    return np.argsort(dist, kind="stable")


def save_codes(codes: CodeMatrix, path):
    with open(path, "wb") as f:
        f.write(CODE_MAGIC)
        f.write(struct.pack("<II", codes.n, codes.k))
        f.write(codes.words.astype("<u8").tobytes())


def load_codes(path) -> CodeMatrix:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CODE_MAGIC:
            raise ValueError(f"{path}: bad code-file magic {magic!r}")
        n, k = struct.unpack("<II", f.read(8))
        w = words_per_item(k)
        data = np.frombuffer(f.read(n * w * 8), dtype="<u8")
        if data.size != n * w:
            raise ValueError(f"{path}: truncated code file")
        return CodeMatrix(n=n, k=k, words=data.reshape(n, w).astype(np.uint64))
