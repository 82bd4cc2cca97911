"""Command-line pipeline: synth, train, encode, eval, gradcheck.

Exit codes: 0 success, 2 input/validation error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as D
from . import evaluation as E
from . import networks, trainer
from .codes import load_codes, save_codes
from .trainer import DivergenceError, TrainConfig


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="cyclehash",
        description="Coupled-cycle adversarial hashing for cross-modal retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic clustered paired dataset")
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--pairs-per-cluster", type=int, default=250)
    p.add_argument("--dimg", type=int, default=64)
    p.add_argument("--dtxt", type=int, default=32)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", default="images.uchfeat")
    p.add_argument("--texts", default="texts.uchfeat")
    p.add_argument("--labels", default="labels.uchlab")

    p = sub.add_parser("train", help="train the coupled-cycle model")
    p.add_argument("--images", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr-image", type=float, default=1e-4)
    p.add_argument("--lr-text", type=float, default=1e-2)
    p.add_argument("--weight-decay", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gen-adv", choices=("on", "off"), default="on")
    p.add_argument("--optimizer", choices=("sgd", "sgd-momentum"), default="sgd-momentum")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--rec-weight", type=float, default=1.0)
    p.add_argument("--sim-weight", type=float, default=1.0)
    p.add_argument("--gen-adv-weight", type=float, default=1.0)
    p.add_argument("--gen-adv-weight-f", type=float, default=None,
                   help="outer-cycle override for --gen-adv-weight")
    p.add_argument("--gen-adv-weight-z", type=float, default=None,
                   help="inner-cycle override for --gen-adv-weight")
    p.add_argument("--embed-dim", type=int, default=None,
                   help="text embedding width (default: text feature width)")
    p.add_argument("--query-count", type=int, default=0,
                   help="hold out this many pairs from training")
    p.add_argument("--checkpoint", default="model.uchckpt")
    p.add_argument("--log", default="training_log.csv")

    p = sub.add_parser("encode", help="extract binary codes from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images")
    p.add_argument("--texts")
    p.add_argument("--mode", choices=("paired", "image", "text"), required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate retrieval between two code files")
    p.add_argument("--query-codes", required=True)
    p.add_argument("--db-codes", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--db-labels", required=True)
    p.add_argument("--direction", choices=("image->text", "text->image"),
                   default="image->text")
    p.add_argument("--topn", default="",
                   help="comma-separated N values for Precision@N")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                   help="render PR and Precision@N figures next to the report")

    p = sub.add_parser("gradcheck", help="finite-difference check of all loss terms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dimg", type=int, default=16)
    p.add_argument("--dtxt", type=int, default=12)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--self-test-corrupt", action="store_true",
                   help=argparse.SUPPRESS)
    return parser


def _cmd_synth(args):
    spec = D.SyntheticSpec(
        clusters=args.clusters,
        pairs_per_cluster=args.pairs_per_cluster,
        d_img=args.dimg,
        d_txt=args.dtxt,
        sigma=args.sigma,
        rho=args.rho,
        seed=args.seed,
    )
    spec.validate()
    ds = D.generate_synthetic(spec)
    D.save_features(args.images, ds.images)
    D.save_features(args.texts, ds.texts)
    D.save_labels(args.labels, ds.labels)
    print(f"wrote {ds.n} pairs: {args.images} {args.texts} {args.labels}")
    return 0


def _cmd_train(args):
    ds = D.load_dataset(args.images, args.texts)
    if args.query_count:
        D.split(ds, args.query_count, args.seed)
    config = TrainConfig(
        k=args.k,
        batch_size=args.batch_size,
        max_iterations=args.iters,
        lr_image=args.lr_image,
        lr_text=args.lr_text,
        weight_decay=args.weight_decay,
        seed=args.seed,
        gen_adv=args.gen_adv == "on",
        optimizer=args.optimizer,
        momentum=args.momentum,
        rec_weight=args.rec_weight,
        sim_weight=args.sim_weight,
        gen_adv_weight=args.gen_adv_weight,
        gen_adv_weight_f=args.gen_adv_weight_f,
        gen_adv_weight_z=args.gen_adv_weight_z,
    )
    config.validate()
    try:
        bundle, log = trainer.fit(ds, config, d_txt_emb=args.embed_dim)
    except DivergenceError as exc:
        trainer.write_training_log(args.log, exc.partial_log)
        raise
    networks.save_checkpoint(bundle, args.checkpoint)
    trainer.write_training_log(args.log, log)
    print(f"trained {args.iters} iterations; checkpoint: {args.checkpoint}")
    return 0


def _cmd_encode(args):
    bundle = networks.load_bundle(args.checkpoint)
    images = D.load_features(args.images) if args.images else None
    texts = D.load_features(args.texts) if args.texts else None
    if args.mode in ("paired", "image") and images is None:
        raise ValueError(f"mode {args.mode} requires --images")
    if args.mode in ("paired", "text") and texts is None:
        raise ValueError(f"mode {args.mode} requires --texts")
    codes = trainer.extract_codes(bundle, args.mode, images=images, texts=texts)
    save_codes(codes, args.out)
    print(f"wrote {codes.n} codes of {codes.k} bits to {args.out}")
    return 0


def _cmd_eval(args):
    queries = load_codes(args.query_codes)
    database = load_codes(args.db_codes)
    q_labels = D.load_labels(args.query_labels)
    db_labels = D.load_labels(args.db_labels)
    n_list = [int(x) for x in args.topn.split(",") if x.strip()]
    report = E.evaluate(
        queries, database, q_labels, db_labels, args.direction, n_list=n_list
    )
    E.write_report(args.out, report)
    print(f"MAP[{report.direction}] = {report.map_score:.4f} "
          f"({report.skipped_queries} queries skipped)")
    if args.figures:
        from . import plots

        stem, _ = os.path.splitext(args.out)
        plots.plot_pr_curve(report, stem + "_pr.png")
        if report.precision_at:
            plots.plot_precision_at(report, stem + "_topn.png")
    return 0


def _cmd_gradcheck(args):
    from . import autodiff, gradcheck

    if args.self_test_corrupt:
        autodiff.CORRUPT_TANH_ADJOINT = True
    try:
        results = gradcheck.run_checks(
            seed=args.seed, d_img=args.dimg, d_txt=args.dtxt, k=args.k
        )
    finally:
        autodiff.CORRUPT_TANH_ADJOINT = False
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.term:<10} max_rel_err={r.max_rel_err:.3e}")
        failed += not r.ok
    return 0 if failed == 0 else 1


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "encode": _cmd_encode,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
