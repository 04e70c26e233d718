"""Command-line interface.

Results go to stdout, diagnostics (logging) to stderr. Exit codes:

    0  success
    1  configuration error
    2  data error (missing/malformed input, missing labels, bad index)
    3  numerical failure (non-finite values, divergence, strict-mode clamp)
    4  bad or corrupt checkpoint
    5  oracle failure
"""
import argparse
import csv
import logging
import os
import sys

import numpy as np

from twoview import __version__
from twoview import autodiff as ad
from twoview import checkpoint as ckpt
from twoview.common import TrainingDiverged, train_common
from twoview.config import ConfigError, load_run_config
from twoview.data import (
    FormatError,
    PairedDataset,
    load_feature_matrix,
    load_mnist_views,
    recognition_accuracy,
    total_cross_correlation,
)
from twoview.individual import train_individual

log = logging.getLogger("twoview")

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_CHECKPOINT = 4
EXIT_ORACLE = 5


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# data from a run config

def _labels(path):
    return load_feature_matrix(path).data[:, 0].astype(np.int64)


def load_split(data, split):
    """Return a :class:`PairedDataset` for ``split`` ("train" or "test") or None."""
    try:
        if data.get("mnist_dir"):
            limit = int(data["max_train"]) if split == "train" and data.get("max_train") else None
            return load_mnist_views(data["mnist_dir"], split, limit)
        k1, k2, kl = f"{split}_view1", f"{split}_view2", f"{split}_labels"
        if not data.get(k1) or not data.get(k2):
            return None
        v1 = load_feature_matrix(data[k1]).data
        v2 = load_feature_matrix(data[k2]).data
        labels = _labels(data[kl]) if data.get(kl) else None
        if split == "train" and data.get("max_train"):
            m = int(data["max_train"])
            v1, v2 = v1[:m], v2[:m]
            labels = None if labels is None else labels[:m]
        return PairedDataset(v1, v2, labels, split)
    except (OSError, FormatError) as exc:
        raise DataError(str(exc)) from exc


def layout_for(data, dim):
    if data.get("layout"):
        try:
            rows, cols = (int(v) for v in data["layout"].lower().split("x"))
        except ValueError:
            raise ConfigError(f"layout must look like ROWSxCOLS, got {data['layout']!r}") from None
        return rows, cols
    if data.get("mnist_dir"):
        return 28, 14
    return 1, dim


def _run_config(args):
    run = load_run_config(args.config)
    if args.seed is not None:
        run.train = run.train.with_(seed=args.seed)
    return run


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(row[c])) if isinstance(row.get(c), float) else row.get(c, "")
                        for c in columns])


def _history_path(args):
    return args.history or os.path.splitext(args.out)[0] + ".history.csv"


# --------------------------------------------------------------------------
# commands

def cmd_train_common(args):
    run = _run_config(args)
    train = load_split(run.data, "train")
    if train is None:
        raise DataError("no training views configured")
    test = load_split(run.data, "test")
    eval_views = (test.view1, test.view2) if test is not None else None
    cfg = run.train
    log.info("training common component: n=%d k=%d epochs=%d", train.n, cfg.k, cfg.epochs)
    comp, history = train_common(cfg, train.view1, train.view2, eval_views,
                                 eval_every=int(run.data.get("eval_every", 1)))
    ckpt.save(args.out, comp)
    cols = ["epoch", "corr", "decor1", "decor2", "penalty", "loss"]
    if eval_views is not None:
        cols.append("test_corr")
    _write_csv(_history_path(args), history, cols)
    last = history[-1] if history else {}
    print(f"checkpoint={args.out}")
    if "test_corr" in last:
        print(f"test_corr={last['test_corr']!r}")
    return 0


def _load_common(path):
    if ckpt.peek_kind(path) != ckpt.KIND_COMMON:
        raise ckpt.CheckpointError(f"{path} is not a common-component checkpoint")
    return ckpt.load(path)


def cmd_train_individual(args):
    run = _run_config(args)
    common = _load_common(args.common)
    train = load_split(run.data, "train")
    if train is None:
        raise DataError("no training views configured")
    ind, history = train_individual(run.train, train.view1, train.view2, common)
    ckpt.save(args.out, ind, link=ckpt.crc_of(common))
    cols = ["epoch", "recon1", "decor1", "recon2", "decor2", "loss"]
    _write_csv(_history_path(args), history, cols)
    print(f"checkpoint={args.out}")
    return 0


def cmd_eval(args):
    run = _run_config(args)
    common = _load_common(args.common)
    data = load_split(run.data, args.split)
    if data is None:
        raise DataError(f"no {args.split} views configured")
    Z1 = common.encode(data.view1, 1)
    Z2 = common.encode(data.view2, 2)
    if args.metric == "corr":
        value = total_cross_correlation(Z1, Z2)
    else:
        if data.labels is None:
            raise DataError("recognition needs labels for the evaluation split")
        value = recognition_accuracy(Z1, Z2, data.labels, folds=int(run.data.get("folds", 5)),
                                     seed=run.train.seed, classifier=run.data.get("classifier", "logistic"))
    print(repr(value))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "k", "value", "seed"])
            w.writerow([args.metric, common.k, repr(value), run.train.seed])
    return 0


def _parse_indices(spec, n):
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        idx = list(range(int(lo or 0), int(hi or n)))
    elif ".." in spec:
        lo, hi = spec.split("..", 1)
        idx = list(range(int(lo), int(hi)))
    else:
        idx = [int(v) for v in spec.split(",")]
    if not idx:
        raise DataError("empty index range")
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise DataError(f"index {bad[0]} out of range for {n} samples")
    return idx


def cmd_gradmap(args):
    from twoview.scores import common_maps, export_saliency, individual_maps

    run = _run_config(args)
    common = _load_common(args.common)
    data = load_split(run.data, args.split)
    if data is None:
        raise DataError(f"no {args.split} views configured")
    idx = _parse_indices(args.index, data.n)
    X1, X2 = data.view1[idx], data.view2[idx]
    layouts = {1: layout_for(run.data, X1.shape[1]), 2: layout_for(run.data, X2.shape[1])}
    if not os.path.isdir(args.out):
        os.makedirs(args.out)
    rows = []
    if args.kind == "common":
        s, G1, G2, _ = common_maps(common, X1, X2)
        per_view = {1: (s, G1), 2: (s, G2)}
    else:
        if not args.individual:
            raise ConfigError("--individual is required for kind=individual")
        ind = ckpt.load(args.individual, common)
        r1, H1, _ = individual_maps(ind, common, X1, X2, 1)
        r2, H2, _ = individual_maps(ind, common, X2, X1, 2)
        per_view = {1: (r1, H1), 2: (r2, H2)}
    for j, i in enumerate(idx):
        for view in (1, 2):
            scores, maps = per_view[view]
            path = os.path.join(args.out, f"{i}_{view}_{args.kind}.pgm")
            export_saliency(maps[j], layouts[view], path)
            rows.append({"index": i, "view": view, "kind": args.kind, "score": float(scores[j])})
    scores_path = os.path.join(args.out, f"scores_{args.kind}.csv")
    _write_csv(scores_path, rows, ["index", "view", "kind", "score"])
    print(f"scores={scores_path}")
    return 0


def cmd_oracle(args):
    from twoview.verify import run_suite

    seed = 0 if args.seed is None else args.seed
    results = run_suite(seed, fault=args.inject_fault, fd_instances=args.fd_instances)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["check", "instances", "max_error", "tolerance", "status"])
    for r in results:
        w.writerow([r.name, r.instances, f"{r.max_error:.3e}", f"{r.tolerance:.0e}",
                    "PASS" if r.passed else "FAIL"])
    failed = [r.name for r in results if not r.passed]
    if failed:
        log.error("oracle checks failed: %s", ", ".join(failed))
        return EXIT_ORACLE
    return 0


# --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="twoview", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_flags(p, out_help, need_config=True):
        if need_config:
            p.add_argument("--config", required=True, help="key=value run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--strict", action="store_true", help="fail instead of clamping divisions/roots")
        if out_help:
            p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("train-common", help="train and save the common component")
    common_flags(p, "output checkpoint path")
    p.add_argument("--history", help="per-epoch CSV (default: <out>.history.csv)")
    p.set_defaults(func=cmd_train_common)

    p = sub.add_parser("train-individual", help="train the individual component against a frozen common one")
    common_flags(p, "output checkpoint path")
    p.add_argument("--common", required=True, help="common-component checkpoint")
    p.add_argument("--history", help="per-epoch CSV (default: <out>.history.csv)")
    p.set_defaults(func=cmd_train_individual)

    p = sub.add_parser("eval", help="total correlation or cross-view recognition")
    common_flags(p, None)
    p.add_argument("--common", required=True)
    p.add_argument("--metric", choices=("corr", "recognition"), default="corr")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="CSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradmap", help="export input-gradient maps as PGM images")
    common_flags(p, "output directory")
    p.add_argument("--common", required=True)
    p.add_argument("--individual", help="individual checkpoint (kind=individual)")
    p.add_argument("--kind", choices=("common", "individual"), default="common")
    p.add_argument("--index", default="0", help="sample index, list (1,4,7) or range (0:10 or 0..10)")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_gradmap)

    p = sub.add_parser("oracle", help="run the closed-form and finite-difference verification suite")
    common_flags(p, None, need_config=False)
    p.add_argument("--fd-instances", type=int, default=5)
    p.add_argument("--inject-fault", type=float, default=0.0, metavar="EPS",
                   help="debug: perturb the closed-form common map by EPS")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        with ad.strict_mode(args.strict):
            return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except ckpt.CheckpointError as exc:
        log.error("checkpoint error: %s", exc)
        return EXIT_CHECKPOINT
    except (DataError, FormatError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (TrainingDiverged, ad.NonFiniteError, ad.ClampError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        # config and checkpoints are opened before any data
        code = EXIT_CONFIG if getattr(args, "config", None) == exc.filename else EXIT_CHECKPOINT
        log.error("%s", exc)
        return code
    except ValueError as exc:
        # inconsistent inputs, e.g. a checkpoint that does not fit the data
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
