"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime/ingestion error,
3 self-test failure.  Only the JSON result goes to stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DfeError, UsageError
from .network import NetworkConfig, build, count_flops, count_params, stage_breakdown

log = logging.getLogger("dfeianet")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3


class _StderrHandler(logging.StreamHandler):
    """Always writes to the current ``sys.stderr`` (which tests may swap)."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, _):
        pass


def _setup_logging(verbose: bool) -> None:
    if not any(isinstance(h, _StderrHandler) for h in log.handlers):
        h = _StderrHandler()
        h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(h)
        log.propagate = False
    log.setLevel(logging.DEBUG if verbose else logging.INFO)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(v: str) -> int:
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return n


def _nonneg(v: str) -> int:
    n = int(v)
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dfeianet", description="DFE-IANet polyp classifier (numpy).")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train on an image-folder dataset")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--epochs", type=_nonneg, default=400)
    t.add_argument("--batch-size", type=_positive, default=16)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--weight-decay", type=float, default=0.05)
    t.add_argument("--schedule", choices=["cosine", "constant"], default="cosine")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, type=Path, help="weight file to write (.dfew)")
    t.add_argument("--log", type=Path, help="append per-epoch JSON lines here")
    t.add_argument("--plot", type=Path, help="render loss/accuracy curves to this image file")

    e = sub.add_parser("eval", help="confusion matrix and metrics as JSON")
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--weights", required=True, type=Path)
    e.add_argument("--config", required=True, type=Path)
    e.add_argument("--split", choices=["test", "train"], default="test")
    e.add_argument("--seed", type=int, default=0, help="split seed (must match training)")
    e.add_argument("--batch-size", type=_positive, default=16)

    pr = sub.add_parser("predict", help="classify one image")
    pr.add_argument("--image", required=True, type=Path)
    pr.add_argument("--weights", required=True, type=Path)
    pr.add_argument("--config", required=True, type=Path)
    pr.add_argument("--topk", type=_positive, default=3)

    c = sub.add_parser("count", help="parameter and multiply-accumulate counts")
    c.add_argument("--config", type=Path, help="defaults to the built-in configuration")
    c.add_argument("--input-size", type=_positive, default=None)

    s = sub.add_parser("selftest", help="run the verification suites")
    s.add_argument("--thorough", action="store_true")
    return p


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")
    sys.stdout.flush()


def _config(path: Path | None) -> NetworkConfig:
    cfg = NetworkConfig() if path is None else NetworkConfig.from_json(path)
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    from .data import load_dataset
    from .train import train
    from .weights import save_weights

    cfg = _config(args.config)
    train_set = load_dataset(args.data, "train", args.seed)
    test_set = load_dataset(args.data, "test", args.seed)
    if len(train_set.classes) != cfg.num_classes:
        raise ConfigurationError(
            f"{args.data} has {len(train_set.classes)} classes but config num_classes={cfg.num_classes}")
    model = build(cfg, args.seed)
    log_fh = open(args.log, "a") if args.log else None
    entries = []

    def on_epoch(entry):
        entries.append(entry.to_dict())
        log.info("epoch %d train_loss %.5f test_acc %s", entry.epoch, entry.train_loss, entry.test_acc)
        if log_fh:
            log_fh.write(json.dumps(entry.to_dict()) + "\n")
            log_fh.flush()

    try:
        train(model, train_set, args.epochs, args.batch_size, args.seed, args.lr,
              args.weight_decay, args.schedule, test_set, on_epoch)
    finally:
        if log_fh:
            log_fh.close()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(model, args.out)
    if args.plot and entries:
        from .plotting import plot_training_curves
        plot_training_curves(entries, args.plot)
    _emit({"weights": str(args.out), "epochs": args.epochs,
           "train_size": len(train_set), "test_size": len(test_set),
           "final_train_loss": entries[-1]["train_loss"] if entries else None,
           "final_test_acc": entries[-1]["test_acc"] if entries else None})
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .train import evaluate
    from .weights import load_weights

    cfg = _config(args.config)
    model = load_weights(args.weights, cfg)
    ds = load_dataset(args.data, args.split, args.seed)
    _, rep = evaluate(model, ds, args.batch_size)
    _emit(rep.to_dict())
    return EXIT_OK


def cmd_predict(args) -> int:
    from . import ops
    from .data import preprocess
    from .tensor import Tensor, no_grad
    from .weights import load_weights

    cfg = _config(args.config)
    model = load_weights(args.weights, cfg)
    x = preprocess(args.image, train_mode=False, input_size=cfg.input_size)
    with no_grad():
        probs = ops.softmax(model(Tensor(x[None])), axis=-1).data[0].astype(np.float64)
    k = args.topk
    if k > cfg.num_classes:
        log.warning("--topk %d exceeds class count %d; clamped", k, cfg.num_classes)
        k = cfg.num_classes
    order = np.argsort(-probs, kind="stable")[:k]
    topk = [{"class": int(i), "prob": float(probs[i])} for i in order]
    _emit({"class": topk[0]["class"], "prob": topk[0]["prob"], "topk": topk})
    return EXIT_OK


def cmd_count(args) -> int:
    cfg = _config(args.config)
    if args.input_size is not None:
        cfg.input_size = args.input_size
        cfg.validate()
    model = build(cfg, 0)
    params, macs = count_params(model), count_flops(model)
    _emit({"params": params, "macs": macs, "params_m": params / 1e6, "macs_m": macs / 1e6,
           "macs_g": macs / 1e9, "input_size": cfg.input_size,
           "per_stage": stage_breakdown(model)})
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(args.thorough)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.assertions} assertions, {r.seconds:.1f}s", file=sys.stderr)
        for f in r.failures:
            print(f"    {f}", file=sys.stderr)
    ok = all(r.passed for r in results)
    _emit({"passed": ok, "thorough": args.thorough,
           "assertions": sum(r.assertions for r in results),
           "suites": [{"name": r.name, "passed": r.passed, "assertions": r.assertions,
                       "failures": r.failures} for r in results]})
    return EXIT_OK if ok else EXIT_SELFTEST


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "count": cmd_count, "selftest": cmd_selftest}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DfeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
