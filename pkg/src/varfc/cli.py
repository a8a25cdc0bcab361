"""``varfc`` command line: training, sweeps, codec tools, serving and reports.

Exit codes: 0 ok, 2 config error, 3 model/format error, 4 network error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .autoencoder import LambdaRangeError
from .bitstream import BitstreamError
from .data import generate, load_dataset, make_splits, save_dataset
from .edge_cloud import EdgeClient, NetworkError, ProtocolError, serve
from .files import decode_file, encode_file
from .fwt import FormatError
from .model import VariableRateModel
from .train import ConfigError, TrainConfig, fit, format_config, load_config, parse_config

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_NETWORK = 0, 2, 3, 4

log = logging.getLogger("varfc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _eval_set(args):
    if getattr(args, "data", None):
        return load_dataset(args.data)
    _, test = make_splits(args.seed, 0, args.n_eval)
    return test


def _image(args) -> np.ndarray:
    ds = _eval_set(args)
    if not 0 <= args.index < len(ds):
        raise ConfigError(f"--index {args.index} outside [0, {len(ds)})")
    return ds.images[args.index]


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands --------------------------------------------------------------
def cmd_dataset_gen(args):
    if args.split:
        train, test = make_splits(args.seed, args.n_train, args.n_test)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(out / "train.fwt", train)
        save_dataset(out / "test.fwt", test)
        print(f"wrote {len(train)} train / {len(test)} test images to {out}")
    else:
        ds = generate(args.n, args.seed)
        save_dataset(args.out, ds)
        print(f"wrote {len(ds)} images to {args.out}")


def cmd_train(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    if args.epochs is not None:
        overrides.append(f"epochs = {args.epochs}")
    if overrides:
        cfg = parse_config("\n".join(o.replace("=", " = ", 1) for o in overrides), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    train, test = make_splits(cfg.seed, cfg.n_train, cfg.n_test)
    res = fit(cfg, train, test, out)
    res.model.save(out / "model.fwt")
    print(res.log_csv(), end="")


def cmd_sweep(args):
    model = VariableRateModel.load(args.model)
    if not model.compression:
        raise ConfigError("sweep needs a model with the compression path")
    lambdas = _floats(args.lambdas) if args.lambdas else bench.default_lambda_grid(args.points)
    res = bench.sweep(model, _eval_set(args), lambdas, model_id=str(args.model))
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _emit(res.csv(), args.out)


def cmd_bd(args):
    a = bench.RACurve.from_points(bench.read_sweep_csv(Path(args.a).read_text()))
    b = bench.RACurve.from_points(bench.read_sweep_csv(Path(args.b).read_text()))
    try:
        d = bench.delta_accuracy(a, b, n=args.trapezoid)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print(f"{d:.6f}")


def cmd_encode(args):
    model = VariableRateModel.load(args.model)
    size = encode_file(model, _image(args), args.lam, args.out)
    _, h, w = model.spec.input_shape
    print(f"{args.out}: {size} bytes, {8 * size / (h * w):.4f} bpp")


def cmd_decode(args):
    model = VariableRateModel.load(args.model)
    r = decode_file(model, args.input)
    print(f"class {r.label}")
    print("probs " + " ".join(f"{p:.6f}" for p in r.probs))


def cmd_serve(args):
    serve(args.addr, args.model, ready=lambda srv: print(f"listening on {srv.address}", flush=True))


def cmd_infer(args):
    model = VariableRateModel.load(args.model)
    ds = _eval_set(args)
    stop = min(len(ds), args.index + args.count)
    print("index,label,predicted,bpp,wire_bytes,classifier_ms,compression_ms,encoding_ms,server_us")
    with EdgeClient(model, args.addr) as client:
        for i in range(args.index, stop):
            r = client.infer(ds.images[i], args.lam)
            t = r.timing
            print(f"{i},{ds.labels[i]},{r.label},{r.bpp:.4f},{r.wire_bytes},{t.classifier_ms:.3f},"
                  f"{t.compression_ms:.3f},{t.encoding_ms:.3f},{r.decode_us + r.task_us}")


def cmd_bench_latency(args):
    timings = {}
    if args.model:
        for path in args.model:
            model = VariableRateModel.load(path)
            timings[model.config_k] = bench.measure_latency(model, lam=args.lam, n_warmup=args.warmup,
                                                            n_runs=args.runs)
    else:
        for k in (int(v) for v in _floats(args.configs)):
            model = VariableRateModel(k, seed=args.seed)
            timings[k] = bench.measure_latency(model, lam=args.lam, n_warmup=args.warmup, n_runs=args.runs)
    _emit(bench.bench_csv(timings), args.out)


def cmd_report(args):
    curves = {}
    for path in args.sweep:
        pts = bench.read_sweep_csv(Path(path).read_text())
        if not pts:
            raise ConfigError(f"{path} holds no sweep points")
        curves.setdefault(pts[0].config_k, []).extend(pts)
    curves = {k: bench.RACurve.from_points(v) for k, v in curves.items()}
    timings = bench.read_bench_csv(Path(args.bench).read_text()) if args.bench else {}
    paths = bench.report(curves, timings, args.out)
    sys.stdout.write(paths["summary.csv"].read_text())
    for p in paths.values():
        print(f"wrote {p}", file=sys.stderr)


# -- parser -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="varfc", description="Variable-rate split classifier with learned feature compression.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def eval_args(sp):
        sp.add_argument("--data", help="dataset file from dataset-gen (default: generate the test split)")
        sp.add_argument("--seed", type=int, default=0, help="dataset seed when generating (default 0)")
        sp.add_argument("--n-eval", type=int, default=2000, help="generated test images (default 2000)")

    sp = sub.add_parser("dataset-gen", help="write the synthetic dataset as FWT1 + labels")
    sp.add_argument("--out", required=True, help="output file, or directory with --split")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n", type=int, default=2000, help="image count without --split")
    sp.add_argument("--split", action="store_true", help="write train.fwt and test.fwt")
    sp.add_argument("--n-train", type=int, default=8000)
    sp.add_argument("--n-test", type=int, default=2000)
    sp.set_defaults(func=cmd_dataset_gen)

    sp = sub.add_parser("train", help="joint variable-rate training")
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True, help="run directory (model.fwt, train_log.csv, config.txt)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="rate-accuracy sweep over lambda with real coding")
    sp.add_argument("--model", required=True)
    sp.add_argument("--lambdas", help="comma-separated lambdas (default: log-spaced grid)")
    sp.add_argument("--points", type=int, default=12, help="grid size when --lambdas is absent")
    sp.add_argument("--out", help="CSV path (default stdout)")
    eval_args(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bd", help="Delta-accuracy of sweep A over sweep B")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--trapezoid", type=int, metavar="N", help="N-point trapezoid instead of exact integration")
    sp.set_defaults(func=cmd_bd)

    sp = sub.add_parser("encode", help="encode one image to a .vfcb file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--index", type=int, default=0, help="image index in the evaluation set")
    sp.add_argument("--out", required=True)
    eval_args(sp)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="classify a .vfcb file")
    sp.add_argument("--model", required=True)
    sp.add_argument("input")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("serve", help="run the cloud server")
    sp.add_argument("--model", required=True)
    sp.add_argument("--addr", default="127.0.0.1:7878", help="host:port (default 127.0.0.1:7878)")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("infer", help="edge client: classify images through a cloud server")
    sp.add_argument("--model", required=True)
    sp.add_argument("--addr", default="127.0.0.1:7878")
    sp.add_argument("--lambda", dest="lam", type=float, default=0.01)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--count", type=int, default=1)
    eval_args(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("bench-latency", help="median edge timings per Config.k")
    sp.add_argument("--model", action="append", help="trained model file (repeatable)")
    sp.add_argument("--configs", default="1,2,3", help="untrained configs to time when no --model is given")
    sp.add_argument("--lambda", dest="lam", type=float, default=0.01)
    sp.add_argument("--warmup", type=int, default=10)
    sp.add_argument("--runs", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_bench_latency)

    sp = sub.add_parser("report", help="CSV + SVG report from sweep and latency CSVs")
    sp.add_argument("--sweep", action="append", required=True, help="sweep CSV (repeatable, one per config)")
    sp.add_argument("--bench", help="bench-latency CSV")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, LambdaRangeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NetworkError, ProtocolError) as e:
        print(f"network error: {e}", file=sys.stderr)
        return EXIT_NETWORK
    except (FormatError, BitstreamError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"model/format error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except KeyboardInterrupt:
        return EXIT_OK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
