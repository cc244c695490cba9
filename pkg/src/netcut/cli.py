"""Command-line entry point.

Exit codes: 0 success, 1 parse error or missing input, 2 runtime or format
error, 3 training halted on NaN (``prob-naive`` divergence).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, benchmark, heatmap
from .aggregation import LOG, SCHEMES, one_hot
from .architecture import random_dag, save_graph
from .compression import CutModel, Model, cut, forward_cut, load_model, save_model
from .config import RunConfig, load_config
from .errors import ConfigError, NetcutError
from .training import accuracy, predict_log, train

EXIT_PARSE, EXIT_RUNTIME, EXIT_NAN = 1, 2, 3

class ParseFailure(Exception):
    pass


def _run_one(cfg: RunConfig, out_dir: Path, seed: int, tr, te, callback=None) -> int:
    arch = cfg.build_arch(tr.dim, tr.classes)
    tcfg = replace(cfg.train, seed=seed)
    params, traj = train(arch, tr, te, tcfg, callback=callback)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out_dir / "trajectory.csv")
    heatmap.emit_heatmap(out_dir / "trajectory.csv", out_dir / "weights.svg")
    if traj.nan_epoch is not None:
        print(f"nan_halt_epoch={traj.nan_epoch}")
        return EXIT_NAN
    save_model(out_dir / "model.netcut", Model(arch, params))
    final = traj.final
    line = (f"chosen_head={int(np.argmax(final.w)) + 1} max_w={float(final.w.max())!r} "
            f"test_acc={final.test_acc!r}")
    (out_dir / "summary.txt").write_text(line + "\n")
    print(line)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    tr, te = cfg.load_data()
    out = cfg.path(cfg.out_dir)
    if not cfg.seeds:
        return _run_one(cfg, out, cfg.train.seed, tr, te)
    codes = [_run_one(cfg, out / f"seed_{s}", s, tr, te) for s in cfg.seeds]
    return max(codes)


def cmd_cut(args) -> int:
    model = _load(args.model)
    cut_model = cut(model)
    save_model(args.output, cut_model)
    print(f"params_before={model.count()} params_after={cut_model.count()} "
          f"chosen_head={cut_model.chosen + 1} depth={cut_model.depth}")
    return 0


def cmd_eval(args) -> int:
    model = _load(args.model)
    cfg = _config(args.config)
    tr, te = cfg.load_data()
    ds = tr if args.split == "train" or te is None else te
    if isinstance(model, CutModel):
        out = forward_cut(model, ds.features)
    else:
        out = predict_log(model.arch, model.params, ds.features, args.scheme)
    print(f"accuracy={accuracy(out, ds.labels)!r} samples={len(ds)}")
    return 0


def cmd_bench(args) -> int:
    if args.model:
        rows = [benchmark.bench_model(cut(_load(p)), args.batch, args.repeats, args.warmup)
                for p in args.model]
        report = benchmark.BenchReport(rows)
        if len({r.depth for r in rows}) >= 2:
            benchmark.fit_line(report)
    else:
        lo, _, hi = args.depths.partition("-")
        depths = range(int(lo), int(hi) + 1) if hi else [int(d) for d in lo.split(",")]
        report = benchmark.depth_sweep(args.width, depths, args.batch, args.repeats, args.warmup)
    report.to_csv(args.output)
    print(f"slope_ns={report.slope!r} intercept_ns={report.intercept!r} r2={report.r2!r}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args.config)
    tr, te = cfg.load_data()
    n = min(args.batch, len(tr))
    x, y = tr.features[:n], one_hot(tr.labels[:n], tr.classes)
    arch = cfg.build_arch(tr.dim, tr.classes)
    epochs = [int(e) for e in args.epochs.split(",")]
    rec = analysis.GradientRecorder(arch, x, y, epochs, args.selector, cfg.train.scheme, cfg.train.beta)
    train(arch, tr, te, cfg.train, callback=rec)
    paths = rec.report.write(cfg.path(cfg.out_dir) / "analysis")
    for s in rec.report.snapshots:
        print(f"epoch={s.epoch} decomposition_error={s.decomposition_error!r}")
    print(f"wrote {len(paths)} files")
    return 0


def cmd_gen_graph(args) -> int:
    arch = random_dag(args.nodes, args.prob, args.seed, width=args.width)
    save_graph(args.output, arch)
    return 0


def cmd_heatmap(args) -> int:
    heatmap.emit_heatmap(_existing(args.trajectory), args.output)
    return 0


def _existing(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ParseFailure(f"no such file: {path}")
    return path


def _config(path) -> RunConfig:
    try:
        return load_config(_existing(path))
    except ConfigError as exc:
        raise ParseFailure(str(exc)) from exc


def _load(path):
    return load_model(_existing(path))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netcut", description="Multi-head depth selection and cutting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a multi-head model from a config file")
    s.add_argument("config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("cut", help="cut a trained model to its chosen head")
    s.add_argument("model")
    s.add_argument("output")
    s.set_defaults(func=cmd_cut)

    s = sub.add_parser("eval", help="accuracy of a model on a config's dataset")
    s.add_argument("model")
    s.add_argument("config")
    s.add_argument("--split", choices=("train", "test"), default="test")
    s.add_argument("--scheme", choices=SCHEMES, default=LOG)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="single-thread latency benchmark")
    s.add_argument("output")
    s.add_argument("--model", action="append", help="model file(s); omit for a depth sweep")
    s.add_argument("--width", type=int, default=200)
    s.add_argument("--depths", default="3-20", help="'lo-hi' or comma-separated list")
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--repeats", type=int, default=100)
    s.add_argument("--warmup", type=int, default=10)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("analyze", help="partial-gradient cosine similarities during training")
    s.add_argument("config")
    s.add_argument("--epochs", default="0,10", help="comma-separated epochs to record")
    s.add_argument("--selector", default=analysis.DEFAULT_SELECTOR)
    s.add_argument("--batch", type=int, default=128)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("gen-graph", help="write a random DAG description")
    s.add_argument("output")
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--prob", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=32)
    s.set_defaults(func=cmd_gen_graph)

    s = sub.add_parser("heatmap", help="render a trajectory CSV as an SVG heatmap")
    s.add_argument("trajectory")
    s.add_argument("output")
    s.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParseFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (NetcutError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
