"""Single-thread inference latency measurements and the depth/latency fit."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .architecture import build_chain, init_params
from .compression import Model, cut
from .errors import ConfigError


@dataclass
class LatencyStats:
    depth: int
    batch: int
    repeats: int
    warmup: int
    median_ns: float
    iqr_ns: float


@dataclass
class BenchReport:
    rows: list[LatencyStats] = field(default_factory=list)
    slope: float = float("nan")
    intercept: float = float("nan")
    r2: float = float("nan")

    def median(self, depth: int) -> float:
        return next(r.median_ns for r in self.rows if r.depth == depth)

    def to_csv(self, path) -> None:
        lines = ["depth,batch,median_ns,iqr_ns"]
        lines += [f"{r.depth},{r.batch},{r.median_ns!r},{r.iqr_ns!r}" for r in self.rows]
        lines.append(f"fit,{self.slope!r},{self.intercept!r},{self.r2!r}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def _forward(model):
    if hasattr(model, "forward"):
        return model.forward
    return model


def _time_interleaved(forwards, x, repeats: int, warmup: int) -> np.ndarray:
    """Round-robin timing so slow drift of the machine hits every model alike."""
    samples = np.empty((len(forwards), repeats))
    with threadpool_limits(limits=1):
        for fwd in forwards:
            for _ in range(warmup):
                fwd(x)
        for i in range(repeats):
            for j, fwd in enumerate(forwards):
                t0 = time.perf_counter_ns()
                fwd(x)
                samples[j, i] = time.perf_counter_ns() - t0
    return samples


def _stats(model, samples, batch, warmup) -> LatencyStats:
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    depth = getattr(model, "depth", model.arch.n_nodes)
    return LatencyStats(depth, batch, samples.size, warmup, float(med), float(q3 - q1))


def bench_model(model, batch_size: int = 1, repeats: int = 30, warmup: int = 5,
                seed: int = 0) -> LatencyStats:
    """Median and IQR of ``repeats`` timed forwards on one fixed random batch."""
    if repeats < 30 or warmup < 5:
        raise ConfigError("need repeats >= 30 and warmup >= 5")
    x = np.random.default_rng(seed).uniform(0, 1, size=(batch_size, model.arch.in_dim))
    samples = _time_interleaved([_forward(model)], x, repeats, warmup)
    return _stats(model, samples[0], batch_size, warmup)


def random_chain_model(depth: int, width: int, classes: int = 10, in_dim=None, seed: int = 0):
    """Single-head chain of ``depth`` blocks with random parameters."""
    arch = build_chain(depth, width, in_dim or width, classes)
    params = init_params(arch, np.random.default_rng(seed))
    params.u[-1] = 1.0
    return cut(Model(arch, params))


def depth_sweep(width: int, depths, batch: int = 1, repeats: int = 30, warmup: int = 5,
                classes: int = 10, seed: int = 0) -> BenchReport:
    """Bench random chains of each depth and fit ``latency = slope * depth + intercept``."""
    depths = list(depths)
    if len(depths) < 3:
        raise ConfigError("depth_sweep needs at least 3 depths")
    if repeats < 30 or warmup < 5:
        raise ConfigError("need repeats >= 30 and warmup >= 5")
    models = [random_chain_model(d, width, classes, seed=seed) for d in depths]
    x = np.random.default_rng(seed).uniform(0, 1, size=(batch, width))
    samples = _time_interleaved([_forward(m) for m in models], x, repeats, warmup)
    report = BenchReport([_stats(m, s, batch, warmup) for m, s in zip(models, samples)])
    return fit_line(report)


def fit_line(report: BenchReport) -> BenchReport:
    """Least-squares ``median_ns = slope * depth + intercept`` over the report's rows."""
    fit = stats.linregress([r.depth for r in report.rows], [r.median_ns for r in report.rows])
    report.slope, report.intercept = float(fit.slope), float(fit.intercept)
    report.r2 = float(fit.rvalue) ** 2
    return report
