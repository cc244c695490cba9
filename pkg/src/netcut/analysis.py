"""Per-head partial gradients and their cosine similarities.

The partial gradient of head ``l`` is the gradient of the total loss with
every other head's output wrapped in a stop-gradient.  Because the loss
reaches block and head parameters only through the head outputs, the partial
gradients of all heads sum to the ordinary gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .aggregation import LOG
from .architecture import ArchGraph, ModelParams
from .errors import ConfigError, DegenerateVectorError
from .training import loss_and_grads

DEFAULT_SELECTOR = "block0.W"


def _grad(arch, params, x, y, selector, keep_head, scheme, beta) -> np.ndarray:
    if selector not in params.named() or selector == "u":
        # u feeds the loss directly, not through head outputs, so partials do not decompose it
        raise ConfigError(f"unknown parameter selector {selector!r}; expect a block or head tensor")
    _, grads = loss_and_grads(arch, params, x, y, scheme=scheme, beta=beta, keep_head=keep_head)
    return grads[selector].ravel().copy()


def full_gradient(arch: ArchGraph, params: ModelParams, x, y, selector: str = DEFAULT_SELECTOR,
                  *, scheme: str = LOG, beta: float = 0.0) -> np.ndarray:
    return _grad(arch, params, x, y, selector, None, scheme, beta)


def partial_gradient(arch: ArchGraph, params: ModelParams, x, y, l: int,
                     selector: str = DEFAULT_SELECTOR, *, scheme: str = LOG,
                     beta: float = 0.0) -> np.ndarray:
    """Flat gradient w.r.t. ``selector`` flowing only through head ``l``."""
    if not 0 <= l < arch.n_nodes:
        raise ConfigError(f"head {l} out of range")
    return _grad(arch, params, x, y, selector, l, scheme, beta)


def cosine_similarity(v, u) -> float:
    v = np.asarray(v, dtype=np.float64).ravel()
    u = np.asarray(u, dtype=np.float64).ravel()
    nv, nu = np.linalg.norm(v), np.linalg.norm(u)
    if nv == 0 or nu == 0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(v @ u / (nv * nu), -1.0, 1.0))


def _rho(v, u) -> float:
    try:
        return cosine_similarity(v, u)
    except DegenerateVectorError:
        return math.nan


@dataclass
class GradientSnapshot:
    epoch: int
    rho_full: np.ndarray  # n, NaN marks a gap
    rho_matrix: np.ndarray  # n x n, NaN marks a gap
    decomposition_error: float


@dataclass
class GradientReport:
    selector: str = DEFAULT_SELECTOR
    note: str = "single fixed batch"
    snapshots: list[GradientSnapshot] = field(default_factory=list)

    def rho_csv(self) -> str:
        n = self.snapshots[0].rho_full.size if self.snapshots else 0
        lines = [f"# selector={self.selector}", f"# batch={self.note}",
                 ",".join(["epoch"] + [f"rho_{k + 1}" for k in range(n)])]
        for s in self.snapshots:
            lines.append(",".join([str(s.epoch)] + [_cell(v) for v in s.rho_full]))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list:
        from pathlib import Path
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / "rho_full.csv"]
        paths[0].write_text(self.rho_csv())
        for s in self.snapshots:
            p = out_dir / f"rho_matrix_epoch{s.epoch}.csv"
            p.write_text(matrix_csv(s.rho_matrix))
            paths.append(p)
        return paths


def _cell(v: float) -> str:
    return "gap" if math.isnan(v) else repr(float(v))


def matrix_csv(matrix: np.ndarray) -> str:
    n = matrix.shape[0]
    lines = [",".join(["head"] + [str(k + 1) for k in range(n)])]
    for i in range(n):
        lines.append(",".join([str(i + 1)] + [_cell(v) for v in matrix[i]]))
    return "\n".join(lines) + "\n"


def parse_matrix_csv(text: str) -> np.ndarray:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    return np.array([[math.nan if c == "gap" else float(c) for c in r[1:]] for r in rows])


def gradient_report(arch: ArchGraph, params: ModelParams, x, y, selector: str = DEFAULT_SELECTOR,
                    epoch: int = 0, *, scheme: str = LOG, beta: float = 0.0) -> GradientSnapshot:
    full = full_gradient(arch, params, x, y, selector, scheme=scheme, beta=beta)
    partials = [partial_gradient(arch, params, x, y, k, selector, scheme=scheme, beta=beta)
                for k in range(arch.n_nodes)]
    n = arch.n_nodes
    matrix = np.full((n, n), math.nan)
    for i in range(n):
        for j in range(i, n):
            matrix[i, j] = matrix[j, i] = _rho(partials[i], partials[j])
    rho_full = np.array([_rho(p, full) for p in partials])
    err = np.linalg.norm(np.sum(partials, axis=0) - full) / max(np.linalg.norm(full), 1e-30)
    return GradientSnapshot(epoch, rho_full, matrix, float(err))


class GradientRecorder:
    """Training callback that snapshots gradient similarities at chosen epochs."""

    def __init__(self, arch, x, y, epochs_to_record: Iterable[int], selector: str = DEFAULT_SELECTOR,
                 scheme: str = LOG, beta: float = 0.0, note: Optional[str] = None):
        self.arch, self.x, self.y = arch, x, y
        self.epochs = set(epochs_to_record)
        self.scheme, self.beta = scheme, beta
        self.report = GradientReport(selector, note or f"single fixed batch of {len(x)} samples")

    def __call__(self, epoch: int, params: ModelParams) -> None:
        if epoch in self.epochs:
            self.report.snapshots.append(gradient_report(
                self.arch, params, self.x, self.y, self.report.selector, epoch,
                scheme=self.scheme, beta=self.beta))
