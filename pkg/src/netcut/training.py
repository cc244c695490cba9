"""Joint Adam training of block parameters and head weights."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .aggregation import (LOG, PROB_NAIVE, SCHEMES, HeadWeights, aggregate,
                          class_loss, one_hot, time_reg, total_loss, weights)
from .architecture import (ArchGraph, ModelParams, bind, forward_all_heads,
                           head_costs, init_params)
from .data import Dataset, batches
from .errors import ConfigError, FormatError, NonFiniteError, NumericInputError

logger = logging.getLogger(__name__)

INIT_SCHEMES = ("uniform", "first", "last")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    head_lr: Optional[float] = None  # None means "same as learning_rate"
    beta: float = 0.0
    scheme: str = LOG
    init: str = "uniform"
    init_kappa: float = 10.0
    init_scale: float = 1.0
    seed: int = 0
    single_head: Optional[int] = None  # train one fixed head as a plain baseline

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or (self.head_lr is not None and self.head_lr <= 0):
            raise ConfigError("learning rates must be positive")
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown aggregation scheme {self.scheme!r}")
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme {self.init!r}")
        if self.init_kappa < 0 or self.init_scale <= 0:
            raise ConfigError("init_kappa must be >= 0 and init_scale > 0")

    @property
    def effective_head_lr(self) -> float:
        return self.learning_rate if self.head_lr is None else self.head_lr


def init_head_weights(scheme: str, n: int, kappa: float = 10.0) -> HeadWeights:
    """Logits for uniform weights, or ``kappa`` on the first or last head."""
    if n < 1:
        raise ConfigError("need at least one head")
    u = np.zeros(n)
    if scheme == "first":
        u[0] = kappa
    elif scheme == "last":
        u[-1] = kappa
    elif scheme != "uniform":
        raise ConfigError(f"unknown init scheme {scheme!r}")
    return HeadWeights(u)


class Adam:
    """Bias-corrected Adam over a dict of named arrays, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, lr_overrides=None,
                 b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = {name: lr for name in params}
        self.lr.update({k: v for k, v in (lr_overrides or {}).items() if k in params})
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """Apply one update; raises NonFiniteError (and changes nothing) on bad gradients."""
        bad = [k for k in self.params if k in grads and not np.all(np.isfinite(grads[k]))]
        if bad:
            raise NonFiniteError(f"non-finite gradient in {len(bad)} tensor(s), first {bad[0]}; "
                                 "step aborted")
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= self.lr[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def adam_step(state: Adam, grads: dict[str, np.ndarray], lr: Optional[float] = None) -> None:
    if lr is not None:
        state.lr = {k: lr for k in state.lr}
    state.step(grads)


# -- objective ------------------------------------------------------------------

def model_loss(arch: ArchGraph, params: ModelParams, x, y: np.ndarray, *, scheme: str = LOG,
               beta: float = 0.0, costs=None, single_head: Optional[int] = None,
               keep_head: Optional[int] = None):
    """Total loss of a (possibly tape-bound) model on one batch.

    ``keep_head`` puts a stop-gradient on every head output except that one,
    which turns the full gradient into the partial gradient of a single head.
    """
    lps = forward_all_heads(arch, params, x, logits=scheme == PROB_NAIVE)
    if single_head is not None:
        z = lps[single_head]
        return class_loss(y, ad.log_softmax(z) if scheme == PROB_NAIVE else z)
    if keep_head is not None:
        lps = [lp if k == keep_head else ad.stop_gradient(lp) for k, lp in enumerate(lps)]
    w = weights(params.u)
    agg = aggregate(scheme, w, lps, lps) if scheme == PROB_NAIVE else aggregate(scheme, w, lps)
    costs = head_costs(arch) if costs is None else costs
    return total_loss(class_loss(y, agg), time_reg(w, costs), beta)


def loss_and_grads(arch, params, x, y, **kw) -> tuple[float, dict[str, np.ndarray]]:
    tape = ad.Tape()
    loss = model_loss(arch, bind(tape, params), x, y, **kw)
    grads = tape.backward(loss)
    return float(loss.value), grads


def predict_log(arch: ArchGraph, params: ModelParams, x: np.ndarray, scheme: str = LOG) -> np.ndarray:
    """Aggregated log-outputs of the multi-head model (numpy path)."""
    if scheme == PROB_NAIVE:
        zs = forward_all_heads(arch, params, x, logits=True)
        return aggregate(scheme, weights(params.u), [], zs).values
    return aggregate(scheme, weights(params.u), forward_all_heads(arch, params, x)).values


def accuracy(log_out: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(log_out, axis=1) == labels))


# -- trajectory -----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    w: np.ndarray
    ce: np.ndarray


@dataclass
class TrajectoryLog:
    records: list[EpochRecord] = field(default_factory=list)
    nan_epoch: Optional[int] = None
    header: dict = field(default_factory=dict)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def w_matrix(self) -> np.ndarray:
        """Epochs x heads array of weight snapshots."""
        return np.array([r.w for r in self.records])

    def to_csv(self, path) -> None:
        n = self.records[0].w.size if self.records else 0
        with open(path, "w", newline="") as f:
            for k, v in self.header.items():
                f.write(f"# {k}={v}\n")
            if self.nan_epoch is not None:
                f.write(f"# nan_halt_epoch={self.nan_epoch}\n")
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "train_acc", "test_acc"]
                            + [f"w_{k + 1}" for k in range(n)] + [f"ce_{k + 1}" for k in range(n)])
            for r in self.records:
                writer.writerow([r.epoch] + [repr(float(v)) for v in
                                             (r.train_loss, r.train_acc, r.test_acc, *r.w, *r.ce)])

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        header, rows, nan_epoch = {}, [], None
        with open(path, newline="") as f:
            lines = f.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key == "nan_halt_epoch":
                    nan_epoch = int(value)
                else:
                    header[key] = value
            elif line.strip():
                body.append(line)
        if not body:
            raise FormatError(f"{path}: no CSV header row")
        reader = csv.reader(body)
        cols = next(reader)
        n = sum(1 for c in cols if c.startswith("w_"))
        if cols[:4] != ["epoch", "train_loss", "train_acc", "test_acc"] or len(cols) != 4 + 2 * n:
            raise FormatError(f"{path}: unexpected columns {cols}")
        for row in reader:
            vals = [float(v) for v in row]
            rows.append(EpochRecord(int(vals[0]), vals[1], vals[2], vals[3],
                                    np.array(vals[4:4 + n]), np.array(vals[4 + n:])))
        return cls(rows, nan_epoch, header)


# -- training loop --------------------------------------------------------------

def _epoch_record(epoch, arch, params, train_ds, test_ds, y_train, cfg, loss) -> EpochRecord:
    lps = forward_all_heads(arch, params, train_ds.features)
    ce = np.array([float(class_loss(y_train, lp)) for lp in lps])
    if cfg.single_head is not None:
        w = np.zeros(arch.n_nodes)
        w[cfg.single_head] = 1.0
        train_acc = accuracy(lps[cfg.single_head], train_ds.labels)
        test_acc = (accuracy(forward_all_heads(arch, params, test_ds.features)[cfg.single_head],
                             test_ds.labels) if test_ds is not None else math.nan)
    else:
        w = weights(params.u)
        with np.errstate(invalid="ignore"):
            train_acc = accuracy(predict_log(arch, params, train_ds.features, cfg.scheme), train_ds.labels)
            test_acc = (accuracy(predict_log(arch, params, test_ds.features, cfg.scheme), test_ds.labels)
                        if test_ds is not None else math.nan)
    return EpochRecord(epoch, loss, train_acc, test_acc, w, ce)


def train(arch: ArchGraph, train_ds: Dataset, test_ds: Optional[Dataset], cfg: TrainConfig,
          params: Optional[ModelParams] = None,
          callback: Optional[Callable[[int, ModelParams], None]] = None,
          ) -> tuple[ModelParams, TrajectoryLog]:
    """Train blocks, heads and head weights jointly against the total loss.

    ``callback(epoch, params)`` runs before the first epoch (epoch 0) and after
    every completed epoch.  Under ``prob-naive`` a non-finite loss or gradient
    halts training and is recorded in ``log.nan_epoch``; under the other
    schemes it raises :class:`NonFiniteError`.
    """
    if train_ds.dim != arch.in_dim or train_ds.classes != arch.classes:
        raise ConfigError(f"dataset (d={train_ds.dim}, C={train_ds.classes}) does not match "
                          f"architecture (in_dim={arch.in_dim}, classes={arch.classes})")
    if cfg.single_head is not None and not 0 <= cfg.single_head < arch.n_nodes:
        raise ConfigError(f"single_head {cfg.single_head} out of range")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        u0 = init_head_weights(cfg.init, arch.n_nodes, cfg.init_kappa).u
        params = init_params(arch, rng, cfg.init_scale, u=u0)
    named = params.named()
    if cfg.single_head is not None:
        named.pop("u", None)
    opt = Adam(named, cfg.learning_rate, {"u": cfg.effective_head_lr})
    costs = head_costs(arch)
    y_train = one_hot(train_ds.labels, arch.classes)
    header = {k: v for k, v in asdict(cfg).items()}
    header["head_lr"] = cfg.effective_head_lr
    log = TrajectoryLog(header=header)
    if callback:
        callback(0, params)

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        halted = False
        for idx in batches(len(train_ds), cfg.batch_size, [cfg.seed, epoch]):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = loss_and_grads(
                        arch, params, train_ds.features[idx], y_train[idx], scheme=cfg.scheme,
                        beta=cfg.beta, costs=costs, single_head=cfg.single_head)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"loss became {loss}")
                opt.step(grads)
            except (NonFiniteError, NumericInputError) as exc:
                if cfg.scheme != PROB_NAIVE:
                    raise NonFiniteError(f"epoch {epoch}: {exc}") from exc
                logger.warning("epoch %d: %s; halting", epoch, exc)
                halted = True
                losses.append(math.nan)
                break
            losses.append(loss)
        log.records.append(_epoch_record(epoch, arch, params, train_ds, test_ds, y_train, cfg,
                                         float(np.mean(losses))))
        if halted:
            log.nan_epoch = epoch
            break
        if callback:
            callback(epoch, params)
    return params, log
