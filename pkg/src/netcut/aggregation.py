"""Head-weight simplex, output aggregation schemes and the NetCut objective.

The head weights are ``w = softmax(u)`` for unconstrained logits ``u``, which
keeps ``w`` on the probability simplex exactly.

Two ways of merging head outputs are provided.  ``aggregate_log`` takes the
w-weighted sum of per-head log-probabilities (a weighted geometric mean in
probability space); its class mass sums to at most one and reaches one only
when a single head carries all the weight, which is what drives the weights
to collapse.  ``aggregate_prob`` is the plain mixture of probabilities used as
the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, LabelError

LOG = "log"
PROB = "prob"
PROB_NAIVE = "prob-naive"
SCHEMES = (LOG, PROB, PROB_NAIVE)


@dataclass
class HeadWeights:
    u: np.ndarray

    @property
    def w(self) -> np.ndarray:
        return weights(self.u)

    @property
    def n(self) -> int:
        return self.u.shape[0]


@dataclass
class AggregatedOutput:
    log_o: object  # Var or ndarray, batch x classes
    scheme: str

    @property
    def values(self) -> np.ndarray:
        return self.log_o.value if isinstance(self.log_o, ad.Var) else self.log_o


def weights(u):
    """Softmax of the head logits; differentiable when ``u`` is a ``Var``."""
    if isinstance(u, HeadWeights):
        u = u.u
    uv = u.value if isinstance(u, ad.Var) else np.asarray(u)
    if uv.ndim != 1 or uv.size < 1:
        raise DimensionError(f"head logits must be a non-empty vector, got shape {uv.shape}")
    return ad.softmax(u)


def _check_heads(w, heads: Sequence) -> None:
    wv = w.value if isinstance(w, ad.Var) else np.asarray(w)
    if len(heads) != wv.shape[0]:
        raise DimensionError(f"{len(heads)} heads but {wv.shape[0]} weights")
    shapes = {(h.value if isinstance(h, ad.Var) else np.asarray(h)).shape for h in heads}
    if len(shapes) != 1:
        raise DimensionError(f"head outputs have differing shapes {sorted(shapes)}")


def aggregate_log(w, head_logprobs: Sequence) -> AggregatedOutput:
    """``log_o = sum_k w_k log o_k``, computed without leaving log space."""
    _check_heads(w, head_logprobs)
    acc = None
    for k, lp in enumerate(head_logprobs):
        term = ad.scale(lp, ad.index(w, k))
        acc = term if acc is None else ad.add(acc, term)
    return AggregatedOutput(acc, LOG)


def aggregate_prob(w, heads: Sequence, naive: bool = False) -> AggregatedOutput:
    """Log of the probability mixture ``sum_k w_k o_k``.

    In the default mode ``heads`` are log-probabilities and the mixture is
    taken with a max-shifted log-sum-exp.  With ``naive=True`` ``heads`` are
    raw logits pushed through an unshifted softmax, so large logits overflow
    into NaN exactly like a textbook softmax pipeline would.
    """
    _check_heads(w, heads)
    if not naive:
        return AggregatedOutput(ad.weighted_logsumexp(w, ad.stack(heads)), PROB)
    mix = None
    for k, z in enumerate(heads):
        term = ad.scale(ad.naive_softmax(z), ad.index(w, k))
        mix = term if mix is None else ad.add(mix, term)
    return AggregatedOutput(ad.log(mix), PROB_NAIVE)


def aggregate(scheme: str, w, head_logprobs: Sequence, head_logits: Sequence = ()) -> AggregatedOutput:
    if scheme == LOG:
        return aggregate_log(w, head_logprobs)
    if scheme == PROB:
        return aggregate_prob(w, head_logprobs)
    if scheme == PROB_NAIVE:
        return aggregate_prob(w, head_logits, naive=True)
    raise ConfigError(f"unknown aggregation scheme {scheme!r}")


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _check_one_hot(y: np.ndarray) -> None:
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise LabelError("targets must be one-hot rows")


def class_loss(y: np.ndarray, agg) -> object:
    """Batch-mean cross-entropy ``-sum_i y_i log o_i``."""
    y = np.asarray(y, dtype=np.float64)
    log_o = agg.log_o if isinstance(agg, AggregatedOutput) else agg
    lv = log_o.value if isinstance(log_o, ad.Var) else np.asarray(log_o)
    if y.shape != lv.shape:
        raise DimensionError(f"targets {y.shape} and outputs {lv.shape} differ in shape")
    _check_one_hot(y)
    # masking rather than multiplying keeps -inf at non-target classes out of the sum
    picked = ad.mask(log_o, y.astype(bool))
    return ad.scale(ad.total(picked), -1.0 / y.shape[0])


def time_reg(w, costs) -> object:
    """Expected inference cost ``sum_k w_k cost_k``."""
    costs = np.asarray(costs, dtype=np.float64)
    wv = w.value if isinstance(w, ad.Var) else np.asarray(w)
    if wv.shape != costs.shape:
        raise DimensionError(f"{wv.shape[0]} weights but {costs.shape[0]} costs")
    return ad.dot(w, costs)


def total_loss(class_term, reg_term, beta: float) -> object:
    if beta < 0:
        raise ConfigError(f"beta must be non-negative, got {beta}")
    return ad.add(class_term, ad.scale(reg_term, beta))
