"""Chain and DAG topologies of dense blocks with one classifier head per block.

Node ids are 0-based and every edge ``(i, j)`` satisfies ``i < j``, so node
order is a topological order.  Node 0 consumes the input sample; every other
node consumes the sum of its predecessors' block outputs, which is why all
blocks share one width.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, FormatError

CHAIN = "chain"
DAG = "dag"


@dataclass(frozen=True)
class ArchGraph:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    width: int
    in_dim: int
    classes: int
    kind: str = DAG

    def __post_init__(self):
        for name in ("n_nodes", "width", "in_dim", "classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kind not in (CHAIN, DAG):
            raise ConfigError(f"unknown graph kind {self.kind!r}")
        edges = tuple(sorted(set((int(i), int(j)) for i, j in self.edges)))
        for i, j in edges:
            if not (0 <= i < j < self.n_nodes):
                raise ConfigError(f"edge ({i}, {j}) violates 0 <= i < j < {self.n_nodes}")
        object.__setattr__(self, "edges", edges)
        unreachable = set(range(self.n_nodes)) - self.descendants(0) - {0}
        if unreachable:
            raise ConfigError(f"nodes {sorted(unreachable)} are unreachable from the input node")

    @cached_property
    def predecessors(self) -> tuple[tuple[int, ...], ...]:
        preds: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            preds[j].append(i)
        return tuple(tuple(p) for p in preds)

    def descendants(self, k: int) -> set[int]:
        out: set[int] = set()
        frontier = [k]
        while frontier:
            node = frontier.pop()
            for i, j in self.edges:
                if i == node and j not in out:
                    out.add(j)
                    frontier.append(j)
        return out

    def ancestors(self, k: int) -> set[int]:
        self._check_node(k)
        out: set[int] = set()
        frontier = [k]
        while frontier:
            for p in self.predecessors[frontier.pop()]:
                if p not in out:
                    out.add(p)
                    frontier.append(p)
        return out

    def depth(self, k: int) -> int:
        """Number of blocks on the longest input-to-``k`` path."""
        self._check_node(k)
        d = [1] * self.n_nodes
        for j in range(1, k + 1):
            if self.predecessors[j]:
                d[j] = 1 + max(d[p] for p in self.predecessors[j])
        return d[k]

    def _check_node(self, k: int):
        if not (0 <= k < self.n_nodes):
            raise IndexError(f"node {k} out of range [0, {self.n_nodes})")


def build_chain(n_layers: int, width: int, in_dim: int, classes: int) -> ArchGraph:
    if min(n_layers, width, in_dim, classes) < 1:
        raise ConfigError("build_chain arguments must all be positive")
    edges = tuple((i, i + 1) for i in range(n_layers - 1))
    return ArchGraph(n_layers, edges, width, in_dim, classes, kind=CHAIN)


def random_dag(n_nodes: int, edge_prob: float, seed: int, *, width: int = 32,
               in_dim: int = 1, classes: int = 2) -> ArchGraph:
    """Erdos-Renyi DAG over a fixed node order, patched to be reachable.

    Each pair ``i < j`` gets an edge with probability ``edge_prob``; any node
    left without a predecessor is then wired to the node right before it.
    """
    if n_nodes < 1:
        raise ConfigError("n_nodes must be >= 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise ConfigError(f"edge_prob must lie in [0, 1], got {edge_prob}")
    rng = random.Random(seed)
    edges = {(i, j) for j in range(n_nodes) for i in range(j) if rng.random() < edge_prob}
    for j in range(1, n_nodes):
        if not any(t == j for _, t in edges):
            edges.add((j - 1, j))
    return ArchGraph(n_nodes, tuple(edges), width, in_dim, classes, kind=DAG)


def edge_cost(arch: ArchGraph, k: int) -> int:
    """Edges inside the subgraph spanned by ``k`` and all its ancestors."""
    keep = arch.ancestors(k) | {k}
    return sum(1 for _, j in arch.edges if j in keep)


def head_costs(arch: ArchGraph) -> np.ndarray:
    """Per-head time-regularization cost: layer index for chains, e(k) for DAGs."""
    if arch.kind == CHAIN:
        return np.arange(1, arch.n_nodes + 1, dtype=np.float64)
    return np.array([edge_cost(arch, k) for k in range(arch.n_nodes)], dtype=np.float64)


# -- graph description files -------------------------------------------------

def format_graph(arch: ArchGraph) -> str:
    lines = [f"nodes {arch.n_nodes}", f"width {arch.width}"]
    if arch.kind == CHAIN:
        lines.append("kind chain")
    lines += [f"edge {i} {j}" for i, j in arch.edges]
    return "\n".join(lines) + "\n"


def parse_graph(text: str, in_dim: int, classes: int) -> ArchGraph:
    n_nodes: Optional[int] = None
    width: Optional[int] = None
    kind = DAG
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "nodes" and len(parts) == 2:
                n_nodes = int(parts[1])
            elif parts[0] == "width" and len(parts) == 2:
                width = int(parts[1])
            elif parts[0] == "edge" and len(parts) == 3:
                edges.append((int(parts[1]), int(parts[2])))
            elif parts[0] == "kind" and len(parts) == 2:
                kind = parts[1]
            else:
                raise FormatError(f"line {lineno}: unrecognized entry {raw!r}")
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"line {lineno}: bad integer in {raw!r}") from exc
    if n_nodes is None or width is None:
        raise FormatError("graph description needs both 'nodes' and 'width' lines")
    return ArchGraph(n_nodes, tuple(edges), width, in_dim, classes, kind=kind)


def load_graph(path, in_dim: int, classes: int) -> ArchGraph:
    return parse_graph(Path(path).read_text(), in_dim, classes)


def save_graph(path, arch: ArchGraph) -> None:
    Path(path).write_text(format_graph(arch))


# -- parameters and forward pass ----------------------------------------------

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float) -> np.ndarray:
    s = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


@dataclass
class ModelParams:
    """Block and head parameters plus the head-weight logits ``u``.

    ``heads[k]`` is ``None`` for nodes whose head was removed (cut models keep
    only one).
    """

    blocks: list[tuple[np.ndarray, np.ndarray]]
    heads: list[Optional[tuple[np.ndarray, np.ndarray]]]
    u: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def named(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every parameter, in a stable order."""
        out = {}
        for k, (W, b) in enumerate(self.blocks):
            out[f"block{k}.W"] = W
            out[f"block{k}.b"] = b
        for k, head in enumerate(self.heads):
            if head is not None:
                out[f"head{k}.W"] = head[0]
                out[f"head{k}.b"] = head[1]
        if self.u.size:
            out["u"] = self.u
        return out

    def count(self) -> int:
        return int(sum(a.size for a in self.named().values()))

    def copy(self) -> "ModelParams":
        return ModelParams(
            [(W.copy(), b.copy()) for W, b in self.blocks],
            [None if h is None else (h[0].copy(), h[1].copy()) for h in self.heads],
            self.u.copy(),
        )


def init_params(arch: ArchGraph, rng: np.random.Generator, scale: float = 1.0,
                u: Optional[np.ndarray] = None) -> ModelParams:
    """Glorot-uniform weights multiplied by ``scale``; zero biases."""
    if scale <= 0:
        raise ConfigError(f"init scale must be positive, got {scale}")
    blocks, heads = [], []
    for k in range(arch.n_nodes):
        fan_in = arch.in_dim if k == 0 else arch.width
        blocks.append((_glorot(rng, fan_in, arch.width, scale), np.zeros(arch.width)))
    for k in range(arch.n_nodes):
        heads.append((_glorot(rng, arch.width, arch.classes, scale), np.zeros(arch.classes)))
    u = np.zeros(arch.n_nodes) if u is None else np.asarray(u, dtype=np.float64).copy()
    return ModelParams(blocks, heads, u)


def bind(tape: ad.Tape, params: ModelParams) -> ModelParams:
    """Mirror ``params`` as named leaves on ``tape``."""
    leaves = {name: tape.param(arr, name) for name, arr in params.named().items()}
    return ModelParams(
        [(leaves[f"block{k}.W"], leaves[f"block{k}.b"]) for k in range(len(params.blocks))],
        [None if h is None else (leaves[f"head{k}.W"], leaves[f"head{k}.b"])
         for k, h in enumerate(params.heads)],
        leaves.get("u", params.u),
    )


def forward_blocks(arch: ArchGraph, params: ModelParams, x, upto: Optional[int] = None) -> list:
    """Block outputs of nodes ``0..upto`` (all nodes by default)."""
    xv = x.value if isinstance(x, ad.Var) else np.asarray(x)
    if xv.ndim != 2 or xv.shape[1] != arch.in_dim:
        raise DimensionError(f"batch shape {xv.shape} does not match in_dim {arch.in_dim}")
    last = arch.n_nodes - 1 if upto is None else upto
    outs = []
    for k in range(last + 1):
        if k == 0:
            inp = x
        else:
            preds = arch.predecessors[k]
            inp = outs[preds[0]]
            for p in preds[1:]:
                inp = ad.add(inp, outs[p])
        W, b = params.blocks[k]
        outs.append(ad.relu(ad.add_bias(ad.matmul(inp, W), b)))
    return outs


def head_logits(params: ModelParams, k: int, h):
    W, b = params.heads[k]
    return ad.add_bias(ad.matmul(h, W), b)


def forward_all_heads(arch: ArchGraph, params: ModelParams, batch, *, logits: bool = False) -> list:
    """Log-probabilities of every head (raw logits when ``logits=True``)."""
    hidden = forward_blocks(arch, params, batch)
    out = []
    for k in range(arch.n_nodes):
        z = head_logits(params, k, hidden[k])
        out.append(z if logits else ad.log_softmax(z))
    return out
