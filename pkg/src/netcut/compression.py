"""Cutting a trained multi-head network down to its chosen head, and model files.

Model files use the ``NETCUT01`` container, all integers little-endian::

    8 bytes   magic "NETCUT01"
    u32       length of the description text, then that many UTF-8 bytes
    u32       tensor count
    per tensor:
      u16 name length, name bytes, u8 ndim, ndim x u32 dims,
      prod(dims) x float64 values
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from . import autodiff as ad
from .aggregation import weights
from .architecture import (CHAIN, ArchGraph, ModelParams, edge_cost, format_graph,
                           forward_blocks, head_logits, parse_graph)
from .errors import CorruptionError, FormatError

MAGIC = b"NETCUT01"


@dataclass
class Model:
    """A full multi-head network: topology plus trained parameters."""

    arch: ArchGraph
    params: ModelParams

    def count(self) -> int:
        return self.params.count()


@dataclass
class CutModel:
    arch: ArchGraph  # reduced graph, nodes relabelled 0..m-1 in original order
    params: ModelParams  # one head, on the last node
    chosen: int  # index of the kept head in the original network
    kept: tuple[int, ...]  # original ids of the kept nodes
    cost: float

    @property
    def depth(self) -> int:
        return self.arch.n_nodes

    @property
    def head(self) -> tuple[np.ndarray, np.ndarray]:
        return self.params.heads[-1]

    def count(self) -> int:
        return self.params.count()

    def forward(self, x) -> np.ndarray:
        return forward_cut(self, x)


AnyModel = Union[Model, CutModel]


def chosen_head(params: ModelParams) -> int:
    """``argmax_k w_k``; ``np.argmax`` already breaks ties toward the smallest index."""
    return int(np.argmax(weights(params.u)))


def cut(model: AnyModel) -> CutModel:
    """Keep the argmax-weight head, its node and that node's ancestors."""
    if isinstance(model, CutModel):
        return CutModel(model.arch, model.params.copy(), model.chosen, model.kept, model.cost)
    arch, params = model.arch, model.params
    l = chosen_head(params)
    kept = tuple(sorted(arch.ancestors(l) | {l}))
    remap = {old: new for new, old in enumerate(kept)}
    edges = tuple((remap[i], remap[j]) for i, j in arch.edges if j in remap)
    reduced = ArchGraph(len(kept), edges, arch.width, arch.in_dim, arch.classes, kind=arch.kind)
    W, b = params.heads[l]
    new_params = ModelParams(
        [(params.blocks[k][0].copy(), params.blocks[k][1].copy()) for k in kept],
        [None] * (len(kept) - 1) + [(W.copy(), b.copy())],
    )
    cost = float(l + 1) if arch.kind == CHAIN else float(edge_cost(arch, l))
    return CutModel(reduced, new_params, l, kept, cost)


def forward_cut(model: CutModel, batch) -> np.ndarray:
    """Log-probabilities of the single retained head."""
    hidden = forward_blocks(model.arch, model.params, batch)
    return ad.log_softmax(head_logits(model.params, model.arch.n_nodes - 1, hidden[-1]))


# -- serialization --------------------------------------------------------------

def _tensors(model: AnyModel) -> dict[str, np.ndarray]:
    return model.params.named()


def _describe(model: AnyModel) -> str:
    arch = model.arch
    lines = [f"model {'cut' if isinstance(model, CutModel) else 'full'}",
             f"in_dim {arch.in_dim}", f"classes {arch.classes}"]
    if isinstance(model, CutModel):
        lines += [f"chosen {model.chosen}", "kept " + " ".join(map(str, model.kept)),
                  f"cost {model.cost!r}"]
    return "\n".join(lines) + "\n" + format_graph(arch)


def save_model(path, model: AnyModel) -> None:
    desc = _describe(model).encode()
    out = [MAGIC, struct.pack("<I", len(desc)), desc]
    tensors = _tensors(model)
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CorruptionError(f"file truncated at byte {len(self.raw)} (needed {self.pos + n})")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> AnyModel:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {MAGIC!r}")
    r = _Reader(raw)
    r.take(len(MAGIC))
    (desc_len,) = r.unpack("<I")
    try:
        desc = r.take(desc_len).decode()
    except UnicodeDecodeError as exc:
        raise CorruptionError(f"{path}: description is not UTF-8") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - r.pos} trailing bytes")

    meta, graph_lines = {}, []
    for line in desc.splitlines():
        key, _, value = line.partition(" ")
        if key in ("model", "in_dim", "classes", "chosen", "kept", "cost"):
            meta[key] = value
        else:
            graph_lines.append(line)
    try:
        arch = parse_graph("\n".join(graph_lines), int(meta["in_dim"]), int(meta["classes"]))
        n = arch.n_nodes
        blocks = [(tensors[f"block{k}.W"], tensors[f"block{k}.b"]) for k in range(n)]
        heads = [(tensors[f"head{k}.W"], tensors[f"head{k}.b"]) if f"head{k}.W" in tensors else None
                 for k in range(n)]
    except (KeyError, ValueError) as exc:
        raise CorruptionError(f"{path}: incomplete model description ({exc})") from exc
    params = ModelParams(blocks, heads, tensors.get("u", np.zeros(0)))
    if meta.get("model") == "cut":
        kept = tuple(int(v) for v in meta["kept"].split())
        return CutModel(arch, params, int(meta["chosen"]), kept, float(meta["cost"]))
    if meta.get("model") != "full":
        raise FormatError(f"{path}: unknown model type {meta.get('model')!r}")
    return Model(arch, params)
