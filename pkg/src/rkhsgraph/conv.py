"""Sum-aggregation message-passing layers: ReLU(W [h_v, sum_{w~v} h_w] + b)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .data import LabeledGraph, one_hot

DEFAULT_HIDDEN_DIM = 25


@dataclass
class ConvLayerParams:
    weight: np.ndarray  # (out_dim, 2 * in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[1] % 2:
            raise ValueError(f"weight must have an even column count, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must equal the weight row count")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1] // 2

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class ConvStack:
    layers: list[ConvLayerParams]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("stack needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.in_dim != a.out_dim:
                raise ValueError("layer input dim does not match previous output dim")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def hidden_dim(self) -> int:
        return self.layers[-1].out_dim


def kaiming_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """He-normal draw with fan-in ``cols``."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return rng.normal(0.0, np.sqrt(2.0 / cols), size=(rows, cols))


def init_stack(
    alphabet_size: int, rng: np.random.Generator, hidden_dim: int = DEFAULT_HIDDEN_DIM, n_layers: int = 2
) -> ConvStack:
    layers = []
    in_dim = alphabet_size
    for _ in range(n_layers):
        layers.append(ConvLayerParams(kaiming_init(hidden_dim, 2 * in_dim, rng), np.zeros(hidden_dim)))
        in_dim = hidden_dim
    return ConvStack(layers)


def message(graph: LabeledGraph, H: np.ndarray, v: int) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.shape[0] != graph.vertex_count:
        raise ValueError("embedding row count differs from vertex count")
    if not 0 <= v < graph.vertex_count:
        raise IndexError(f"vertex {v} out of range")
    out = np.zeros(H.shape[1])
    for w in graph.neighbors(v):
        out += H[w]
    return out


@dataclass
class LayerCache:
    """What the backward pass needs from one layer's forward pass."""

    concat: np.ndarray  # (N, 2 * in_dim)
    pre: np.ndarray  # (N, out_dim), before ReLU


def _layer(adj: sp.spmatrix, H: np.ndarray, params: ConvLayerParams) -> tuple[np.ndarray, LayerCache]:
    if H.shape[1] != params.in_dim:
        raise ValueError(f"input dim {H.shape[1]} != layer input dim {params.in_dim}")
    concat = np.hstack([H, adj @ H])
    pre = concat @ params.weight.T + params.bias
    return np.maximum(pre, 0.0), LayerCache(concat, pre)


def layer_forward(graph: LabeledGraph, H_in: np.ndarray, params: ConvLayerParams) -> np.ndarray:
    H_in = np.asarray(H_in, dtype=np.float64)
    if H_in.shape[0] != graph.vertex_count:
        raise ValueError("embedding row count differs from vertex count")
    return _layer(graph.adjacency(), H_in, params)[0]


def stack_forward(graph: LabeledGraph, stack: ConvStack, alphabet_size: int) -> np.ndarray:
    """Embedding set of ``graph``: one row per vertex, ``hidden_dim`` columns."""
    if stack.input_dim != alphabet_size:
        raise ValueError(f"stack expects alphabet size {stack.input_dim}, got {alphabet_size}")
    H = one_hot(graph, alphabet_size)
    adj = graph.adjacency()
    for layer in stack.layers:
        H = _layer(adj, H, layer)[0]
    return H


class GraphBatch:
    """Disjoint union of graphs: block-diagonal adjacency plus vertex offsets."""

    def __init__(self, graphs: Sequence[LabeledGraph], alphabet_size: int):
        if not graphs:
            raise ValueError("empty batch")
        self.graphs = list(graphs)
        self.alphabet_size = alphabet_size
        sizes = np.array([g.vertex_count for g in graphs], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.graph_of = np.repeat(np.arange(len(graphs)), sizes)
        self.adj = sp.block_diag([g.adjacency() for g in graphs], format="csr")
        self.features = np.vstack([one_hot(g, alphabet_size) for g in graphs])
        self._classes: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def vertex_total(self) -> int:
        return int(self.offsets[-1])

    def vertex_classes(self, rounds: int) -> np.ndarray:
        """Colour refinement over ``rounds`` steps, starting from vertex labels.

        Vertices with equal colours receive identical embeddings from a stack
        of ``rounds`` layers, whatever the layer parameters.
        """
        if rounds not in self._classes:
            colour = np.concatenate([g.vertex_labels for g in self.graphs]).astype(np.int64)
            indptr, indices = self.adj.indptr, self.adj.indices
            for _ in range(rounds):
                palette: dict[tuple, int] = {}
                nxt = np.empty_like(colour)
                for v in range(len(colour)):
                    key = (colour[v], tuple(sorted(colour[indices[indptr[v]:indptr[v + 1]]].tolist())))
                    nxt[v] = palette.setdefault(key, len(palette))
                colour = nxt
            self._classes[rounds] = colour
        return self._classes[rounds]

    def split(self, Z: np.ndarray) -> list[np.ndarray]:
        return [Z[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def batch_forward(batch: GraphBatch, stack: ConvStack) -> tuple[np.ndarray, list[LayerCache]]:
    """Stacked embeddings for every vertex of the batch, with caches."""
    if stack.input_dim != batch.alphabet_size:
        raise ValueError(f"stack expects alphabet size {stack.input_dim}, got {batch.alphabet_size}")
    H = batch.features
    caches = []
    for layer in stack.layers:
        H, cache = _layer(batch.adj, H, layer)
        caches.append(cache)
    return H, caches


def batch_backward(
    batch: GraphBatch, stack: ConvStack, caches: list[LayerCache], dZ: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients (dW, db) per layer given dObjective/dEmbeddings.

    ReLU subgradient at exactly zero is taken as 0.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    dH = dZ
    for layer, cache in zip(reversed(stack.layers), reversed(caches)):
        dpre = dH * (cache.pre > 0)
        grads.append((dpre.T @ cache.concat, dpre.sum(axis=0)))
        dconcat = dpre @ layer.weight
        d = layer.in_dim
        # adjacency is symmetric, so the message transpose is the message itself
        dH = dconcat[:, :d] + batch.adj @ dconcat[:, d:]
    grads.reverse()
    return grads
