"""Joint training of convolution weights, kernel scales and SVM coefficients.

Every epoch is one full-batch step: embed all training graphs, build the
complete Gram matrix, evaluate the regularized hinge objective, back-propagate
by hand through kernel and convolution layers, take an Adam step, and project
the kernel bandwidths/weights back onto the feasible set.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import svm
from .conv import (
    DEFAULT_HIDDEN_DIM,
    ConvLayerParams,
    ConvStack,
    GraphBatch,
    LayerCache,
    batch_backward,
    batch_forward,
    init_stack,
)
from .data import LabeledGraph
from .kernel import SIGMA_MIN, BlockedGram, CountedGram, ScaleParams, batch_gram, cross_gram

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.001
    lam: float = 0.5
    s: int = 2
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


@dataclass
class ModelParams:
    stack: ConvStack
    scales: ScaleParams
    alpha: np.ndarray
    lam: float = 0.0

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list: W, b per layer, then sigmas, betas, alpha."""
        out = []
        for layer in self.stack.layers:
            out += [layer.weight, layer.bias]
        return out + [self.scales.sigmas, self.scales.betas, self.alpha]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ModelParams":
        arrays = list(arrays)
        nl = len(self.stack.layers)
        layers = [ConvLayerParams(arrays[2 * i], arrays[2 * i + 1]) for i in range(nl)]
        sig, beta, alpha = arrays[2 * nl:]
        return ModelParams(ConvStack(layers), ScaleParams(sig, beta), np.asarray(alpha, dtype=np.float64), self.lam)

    def copy(self) -> "ModelParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


def init_params(config: TrainConfig, alphabet_size: int, n_train: int) -> ModelParams:
    """Kaiming weights, zero biases, unit kernel weights, zero alpha."""
    rng = np.random.default_rng(config.seed)
    stack = init_stack(alphabet_size, rng, config.hidden_dim)
    return ModelParams(stack, ScaleParams.initial(config.s), np.zeros(n_train), config.lam)


@dataclass
class ForwardResult:
    batch: GraphBatch
    embeddings: np.ndarray  # all vertices, stacked
    caches: list[LayerCache]
    gram: CountedGram | BlockedGram
    y: np.ndarray
    objective: float
    dK: np.ndarray
    dalpha: np.ndarray

    @property
    def K(self) -> np.ndarray:
        return self.gram.K

    @property
    def sets(self) -> list[np.ndarray]:
        return self.batch.split(self.embeddings)

    def train_accuracy(self, alpha: np.ndarray) -> float:
        pred = svm.predict_many(self.K @ alpha)
        return float(np.mean(pred == (self.y > 0)))


def full_forward(
    params: ModelParams,
    graphs: Sequence[LabeledGraph] | GraphBatch,
    class_labels: Sequence[int],
    alphabet_size: int | None = None,
) -> ForwardResult:
    batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch(graphs, alphabet_size)
    if len(params.alpha) != len(batch):
        raise ValueError(f"alpha has {len(params.alpha)} entries for {len(batch)} graphs")
    Z, caches = batch_forward(batch, params.stack)
    classes = batch.vertex_classes(len(params.stack.layers))
    gram = batch_gram(Z, batch.offsets, params.scales, classes)
    y = svm.signed_labels(class_labels)
    obj, dK, dalpha = svm.objective_grad(gram.K, params.alpha, y, params.lam)
    return ForwardResult(batch, Z, caches, gram, y, obj, dK, dalpha)


def backward(params: ModelParams, fwd: ForwardResult) -> list[np.ndarray]:
    """Gradients of the objective, in the order of :meth:`ModelParams.arrays`.

    ``dK`` carries both the hinge and the ``alpha' K alpha`` paths.
    """
    dZ, dsig, dbeta = fwd.gram.backward(fwd.dK)
    layer_grads = batch_backward(fwd.batch, params.stack, fwd.caches, dZ)
    out = []
    for dW, db in layer_grads:
        out += [dW, db]
    return out + [dsig, dbeta, fwd.dalpha]


@dataclass
class AdamState:
    learning_rate: float
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams, learning_rate: float) -> "AdamState":
        arrs = params.arrays()
        return cls(learning_rate, [np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs])


def adam_step(state: AdamState, params: ModelParams, grads: Sequence[np.ndarray]) -> tuple[AdamState, ModelParams]:
    arrs = params.arrays()
    if len(grads) != len(arrs) or any(g.shape != a.shape for g, a in zip(grads, arrs)):
        raise ValueError("gradient shapes do not match parameters")
    if any(m.shape != a.shape for m, a in zip(state.first_moment, arrs)):
        raise ValueError("optimizer state shapes do not match parameters")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m_new, v_new, p_new = [], [], []
    for p, g, m, v in zip(arrs, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p_new.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        m_new.append(m)
        v_new.append(v)
    new_state = AdamState(state.learning_rate, m_new, v_new, t, b1, b2, state.eps)
    return new_state, params.with_arrays(p_new)


def project(params: ModelParams) -> ModelParams:
    """Clamp betas at 0 and sigmas at SIGMA_MIN; everything else is untouched."""
    sig = np.maximum(params.scales.sigmas, SIGMA_MIN)
    beta = np.maximum(params.scales.betas, 0.0)
    return ModelParams(params.stack, ScaleParams(sig, beta), params.alpha, params.lam)


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    train_accuracy: float


EpochCallback = Callable[[int, ModelParams, ForwardResult], None]


def train(
    config: TrainConfig,
    train_graphs: Sequence[LabeledGraph],
    train_labels: Sequence[int],
    alphabet_size: int,
    history: list[EpochRecord] | None = None,
    on_step: EpochCallback | None = None,
) -> ModelParams:
    """Run ``config.epochs`` full-batch projected Adam steps.

    ``history`` receives the objective and training accuracy measured at the
    start of each epoch. ``on_step`` is called with the projected parameters
    after every update.
    """
    labels = np.asarray(train_labels)
    if len(labels) != len(train_graphs):
        raise ValueError("graphs and labels differ in length")
    if len(np.unique(labels)) < 2:
        raise ValueError("training set needs both classes")
    batch = GraphBatch(train_graphs, alphabet_size)
    params = init_params(config, alphabet_size, len(batch))
    state = AdamState.zeros_like(params, config.learning_rate)
    for epoch in range(config.epochs):
        fwd = full_forward(params, batch, labels)
        if history is not None:
            history.append(EpochRecord(epoch, fwd.objective, fwd.train_accuracy(params.alpha)))
        grads = backward(params, fwd)
        state, params = adam_step(state, params, grads)
        params = project(params)
        if on_step is not None:
            on_step(epoch, params, fwd)
    return params


def embed(params: ModelParams, graphs: Sequence[LabeledGraph], alphabet_size: int) -> list[np.ndarray]:
    batch = GraphBatch(graphs, alphabet_size)
    Z, _ = batch_forward(batch, params.stack)
    return batch.split(Z)


def decision_function(
    params: ModelParams, train_sets: Sequence[np.ndarray], test_graphs: Sequence[LabeledGraph], alphabet_size: int
) -> np.ndarray:
    test_sets = embed(params, test_graphs, alphabet_size)
    K = cross_gram(test_sets, train_sets, params.scales)
    return svm.decision_values(K, params.alpha)


def predict_graphs(
    params: ModelParams, train_sets: Sequence[np.ndarray], test_graphs: Sequence[LabeledGraph], alphabet_size: int
) -> np.ndarray:
    return svm.predict_many(decision_function(params, train_sets, test_graphs, alphabet_size))


def write_curve(history: Sequence[EpochRecord], path: str | Path) -> None:
    lines = ["epoch,objective,train_accuracy"]
    lines += [f"{r.epoch},{r.objective!r},{r.train_accuracy!r}" for r in history]
    Path(path).write_text("\n".join(lines) + "\n")


# -- checkpoints -----------------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    alphabet_size: int
    graphs: list[LabeledGraph]
    labels: list[int]
    meta: dict = field(default_factory=dict)

    def train_sets(self) -> list[np.ndarray]:
        return embed(self.params, self.graphs, self.alphabet_size)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Single ``.npz`` file: parameter arrays, training graphs and JSON metadata."""
    arrays = {f"param_{i}": a for i, a in enumerate(ckpt.params.arrays())}
    gs = ckpt.graphs
    arrays["graph_sizes"] = np.array([g.vertex_count for g in gs], dtype=np.int64)
    arrays["edge_counts"] = np.array([g.edge_count for g in gs], dtype=np.int64)
    arrays["edges"] = np.array([e for g in gs for e in g.edges], dtype=np.int64).reshape(-1, 2)
    arrays["vertex_labels"] = np.array([x for g in gs for x in g.vertex_labels], dtype=np.int64)
    arrays["labels"] = np.asarray(ckpt.labels, dtype=np.int64)
    meta = {
        "config": asdict(ckpt.config),
        "alphabet_size": ckpt.alphabet_size,
        "n_layers": len(ckpt.params.stack.layers),
        "lam": ckpt.params.lam,
        **ckpt.meta,
    }
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        nl = meta.pop("n_layers")
        n_arr = 2 * nl + 3
        arrs = [z[f"param_{i}"] for i in range(n_arr)]
        sizes, ecounts = z["graph_sizes"], z["edge_counts"]
        edges, vlabels, labels = z["edges"], z["vertex_labels"], z["labels"]
    layers = [ConvLayerParams(arrs[2 * i], arrs[2 * i + 1]) for i in range(nl)]
    lam = meta.pop("lam")
    params = ModelParams(ConvStack(layers), ScaleParams(arrs[-3], arrs[-2]), arrs[-1], lam)
    graphs = []
    e0 = v0 = 0
    for nv, ne in zip(sizes.tolist(), ecounts.tolist()):
        es = tuple((int(a), int(b)) for a, b in edges[e0:e0 + ne])
        graphs.append(LabeledGraph(nv, es, tuple(int(x) for x in vlabels[v0:v0 + nv])))
        e0 += ne
        v0 += nv
    config = TrainConfig(**meta.pop("config"))
    alphabet_size = meta.pop("alphabet_size")
    return Checkpoint(params, config, alphabet_size, graphs, labels.tolist(), meta)
