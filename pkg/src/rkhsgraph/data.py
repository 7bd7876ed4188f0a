"""TU Dortmund dataset parsing, vertex-label encoding and stratified folds."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Raised for malformed or unsupported dataset files."""


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected vertex-labelled graph with 0-based vertex indices.

    ``edges`` holds each unordered pair once as ``(low, high)``, sorted.
    Use :meth:`from_edges` to build one from raw (possibly duplicated or
    directed) pairs.
    """

    vertex_count: int
    edges: tuple[tuple[int, int], ...]
    vertex_labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.vertex_count < 1:
            raise ValueError("graph needs at least one vertex")
        if len(self.vertex_labels) != self.vertex_count:
            raise ValueError(
                f"{len(self.vertex_labels)} vertex labels for {self.vertex_count} vertices"
            )
        if any(lab < 0 for lab in self.vertex_labels):
            raise ValueError("vertex labels must be non-negative")
        prev = None
        for u, v in self.edges:
            if not 0 <= u < v < self.vertex_count:
                raise ValueError(f"bad edge ({u}, {v}) for {self.vertex_count} vertices")
            if prev is not None and (u, v) <= prev:
                raise ValueError("edges must be sorted and unique")
            prev = (u, v)

    @classmethod
    def from_edges(
        cls, vertex_count: int, pairs: Iterable[tuple[int, int]], vertex_labels: Sequence[int]
    ) -> "LabeledGraph":
        """Normalize raw pairs: collapse both directions, drop self-loops."""
        norm = set()
        loops = 0
        for u, v in pairs:
            u, v = int(u), int(v)
            if not (0 <= u < vertex_count and 0 <= v < vertex_count):
                raise ValueError(f"edge ({u}, {v}) references unknown vertex")
            if u == v:
                loops += 1
                continue
            norm.add((min(u, v), max(u, v)))
        if loops:
            log.warning("dropped %d self-loop(s)", loops)
        return cls(vertex_count, tuple(sorted(norm)), tuple(int(x) for x in vertex_labels))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency matrix."""
        n = self.vertex_count
        if not self.edges:
            return sp.csr_matrix((n, n), dtype=np.float64)
        e = np.asarray(self.edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(len(rows), dtype=np.float64)
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def neighbors(self, v: int) -> list[int]:
        return [b if a == v else a for a, b in self.edges if v in (a, b)]

    def permuted(self, perm: Sequence[int]) -> "LabeledGraph":
        """Relabel vertices: old vertex ``i`` becomes ``perm[i]``."""
        labels = [0] * self.vertex_count
        for old, new in enumerate(perm):
            labels[new] = self.vertex_labels[old]
        pairs = [(perm[u], perm[v]) for u, v in self.edges]
        return LabeledGraph.from_edges(self.vertex_count, pairs, labels)


@dataclass(frozen=True)
class DatasetBundle:
    graphs: tuple[LabeledGraph, ...]
    class_labels: tuple[int, ...]
    alphabet_size: int
    name: str = ""
    # raw file values, kept so that a written bundle re-parses identically
    raw_class_values: tuple[int, ...] = (0, 1)
    raw_vertex_values: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.graphs) != len(self.class_labels):
            raise ValueError("graphs and class_labels differ in length")
        if any(c not in (0, 1) for c in self.class_labels):
            raise ValueError("class labels must be 0 or 1")
        if self.alphabet_size < 1:
            raise ValueError("alphabet_size must be positive")
        for g in self.graphs:
            if max(g.vertex_labels) >= self.alphabet_size:
                raise ValueError("vertex label outside alphabet")

    def __len__(self) -> int:
        return len(self.graphs)

    def subset(self, indices: Sequence[int]) -> "DatasetBundle":
        return DatasetBundle(
            tuple(self.graphs[i] for i in indices),
            tuple(self.class_labels[i] for i in indices),
            self.alphabet_size,
            self.name,
            self.raw_class_values,
            self.raw_vertex_values,
        )


def _read_ints(path: Path, per_line: int) -> list[list[int]]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    out = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != per_line:
                raise DatasetError(f"{path.name}:{lineno}: expected {per_line} value(s), got {line!r}")
            try:
                out.append([int(p) for p in parts])
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: non-integer token in {line!r}") from None
    return out


def parse_tu_dataset(directory: str | Path, name: str) -> DatasetBundle:
    """Read ``<name>_A.txt`` and friends from ``directory``.

    ``directory`` may also be the parent of a ``<name>/`` folder, the layout
    of the unpacked TU archives. Node attribute and edge label files are
    ignored. Graph labels are remapped by ascending raw value to {0, 1};
    node labels to a dense 0-based alphabet.
    """
    d = Path(directory)
    if not (d / f"{name}_A.txt").exists() and (d / name / f"{name}_A.txt").exists():
        d = d / name
    edges = _read_ints(d / f"{name}_A.txt", 2)
    indicator = [r[0] for r in _read_ints(d / f"{name}_graph_indicator.txt", 1)]
    graph_raw = [r[0] for r in _read_ints(d / f"{name}_graph_labels.txt", 1)]
    node_raw = [r[0] for r in _read_ints(d / f"{name}_node_labels.txt", 1)]

    n_nodes = len(indicator)
    if len(node_raw) != n_nodes:
        raise DatasetError(f"{len(node_raw)} node labels for {n_nodes} nodes")
    n_graphs = len(graph_raw)
    if n_graphs == 0:
        raise DatasetError("dataset has no graphs")
    if any(not 1 <= g <= n_graphs for g in indicator):
        raise DatasetError("graph indicator references an unknown graph id")
    if any(b < a for a, b in zip(indicator, indicator[1:])):
        raise DatasetError("graph indicator is not sorted by graph id")

    class_values = sorted(set(graph_raw))
    if len(class_values) > 2:
        raise DatasetError(f"expected binary graph labels, found {len(class_values)} distinct values")
    class_map = {v: i for i, v in enumerate(class_values)}

    vertex_values = sorted(set(node_raw))
    vertex_map = {v: i for i, v in enumerate(vertex_values)}

    # first global node id (0-based) of every graph
    starts = [0] * (n_graphs + 1)
    for g in indicator:
        starts[g] += 1
    for i in range(n_graphs):
        starts[i + 1] += starts[i]
    counts = [starts[i + 1] - starts[i] for i in range(n_graphs)]
    if any(c == 0 for c in counts):
        raise DatasetError("graph without vertices")

    per_graph: list[list[tuple[int, int]]] = [[] for _ in range(n_graphs)]
    for a, b in edges:
        if not (1 <= a <= n_nodes and 1 <= b <= n_nodes):
            raise DatasetError(f"edge ({a}, {b}) references unknown vertex")
        ga, gb = indicator[a - 1] - 1, indicator[b - 1] - 1
        if ga != gb:
            raise DatasetError(f"edge ({a}, {b}) crosses graphs")
        per_graph[ga].append((a - 1 - starts[ga], b - 1 - starts[ga]))

    graphs = []
    for gi in range(n_graphs):
        labels = [vertex_map[x] for x in node_raw[starts[gi]:starts[gi + 1]]]
        graphs.append(LabeledGraph.from_edges(counts[gi], per_graph[gi], labels))

    return DatasetBundle(
        tuple(graphs),
        tuple(class_map[v] for v in graph_raw),
        len(vertex_values),
        name,
        tuple(class_values) if len(class_values) == 2 else (0, 1),
        tuple(vertex_values),
    )


def write_tu_dataset(bundle: DatasetBundle, directory: str | Path, name: str | None = None) -> Path:
    """Write ``bundle`` in TU format (both edge directions, 1-based ids)."""
    name = name or bundle.name
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    vertex_values = bundle.raw_vertex_values or tuple(range(bundle.alphabet_size))
    a_lines, ind_lines, node_lines = [], [], []
    offset = 0
    for gi, g in enumerate(bundle.graphs, 1):
        for u, v in g.edges:
            a_lines.append(f"{u + offset + 1}, {v + offset + 1}")
            a_lines.append(f"{v + offset + 1}, {u + offset + 1}")
        ind_lines.extend([str(gi)] * g.vertex_count)
        node_lines.extend(str(vertex_values[x]) for x in g.vertex_labels)
        offset += g.vertex_count
    graph_lines = [str(bundle.raw_class_values[c]) for c in bundle.class_labels]
    for suffix, lines in (
        ("A", a_lines),
        ("graph_indicator", ind_lines),
        ("graph_labels", graph_lines),
        ("node_labels", node_lines),
    ):
        (d / f"{name}_{suffix}.txt").write_text("".join(line + "\n" for line in lines))
    return d


def one_hot(graph: LabeledGraph, alphabet_size: int) -> np.ndarray:
    labels = np.asarray(graph.vertex_labels, dtype=np.int64)
    if labels.max() >= alphabet_size:
        raise ValueError(f"vertex label {labels.max()} outside alphabet of size {alphabet_size}")
    out = np.zeros((graph.vertex_count, alphabet_size), dtype=np.float64)
    out[np.arange(graph.vertex_count), labels] = 1.0
    return out


@dataclass(frozen=True)
class DatasetStats:
    name: str
    n: int
    mean_vertices: float
    mean_edges: float
    class_counts: tuple[int, int]


def dataset_stats(bundle: DatasetBundle) -> DatasetStats:
    if len(bundle) == 0:
        raise ValueError("empty dataset")
    n = len(bundle)
    nv = sum(g.vertex_count for g in bundle.graphs)
    ne = sum(g.edge_count for g in bundle.graphs)
    c1 = sum(bundle.class_labels)
    return DatasetStats(bundle.name, n, nv / n, ne / n, (n - c1, c1))


STATS_HEADER = ("dataset", "n_graphs", "mean_vertices", "mean_edges", "n_class0", "n_class1")


def stats_csv(stats: Iterable[DatasetStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for s in stats:
        w.writerow([s.name, s.n, f"{s.mean_vertices:.2f}", f"{s.mean_edges:.2f}", *s.class_counts])
    return buf.getvalue()


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    test_fold_of: tuple[int, ...]
    validation_fold_of: tuple[int, ...]

    def test_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.test_fold_of) if f == fold]

    def validation_indices(self, fold: int) -> list[int]:
        v = self.validation_fold_of[fold]
        return [i for i, f in enumerate(self.test_fold_of) if f == v]

    def training_indices(self, fold: int) -> list[int]:
        """Non-test indices excluding the validation fold."""
        v = self.validation_fold_of[fold]
        return [i for i, f in enumerate(self.test_fold_of) if f not in (fold, v)]

    def non_test_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.test_fold_of) if f != fold]


def stratified_folds(class_labels: Sequence[int], k: int, seed: int) -> FoldAssignment:
    """Shuffle each class, then deal its members round-robin over the folds.

    The dealing position carries over from one class to the next so fold
    sizes differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    labels = np.asarray(class_labels)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < k:
            raise ValueError(f"class {c} has {len(members)} members, fewer than k={k}")
        members = rng.permutation(members)
        fold_of[members] = (pos + np.arange(len(members))) % k
        pos = (pos + len(members)) % k
    validation = []
    for t in range(k):
        others = [f for f in range(k) if f != t]
        validation.append(int(others[rng.integers(len(others))]))
    return FoldAssignment(k, tuple(int(f) for f in fold_of), tuple(validation))
