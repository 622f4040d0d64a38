"""Graph container, file ingestion, GCN adjacency normalization and SBM graphs."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, BoundsError, ParseError, ShapeError


def canonical_edges(pairs, num_nodes: Optional[int] = None) -> np.ndarray:
    """Sort each pair as (min, max) and drop duplicates. Result is (E, 2) int64."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if np.any(arr[:, 0] == arr[:, 1]):
        raise ArgumentError("self-loops are not allowed in the edge set")
    if np.any(arr < 0) or (num_nodes is not None and np.any(arr >= num_nodes)):
        raise BoundsError(f"edge endpoint outside [0, {num_nodes})")
    arr = np.sort(arr, axis=1)
    return np.unique(arr, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with node features and optional labels.

    ``edges`` stores each undirected edge once as ``(i, j)`` with ``i < j``.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ArgumentError("a graph needs at least one node")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (
            np.any(edges[:, 0] >= edges[:, 1]) or len(np.unique(edges, axis=0)) != len(edges)
        ):
            edges = canonical_edges(edges, self.num_nodes)
        if edges.size and (edges.min() < 0 or edges.max() >= self.num_nodes):
            raise BoundsError(f"edge endpoint outside [0, {self.num_nodes})")
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.num_nodes:
            raise ShapeError(f"features must be ({self.num_nodes}, F), got {x.shape}")
        y = self.labels
        if y is not None:
            y = np.asarray(y, dtype=np.int64)
            if y.shape != (self.num_nodes,):
                raise ShapeError(f"labels must have length {self.num_nodes}, got {y.shape}")
            if y.min() < 0:
                raise ArgumentError("labels must be non-negative")
        for name, value in (("edges", edges), ("features", x), ("labels", y)):
            if value is not None:
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def replace(self, *, edges=None, features=None) -> "Graph":
        return Graph(
            self.num_nodes,
            self.edges if edges is None else edges,
            self.features if features is None else features,
            self.labels,
        )

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency without self-loops."""
        n = self.num_nodes
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        a = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))
        return a.tocsr()

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
            and same_labels
        )

    __hash__ = None


@dataclass(frozen=True)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` in CSR layout."""

    matrix: sp.csr_matrix

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    n = g.num_nodes
    a_hat = g.adjacency() + sp.identity(n, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    coo = a_hat.tocoo()
    vals = inv_sqrt[coo.row] * inv_sqrt[coo.col]
    m = sp.csr_matrix((vals, (coo.row, coo.col)), shape=(n, n))
    m.sort_indices()
    return NormalizedAdjacency(m)


@dataclass(frozen=True)
class SbmSpec:
    block_sizes: Sequence[int]
    p_in: float
    p_out: float
    feature_dim: int = 16
    feature_shift: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
        if not self.block_sizes:
            raise ArgumentError("block_sizes must be non-empty")
        if any(b < 1 for b in self.block_sizes):
            raise ArgumentError("block sizes must be positive")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ArgumentError(f"need 0 <= p_out <= p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}")
        if self.feature_dim < 1:
            raise ArgumentError("feature_dim must be positive")
        if self.feature_shift < 0:
            raise ArgumentError("feature_shift must be non-negative")
        if self.seed < 0:
            raise ArgumentError("seed must be unsigned")

    @property
    def num_nodes(self) -> int:
        return sum(self.block_sizes)


def generate_sbm(spec: SbmSpec) -> Graph:
    """Planted-partition graph with Gaussian-mixture features.

    Each block gets a random mean direction scaled to ``feature_shift``; node
    features are that mean plus standard-normal noise.
    """
    rng = np.random.default_rng(spec.seed)
    labels = np.repeat(np.arange(len(spec.block_sizes)), spec.block_sizes)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], spec.p_in, spec.p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    directions = rng.standard_normal((len(spec.block_sizes), spec.feature_dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    means = spec.feature_shift * directions / np.maximum(norms, 1e-12)
    features = rng.standard_normal((n, spec.feature_dim)) + means[labels]
    return Graph(n, edges, features, labels)


# --------------------------------------------------------------------------- io


def _read_text_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line.strip()


def read_features(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(16)
    if path.suffix == ".bin" or b"\x00" in head:
        return _read_features_binary(path)
    return _read_features_text(path)


def _read_features_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ParseError(f"{path}: binary feature file shorter than its 16-byte header")
    n, f = struct.unpack("<QQ", raw[:16])
    expected = 16 + 4 * n * f
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes for {n}x{f} float32, got {len(raw)}")
    x = np.frombuffer(raw, dtype="<f4", offset=16, count=n * f)
    return x.reshape(n, f).astype(np.float64)


def _read_features_text(path) -> np.ndarray:
    lines = _read_text_lines(path)
    header = None
    for lineno, line in lines:
        if line and not line.startswith("#"):
            header = (lineno, line)
            break
    if header is None:
        raise ParseError(f"{path}:1: missing 'N F' header")
    lineno, line = header
    parts = line.split()
    try:
        n, f = int(parts[0]), int(parts[1])
        if len(parts) != 2 or n < 1 or f < 1:
            raise ValueError
    except (ValueError, IndexError):
        raise ParseError(f"{path}:{lineno}: bad header {line!r}, expected 'N F'") from None
    x = np.empty((n, f), dtype=np.float64)
    row = 0
    for lineno, line in lines:
        if not line or line.startswith("#"):
            continue
        if row >= n:
            raise ParseError(f"{path}:{lineno}: more than {n} feature rows")
        parts = line.split()
        if len(parts) != f:
            raise ParseError(f"{path}:{lineno}: expected {f} values, got {len(parts)}")
        try:
            x[row] = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric feature value") from None
        row += 1
    if row != n:
        raise ParseError(f"{path}: header promised {n} rows, found {row}")
    return x


def read_edges(path) -> list:
    pairs = []
    for lineno, line in _read_text_lines(path):
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected two node ids, got {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: node ids must be integers") from None
        if i < 0 or j < 0:
            raise ParseError(f"{path}:{lineno}: negative node id")
        if i == j:
            raise ParseError(f"{path}:{lineno}: self-loop {i} {j} is not allowed")
        pairs.append((i, j, lineno))
    return pairs


def read_labels(path) -> np.ndarray:
    out = []
    for lineno, line in _read_text_lines(path):
        if not line or line.startswith("#"):
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: label must be an integer") from None
    return np.asarray(out, dtype=np.int64)


def load_graph(edge_path, feature_path, label_path=None) -> Graph:
    x = read_features(feature_path)
    n = x.shape[0]
    pairs = read_edges(edge_path)
    for i, j, lineno in pairs:
        if i >= n or j >= n:
            raise BoundsError(f"{edge_path}:{lineno}: endpoint {max(i, j)} >= N={n}")
    edges = canonical_edges([(i, j) for i, j, _ in pairs], n)
    labels = None
    if label_path is not None:
        labels = read_labels(label_path)
        if len(labels) != n:
            raise ShapeError(f"{label_path}: {len(labels)} labels for {n} nodes")
    return Graph(n, edges, x, labels)


def write_graph(g: Graph, out_dir, binary_features: bool = False) -> dict:
    """Write the graph in the loader formats; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"edges": out / "edges.txt"}
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        fh.write(f"# {g.num_nodes} nodes, {g.num_edges} undirected edges\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")
    if binary_features:
        paths["features"] = out / "features.bin"
        with open(paths["features"], "wb") as fh:
            fh.write(struct.pack("<QQ", *g.features.shape))
            fh.write(g.features.astype("<f4").tobytes())
    else:
        paths["features"] = out / "features.txt"
        with open(paths["features"], "w", encoding="utf-8") as fh:
            fh.write(f"{g.num_nodes} {g.num_features}\n")
            for row in g.features:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    if g.labels is not None:
        paths["labels"] = out / "labels.txt"
        with open(paths["labels"], "w", encoding="utf-8") as fh:
            fh.writelines(f"{int(y)}\n" for y in g.labels)
    return paths


def dataset_paths(data_dir) -> dict:
    """Locate edge/feature/label files inside a dataset directory."""
    d = Path(data_dir)
    feats = d / "features.txt"
    if not feats.exists() and (d / "features.bin").exists():
        feats = d / "features.bin"
    paths = {"edges": d / "edges.txt", "features": feats}
    if (d / "labels.txt").exists():
        paths["labels"] = d / "labels.txt"
    for key in ("edges", "features"):
        if not os.path.exists(paths[key]):
            raise FileNotFoundError(f"{paths[key]} not found")
    return paths


def load_dataset(data_dir) -> Graph:
    p = dataset_paths(data_dir)
    return load_graph(p["edges"], p["features"], p.get("labels"))
