"""Downstream evaluation and diagnostics over frozen embeddings.

Everything here is a pure function of its inputs: embeddings or a metric
matrix plus labels. Repeated calls agree bitwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score, fowlkes_mallows_score

from .errors import ArgumentError, DegenerateSplitError, ParseError, ShapeError
from .ndmath import AdamState, adam_step


def _labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ShapeError(f"labels must be a vector, got shape {y.shape}")
    return y.astype(np.int64)


def _matrix(z) -> np.ndarray:
    return np.asarray(getattr(z, "value", z), dtype=np.float64)


# ----------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        parts = (self.train, self.val, self.test)
        joined = np.concatenate(parts)
        if len(np.unique(joined)) != len(joined):
            raise ArgumentError("train/val/test index sets overlap")
        if len(joined) and joined.min() < 0:
            raise ArgumentError("negative node index in split")

    def check(self, num_nodes: int):
        for part in (self.train, self.val, self.test):
            if len(part) and part.max() >= num_nodes:
                raise ArgumentError(f"split index {part.max()} outside a graph of {num_nodes} nodes")

    @classmethod
    def random(cls, num_nodes: int, ratios=(1, 1, 8), seed: int = 0, labels=None) -> "SplitSpec":
        """Random split with the given train:val:test ratios.

        With ``labels`` the split is stratified: each class is divided in the
        same ratios and contributes at least one training node.
        """
        r = np.asarray(ratios, dtype=np.float64)
        if len(r) != 3 or np.any(r < 0) or r.sum() <= 0:
            raise ArgumentError(f"bad split ratios {ratios}")
        rng = np.random.default_rng(seed)
        if labels is None:
            groups = [rng.permutation(num_nodes)]
        else:
            y = _labels(labels)
            if len(y) != num_nodes:
                raise ShapeError(f"{len(y)} labels for {num_nodes} nodes")
            groups = [rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)]
        parts = ([], [], [])
        for idx in groups:
            n_train = int(round(len(idx) * r[0] / r.sum()))
            n_val = int(round(len(idx) * r[1] / r.sum()))
            if labels is not None and r[0] > 0:
                n_train = max(n_train, 1)
                n_val = min(n_val, len(idx) - n_train)
            for part, chunk in zip(parts, (idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:])):
                part.append(chunk)
        return cls(*(np.sort(np.concatenate(p)) for p in parts))

    @classmethod
    def from_file(cls, path) -> "SplitSpec":
        """Lines ``<node> <train|val|test>``; ``#`` starts a comment line."""
        parts = {"train": [], "val": [], "test": []}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 2 or tokens[1] not in parts:
                raise ParseError(f"{path}:{lineno}: expected '<node> train|val|test', got {line!r}")
            try:
                parts[tokens[1]].append(int(tokens[0]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: node id must be an integer") from None
        return cls(parts["train"], parts["val"], parts["test"])

    def write(self, path):
        with open(path, "w") as fh:
            for name in ("train", "val", "test"):
                for i in getattr(self, name):
                    fh.write(f"{i} {name}\n")


# ----------------------------------------------------------------- linear probe


@dataclass
class LinearProbe:
    """Multinomial logistic regression fit by full-batch Adam.

    The weights from the epoch with the best validation accuracy are kept.
    Test labels never enter :meth:`fit`; they are only seen by :meth:`score`.
    """

    lr: float = 1e-2
    epochs: int = 300
    weight_decay: float = 0.0
    W: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    best_val: float = field(default=-1.0)

    def _logits(self, x, w, b):
        return x @ w + b

    def predict(self, x) -> np.ndarray:
        return np.argmax(self._logits(_matrix(x), self.W, self.b), axis=1)

    def fit(self, z, y_train, train_idx, y_val, val_idx, num_classes: Optional[int] = None):
        z = _matrix(z)
        y_train, y_val = _labels(y_train), _labels(y_val)
        if len(np.unique(y_train)) < 2:
            raise DegenerateSplitError("training split holds a single class")
        k = num_classes or int(max(y_train.max(), y_val.max() if len(y_val) else 0)) + 1
        x_tr, x_val = z[train_idx], z[val_idx]
        onehot = np.eye(k)[y_train]
        params = {"W": np.zeros((z.shape[1], k)), "b": np.zeros((1, k))}
        state = AdamState()
        best = (-1.0, params)
        for _ in range(self.epochs):
            logits = self._logits(x_tr, params["W"], params["b"])
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            diff = (p - onehot) / len(x_tr)
            grads = {"W": x_tr.T @ diff, "b": diff.sum(axis=0, keepdims=True)}
            params, state = adam_step(params, grads, state, self.lr, self.weight_decay)
            if len(val_idx):
                acc = float(np.mean(np.argmax(self._logits(x_val, params["W"], params["b"]), 1) == y_val))
            else:
                acc = 0.0
            if acc > best[0]:
                best = (acc, params)
        self.best_val = best[0]
        self.W, self.b = best[1]["W"], best[1]["b"]
        return self

    def score(self, z, y_test, test_idx) -> float:
        if self.W is None:
            raise ArgumentError("probe is not fitted")
        y_test = _labels(y_test)
        if len(test_idx) == 0:
            raise DegenerateSplitError("empty test split")
        return 100.0 * float(np.mean(self.predict(_matrix(z)[test_idx]) == y_test))


def linear_probe(z, labels, split: SplitSpec, probe_lr: float = 1e-2, probe_epochs: int = 300) -> float:
    """Test accuracy (percent) of a logistic-regression probe on frozen ``z``."""
    z = _matrix(z)
    y = _labels(labels)
    if len(y) != z.shape[0]:
        raise ShapeError(f"{len(y)} labels for {z.shape[0]} embeddings")
    split.check(len(y))
    probe = LinearProbe(lr=probe_lr, epochs=probe_epochs)
    probe.fit(z, y[split.train], split.train, y[split.val], split.val, num_classes=int(y.max()) + 1)
    return probe.score(z, y[split.test], split.test)


# ----------------------------------------------------------------- clustering


def kmeans(z, k: int, seed: int = 0, restarts: int = 10, return_inertias: bool = False):
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by inertia."""
    z = _matrix(z)
    if k < 2:
        raise ArgumentError(f"k must be at least 2, got {k}")
    if k > z.shape[0]:
        raise ArgumentError(f"k={k} exceeds the number of points {z.shape[0]}")
    if restarts < 1:
        raise ArgumentError("restarts must be positive")
    seeds = np.random.SeedSequence(seed).generate_state(restarts)
    best, inertias = None, []
    for s in seeds:
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, random_state=int(s)).fit(z)
        inertias.append(float(km.inertia_))
        if best is None or km.inertia_ < best.inertia_:
            best = km
    labels = best.labels_.astype(np.int64)
    if return_inertias:
        return labels, float(best.inertia_), inertias
    return labels


def _pair_check(pred, truth):
    pred, truth = _labels(pred), _labels(truth)
    if len(pred) != len(truth):
        raise ShapeError(f"prediction has {len(pred)} entries, truth {len(truth)}")
    return pred, truth


def fmi(pred, truth) -> float:
    pred, truth = _pair_check(pred, truth)
    return 100.0 * float(fowlkes_mallows_score(truth, pred))


def ari(pred, truth) -> float:
    pred, truth = _pair_check(pred, truth)
    return 100.0 * float(adjusted_rand_score(truth, pred))


# ----------------------------------------------------------------- diagnostics


def fn_tn_weight_sums(m, labels):
    """Mean per-anchor metric mass on false negatives, true negatives and the diagonal.

    Returns ``(fn_sum, tn_sum, diag_sum)``; the three add up to one.
    """
    m = _matrix(m)
    y = _labels(labels)
    if m.shape != (len(y), len(y)):
        raise ShapeError(f"metric {m.shape} does not match {len(y)} labels")
    same = y[:, None] == y[None, :]
    diag = np.diag(m)
    fn = (m * same).sum(axis=1) - diag
    tn = (m * ~same).sum(axis=1)
    return float(fn.mean()), float(tn.mean()), float(diag.mean())


def _distances(z, kind):
    if kind == "cosine":
        norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
        zn = z / norms
        return 1.0 - zn @ zn.T
    if kind == "euclidean":
        sq = (z * z).sum(axis=1)
        return np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0))
    raise ArgumentError(f"unknown distance {kind!r}; choose cosine or euclidean")


def distance_ratio(z, labels, distance: str = "cosine", pooling: str = "pooled") -> float:
    """``100 * median(anchor-FN distance) / median(anchor-TN distance)``.

    ``pooled`` takes medians over all pairs; ``per_anchor`` averages per-anchor
    medians. Anchors alone in their class contribute no FN distances.
    """
    z = _matrix(z)
    y = _labels(labels)
    if len(y) != z.shape[0]:
        raise ShapeError(f"{len(y)} labels for {z.shape[0]} embeddings")
    d = _distances(z, distance)
    same = y[:, None] == y[None, :]
    off = ~np.eye(len(y), dtype=bool)
    fn_mask, tn_mask = same & off, ~same
    if not fn_mask.any() or not tn_mask.any():
        raise ArgumentError("distance ratio needs both same-label and different-label pairs")
    if pooling == "pooled":
        fn_med, tn_med = np.median(d[fn_mask]), np.median(d[tn_mask])
    elif pooling == "per_anchor":
        rows = [i for i in range(len(y)) if fn_mask[i].any() and tn_mask[i].any()]
        fn_med = float(np.mean([np.median(d[i, fn_mask[i]]) for i in rows]))
        tn_med = float(np.mean([np.median(d[i, tn_mask[i]]) for i in rows]))
    else:
        raise ArgumentError(f"unknown pooling {pooling!r}; choose pooled or per_anchor")
    if tn_med <= 0:
        return math.inf if fn_med > 0 else 100.0
    return 100.0 * float(fn_med) / float(tn_med)


@dataclass(frozen=True)
class Histograms:
    edges: np.ndarray
    fn_counts: np.ndarray
    tn_counts: np.ndarray

    def mean(self, which: str) -> float:
        counts = self.fn_counts if which == "fn" else self.tn_counts
        centers = 0.5 * (self.edges[:-1] + self.edges[1:])
        return float((counts * centers).sum() / max(counts.sum(), 1))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "fn_count", "tn_count"])
            for lo, hi, a, b in zip(self.edges[:-1], self.edges[1:], self.fn_counts, self.tn_counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(a), int(b)])


def similarity_histograms(z, labels, bins: int = 20) -> Histograms:
    """Cosine similarity of every anchor-FN and anchor-TN pair, binned on [-1, 1]."""
    if bins < 2:
        raise ArgumentError("need at least two bins")
    z = _matrix(z)
    y = _labels(labels)
    sim = 1.0 - _distances(z, "cosine")
    sim = np.clip(sim, -1.0, 1.0)
    same = y[:, None] == y[None, :]
    off = ~np.eye(len(y), dtype=bool)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    fn, _ = np.histogram(sim[same & off], bins=edges)
    tn, _ = np.histogram(sim[~same], bins=edges)
    return Histograms(edges, fn, tn)


# ----------------------------------------------------------------- report


@dataclass
class EvalReport:
    accuracy: float = math.nan
    fmi: float = math.nan
    ari: float = math.nan
    distance_ratio: float = math.nan
    fn_weight_sum: float = math.nan
    tn_weight_sum: float = math.nan
    diag_weight_sum: float = math.nan
    fn_similarity_mean: float = math.nan
    tn_similarity_mean: float = math.nan
    notes: str = ""

    def __post_init__(self):
        if not math.isnan(self.accuracy) and not 0 <= self.accuracy <= 100:
            raise ArgumentError(f"accuracy {self.accuracy} outside [0, 100]")
        if not math.isnan(self.fmi) and not 0 <= self.fmi <= 100 + 1e-9:
            raise ArgumentError(f"fmi {self.fmi} outside [0, 100]")
        if not math.isnan(self.ari) and not -100 - 1e-9 <= self.ari <= 100 + 1e-9:
            raise ArgumentError(f"ari {self.ari} outside [-100, 100]")

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            lines.append(f"{key} = {value!r}" if isinstance(value, str) else f"{key} = {float(value)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            values[key] = raw.strip("'\"") if key == "notes" else float(raw)
        return cls(**values)


def evaluate_embeddings(z, labels, split: Optional[SplitSpec] = None, metric=None, seed: int = 0,
                        k: Optional[int] = None, restarts: int = 10, probe_lr: float = 1e-2,
                        probe_epochs: int = 300, bins: int = 20):
    """Probe, clustering and diagnostics in one pass; returns ``(EvalReport, Histograms)``."""
    z = _matrix(z)
    y = _labels(labels)
    if split is None:
        split = SplitSpec.random(len(y), seed=seed, labels=y)
    report = EvalReport()
    report.accuracy = linear_probe(z, y, split, probe_lr, probe_epochs)
    k = k or len(np.unique(y))
    pred = kmeans(z, k, seed=seed, restarts=restarts)
    report.fmi, report.ari = fmi(pred, y), ari(pred, y)
    report.distance_ratio = distance_ratio(z, y)
    hist = similarity_histograms(z, y, bins)
    report.fn_similarity_mean, report.tn_similarity_mean = hist.mean("fn"), hist.mean("tn")
    if metric is not None:
        report.fn_weight_sum, report.tn_weight_sum, report.diag_weight_sum = fn_tn_weight_sums(metric, y)
    report.__post_init__()
    return report, hist
