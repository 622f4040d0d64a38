"""Bi-level training: inner NMN steps and an outer encoder step per epoch.

``train`` alternates, every epoch, between ``inner_steps`` Adam updates of
the negative metric network with the encoder frozen and ``outer_steps``
Adam updates of the encoder with the NMN frozen. ``train_baseline`` runs the
same loop on plain InfoNCE.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import ndmath as nd
from . import objectives as obj
from .augment import AugmentConfig, make_views
from .errors import ArgumentError, NumericError, ShapeError, TrainingDiverged
from .evaluation import fn_tn_weight_sums
from .graph import Graph, normalize_adjacency
from .models import EncoderParams, NmnParams, encoder_forward, init_params, nmn_forward
from .ndmath import AdamState, Tape, adam_step

METRIC_MODES = ("nmn", "infonce", "uniform")


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one run. Defaults are the generic desk-scale profile.

    ``metric_mode`` other than ``"nmn"`` freezes the metric to a fixed matrix
    (InfoNCE-equivalent or uniform) and skips the inner phase.
    ``metric_grad_to_encoder`` lets the encoder step differentiate through
    the frozen NMN; when off, the metric is treated as a constant there.
    """

    tau: float = 0.5
    alpha: float = 0.1
    epochs: int = 100
    inner_steps: int = 3
    outer_steps: int = 1
    lr: float = 5e-4
    weight_decay: float = 0.0
    embed_dim: int = 64
    hidden_dim: int = 64
    edge_drop_ratio: float = 0.4
    feature_mask_ratio: float = 0.1
    seed: int = 0
    baseline: bool = False
    final_activation: bool = False
    metric_mode: str = "nmn"
    metric_grad_to_encoder: bool = True
    block_rows: Optional[int] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ArgumentError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0:
            raise ArgumentError(f"alpha must be non-negative, got {self.alpha}")
        if self.epochs < 0:
            raise ArgumentError("epochs must be non-negative")
        if self.metric_mode not in METRIC_MODES:
            raise ArgumentError(f"metric_mode must be one of {METRIC_MODES}, got {self.metric_mode!r}")
        if self.metric_mode == "nmn" and self.inner_steps < 1:
            raise ArgumentError("inner_steps must be positive")
        if self.inner_steps < 0 or self.outer_steps < 1:
            raise ArgumentError("inner_steps must be >= 0 and outer_steps >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ArgumentError("lr must be positive and weight_decay non-negative")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ArgumentError("dimensions must be positive")
        if self.block_rows is not None and self.block_rows < 1:
            raise ArgumentError("block_rows must be positive")
        AugmentConfig(self.edge_drop_ratio, self.feature_mask_ratio)

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.edge_drop_ratio, self.feature_mask_ratio, self.seed)

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)


# Per-dataset hyper-parameters for six benchmark graphs, plus a scaled
# synthetic profile. Every profile implies d = h = 512 except "sbm".
PROFILES = {
    "cora": dict(lr=5e-4, weight_decay=1e-3, tau=0.8, epochs=200, inner_steps=2, alpha=0.1),
    "citeseer": dict(lr=5e-4, weight_decay=5e-3, tau=0.7, epochs=50, inner_steps=3, alpha=0.1),
    "pubmed": dict(lr=5e-4, weight_decay=0.0, tau=0.5, epochs=150, inner_steps=3, alpha=0.05),
    "photo": dict(lr=1e-4, weight_decay=0.0, tau=0.5, epochs=50, inner_steps=5, alpha=0.1),
    "computers": dict(lr=5e-4, weight_decay=0.0, tau=0.4, epochs=50, inner_steps=8, alpha=0.1),
    "wikics": dict(lr=5e-4, weight_decay=0.0, tau=0.5, epochs=50, inner_steps=6, alpha=0.2),
}
for _p in PROFILES.values():
    _p.update(embed_dim=512, hidden_dim=512, edge_drop_ratio=0.4, feature_mask_ratio=0.1)
PROFILES["sbm"] = dict(lr=5e-3, weight_decay=0.0, tau=0.5, epochs=100, inner_steps=3, alpha=0.002,
                       embed_dim=64, hidden_dim=64)


def profile_config(name: Optional[str] = None, **overrides) -> TrainConfig:
    if name is None:
        return TrainConfig(**overrides)
    if name not in PROFILES:
        raise ArgumentError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return TrainConfig(**{**PROFILES[name], **overrides})


# ----------------------------------------------------------------- history

FULL_COLUMNS = (
    "epoch", "inner_before", "inner_objective", "nml_loss", "infonce_loss", "kl_reg",
    "i_nml", "i_nce", "fn_weight_sum", "tn_weight_sum", "diag_weight_sum", "encoder_loss",
    "wall_clock",
)
BASELINE_COLUMNS = ("epoch", "infonce_loss", "i_nce", "encoder_loss", "wall_clock")


@dataclass
class RunHistory:
    """Per-epoch records. ``wall_clock`` is the epoch's elapsed seconds.

    Metric-dependent values are measured after the inner phase, on that
    epoch's views; ``encoder_loss`` is the outer objective before the step.
    """

    columns: tuple = FULL_COLUMNS
    records: list = field(default_factory=list)
    checkpoint: Optional[str] = None

    def append(self, rec: dict):
        if self.records and rec["epoch"] <= self.records[-1]["epoch"]:
            raise ArgumentError("epoch indices must increase")
        self.records.append({k: rec.get(k, math.nan) for k in self.columns})

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def deterministic_rows(self) -> list:
        """Records without timing, for reproducibility comparisons."""
        return [tuple(r[k] for k in self.columns if k != "wall_clock") for r in self.records]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.records:
                w.writerow([int(r[k]) if k == "epoch" else repr(float(r[k])) for k in self.columns])

    @classmethod
    def read_csv(cls, path) -> "RunHistory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        h = cls(columns=tuple(rows[0]))
        for row in rows[1:]:
            h.records.append({k: (int(v) if k == "epoch" else float(v)) for k, v in zip(h.columns, row)})
        return h


# ----------------------------------------------------------------- helpers


def _streams(seed):
    """Independent generators for parameters and augmentation."""
    init_ss, aug_ss = np.random.SeedSequence(seed).spawn(2)
    return init_ss, np.random.default_rng(aug_ss)


def _check_dims(g: Graph, enc: EncoderParams):
    w1 = enc.arrays()["W1"]
    if w1.shape[0] != g.num_features:
        raise ShapeError(f"encoder expects {w1.shape[0]} features, graph has {g.num_features}")


def _encode(enc, view):
    return encoder_forward(enc, view.adjacency, view.graph.features)


def _grad_step(params_obj, build, state, cfg):
    """Record ``build(params_on_tape)`` on a new tape and take one Adam step."""
    tape = Tape()
    taped = params_obj.on_tape(tape)
    loss = build(taped)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    if loss.tape is not tape:
        return params_obj, value
    grads = tape.backward(loss)
    named = {leaf.name: g for leaf, g in grads.items()}
    new, _ = adam_step(params_obj.arrays(), named, state, cfg.lr, cfg.weight_decay)
    return params_obj.with_arrays(new), value


def _fixed_metric(cfg, n):
    if cfg.metric_mode == "infonce":
        return obj.infonce_equivalent_metric(n)
    return obj.uniform_metric(n)


def embed(p: EncoderParams, g: Graph) -> np.ndarray:
    """Embeddings of the unaugmented graph (nothing is recorded)."""
    _check_dims(g, p)
    plain = EncoderParams(*(p.arrays()[k] for k in EncoderParams.ARRAYS), p.activation, p.final_activation)
    return encoder_forward(plain, normalize_adjacency(g), g.features).value.copy()


# ----------------------------------------------------------------- loops


def train(g: Graph, cfg: TrainConfig, callback: Optional[Callable] = None, init=None):
    """Bi-level training. Returns ``(EncoderParams, NmnParams, RunHistory)``.

    ``callback(record, encoder, nmn)`` runs after each epoch. A non-finite
    loss raises :class:`TrainingDiverged` carrying the last finite parameters.
    """
    if cfg.baseline:
        enc, hist = train_baseline(g, cfg, callback, init)
        return enc, None, hist
    init_ss, rng = _streams(cfg.seed)
    enc, nmn = init or init_params(init_ss, g.num_features, cfg.embed_dim, cfg.hidden_dim,
                                   final_activation=cfg.final_activation)
    _check_dims(g, enc)
    hist = RunHistory(FULL_COLUMNS)
    enc_state, nmn_state = AdamState(), AdamState()
    n = g.num_nodes
    labels = g.labels
    tau, alpha = cfg.tau, cfg.alpha
    use_nmn = cfg.metric_mode == "nmn"
    fixed = None if use_nmn else nd.constant(_fixed_metric(cfg, n))

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        last_good = (enc, nmn)
        try:
            vu, vv = make_views(g, cfg.augment, rng)
            u = nd.constant(_encode(enc, vu).value)
            v = nd.constant(_encode(enc, vv).value)
            s = obj.similarity(u, v)
            rec = {"epoch": epoch}

            if use_nmn:
                before = None
                for _ in range(cfg.inner_steps):
                    def inner(p):
                        return obj.inner_objective(s, nmn_forward(p, u, v, cfg.block_rows), tau, alpha)
                    nmn, value = _grad_step(nmn, inner, nmn_state, cfg)
                    before = value if before is None else before
                rec["inner_before"] = before
                m = nmn_forward(nmn, u, v, cfg.block_rows)
            else:
                m = fixed

            report = obj.loss_report(s, m, tau, alpha)
            rec.update(nml_loss=report.nml_loss, infonce_loss=report.infonce_loss, kl_reg=report.kl_reg,
                       inner_objective=report.inner_objective, i_nml=report.i_nml, i_nce=report.i_nce)
            if labels is not None:
                rec["fn_weight_sum"], rec["tn_weight_sum"], rec["diag_weight_sum"] = fn_tn_weight_sums(
                    m.value, labels)

            frozen = NmnParams(*(nmn.arrays()[k] for k in NmnParams.ARRAYS))
            for step in range(cfg.outer_steps):
                def outer(p):
                    uu, vvv = _encode(p, vu), _encode(p, vv)
                    ss = obj.similarity(uu, vvv)
                    if not use_nmn:
                        mm = fixed
                    elif cfg.metric_grad_to_encoder:
                        mm = nmn_forward(frozen, uu, vvv, cfg.block_rows)
                    elif step == 0:
                        mm = m
                    else:
                        mm = nmn_forward(frozen, nd.constant(uu.value), nd.constant(vvv.value), cfg.block_rows)
                    return obj.inner_objective(ss, mm, tau, alpha)
                enc, value = _grad_step(enc, outer, enc_state, cfg)
                if step == 0:
                    rec["encoder_loss"] = value
        except NumericError as exc:
            raise TrainingDiverged(epoch, last_good, f"training diverged at epoch {epoch}: {exc}") from exc
        rec["wall_clock"] = time.perf_counter() - start
        hist.append(rec)
        if callback is not None:
            callback(hist.records[-1], enc, nmn)
    return enc, nmn, hist


def train_baseline(g: Graph, cfg: TrainConfig, callback: Optional[Callable] = None, init=None):
    """InfoNCE-only training with the same views and encoder initialisation as :func:`train`."""
    init_ss, rng = _streams(cfg.seed)
    enc = (init or init_params(init_ss, g.num_features, cfg.embed_dim, cfg.hidden_dim,
                               final_activation=cfg.final_activation))[0]
    _check_dims(g, enc)
    hist = RunHistory(BASELINE_COLUMNS)
    state = AdamState()
    n = g.num_nodes
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        last_good = (enc, None)
        try:
            vu, vv = make_views(g, cfg.augment, rng)
            rec = {"epoch": epoch}
            for step in range(cfg.outer_steps):
                def outer(p):
                    return obj.infonce_loss(obj.similarity(_encode(p, vu), _encode(p, vv)), cfg.tau)
                enc, value = _grad_step(enc, outer, state, cfg)
                if step == 0:
                    rec.update(infonce_loss=value, i_nce=-value + math.log(n), encoder_loss=value)
        except NumericError as exc:
            raise TrainingDiverged(epoch, last_good, f"training diverged at epoch {epoch}: {exc}") from exc
        rec["wall_clock"] = time.perf_counter() - start
        hist.append(rec)
        if callback is not None:
            callback(hist.records[-1], enc, None)
    return enc, hist
