"""Contrastive views by edge dropping and feature masking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError
from .graph import Graph, NormalizedAdjacency, normalize_adjacency


@dataclass(frozen=True)
class AugmentConfig:
    edge_drop_ratio: float = 0.4
    feature_mask_ratio: float = 0.1
    seed: int = 0
    entrywise_mask: bool = False

    def __post_init__(self):
        for name in ("edge_drop_ratio", "feature_mask_ratio"):
            r = getattr(self, name)
            if not 0.0 <= r < 1.0:
                raise ArgumentError(f"{name} must lie in [0, 1), got {r}")


@dataclass(frozen=True)
class View:
    graph: Graph
    adjacency: NormalizedAdjacency


def _check_ratio(ratio):
    if not 0.0 <= ratio < 1.0:
        raise ArgumentError(f"ratio must lie in [0, 1), got {ratio}")


def drop_edges(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    _check_ratio(ratio)
    if ratio == 0.0 or g.num_edges == 0:
        return g
    keep = rng.random(g.num_edges) >= ratio
    return g.replace(edges=g.edges[keep])


def mask_features(g: Graph, ratio: float, rng: np.random.Generator, entrywise: bool = False) -> Graph:
    """Zero ``ceil(ratio * F)`` whole feature columns (or random entries if ``entrywise``)."""
    _check_ratio(ratio)
    if ratio == 0.0:
        return g
    x = g.features.copy()
    if entrywise:
        x[rng.random(x.shape) < ratio] = 0.0
    else:
        f = x.shape[1]
        k = math.ceil(ratio * f)
        cols = rng.choice(f, size=k, replace=False)
        x[:, cols] = 0.0
    return g.replace(features=x)


def make_view(g: Graph, cfg: AugmentConfig, rng: np.random.Generator) -> View:
    masked = mask_features(g, cfg.feature_mask_ratio, rng, cfg.entrywise_mask)
    dropped = drop_edges(masked, cfg.edge_drop_ratio, rng)
    return View(dropped, normalize_adjacency(dropped))


def make_views(g: Graph, cfg: AugmentConfig, rng: Optional[np.random.Generator] = None):
    """Two independent views, each drawn from its own child stream of ``rng``.

    Without ``rng`` the generator is seeded from ``cfg.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    ru, rv = rng.spawn(2)
    return make_view(g, cfg, ru), make_view(g, cfg, rv)
