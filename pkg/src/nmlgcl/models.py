"""Two-layer GCN encoder, the negative metric network, and parameter checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import ndmath as nd
from .errors import ParseError, ShapeError
from .ndmath import Tape, Tensor

ACTIVATIONS = ("relu", "identity")


def _act(kind: str, t: Tensor) -> Tensor:
    if kind == "relu":
        return nd.relu(t)
    if kind == "identity":
        return t
    raise ValueError(f"unknown activation {kind!r}; choose from {ACTIVATIONS}")


@dataclass(frozen=True)
class EncoderParams:
    """GCN weights. ``W1`` is F x d, ``W2`` is d x d.

    Weights are plain arrays, or tape leaves after :meth:`on_tape`.
    """

    W1: object
    W2: object
    activation: str = "relu"
    final_activation: bool = False

    ARRAYS = ("W1", "W2")

    def arrays(self) -> dict:
        return {k: _value(getattr(self, k)) for k in self.ARRAYS}

    def on_tape(self, tape: Tape) -> "EncoderParams":
        return replace(self, **{k: tape.leaf(_value(getattr(self, k)), name=k) for k in self.ARRAYS})

    def with_arrays(self, arrays: dict) -> "EncoderParams":
        return replace(self, **{k: arrays[k] for k in self.ARRAYS if k in arrays})

    @property
    def embed_dim(self) -> int:
        return _value(self.W2).shape[1]


@dataclass(frozen=True)
class NmnParams:
    """Pair-scoring MLP: ``L1`` is 2d x h, ``L2`` h x h, ``L3`` h x 1; row biases."""

    L1: object
    b1: object
    L2: object
    b2: object
    L3: object
    b3: object

    ARRAYS = ("L1", "b1", "L2", "b2", "L3", "b3")

    def arrays(self) -> dict:
        return {k: _value(getattr(self, k)) for k in self.ARRAYS}

    def on_tape(self, tape: Tape) -> "NmnParams":
        return replace(self, **{k: tape.leaf(_value(getattr(self, k)), name=k) for k in self.ARRAYS})

    def with_arrays(self, arrays: dict) -> "NmnParams":
        return replace(self, **{k: arrays[k] for k in self.ARRAYS if k in arrays})

    @property
    def hidden_dim(self) -> int:
        return _value(self.L1).shape[1]


def _value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_encoder(rng, in_dim: int, embed_dim: int, activation="relu", final_activation=False):
    if in_dim < 1 or embed_dim < 1:
        raise ValueError("dimensions must be positive")
    return EncoderParams(glorot(rng, in_dim, embed_dim), glorot(rng, embed_dim, embed_dim),
                         activation, final_activation)


def init_nmn(rng, embed_dim: int, hidden_dim: int) -> NmnParams:
    if embed_dim < 1 or hidden_dim < 1:
        raise ValueError("dimensions must be positive")
    h = hidden_dim
    return NmnParams(
        glorot(rng, 2 * embed_dim, h), np.zeros((1, h)),
        glorot(rng, h, h), np.zeros((1, h)),
        glorot(rng, h, 1), np.zeros((1, 1)),
    )


def init_params(seed, in_dim: int, embed_dim: int, hidden_dim: int, activation="relu",
                final_activation=False):
    """Glorot-uniform weights, zero biases. Encoder and NMN use separate child streams."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    enc_ss, nmn_ss = ss.spawn(2)
    enc = init_encoder(np.random.default_rng(enc_ss), in_dim, embed_dim, activation, final_activation)
    nmn = init_nmn(np.random.default_rng(nmn_ss), embed_dim, hidden_dim)
    return enc, nmn


def encoder_forward(p: EncoderParams, adj, x) -> Tensor:
    """``H1 = act(A X W1)``; output ``A H1 W2`` (activated only if ``final_activation``)."""
    x = nd.as_tensor(x)
    w1, w2 = nd.as_tensor(p.W1), nd.as_tensor(p.W2)
    if x.shape[1] != w1.shape[0]:
        raise ShapeError(f"features have {x.shape[1]} columns, W1 expects {w1.shape[0]}")
    if adj.shape[0] != x.shape[0]:
        raise ShapeError(f"adjacency is {adj.shape}, features have {x.shape[0]} rows")
    h1 = _act(p.activation, nd.spmm(adj, nd.matmul(x, w1)))
    out = nd.spmm(adj, nd.matmul(h1, w2))
    if p.final_activation:
        out = _act(p.activation, out)
    return out


def nmn_scores(p: NmnParams, u, v, block_rows: Optional[int] = None) -> Tensor:
    """Raw pair scores ``m'_ij = MLP([u_i, v_j])`` via the blocked fused kernel."""
    return nd.pair_mlp(u, v, p.L1, p.b1, p.L2, p.b2, p.L3, p.b3, block_rows=block_rows)


def nmn_scores_reference(p: NmnParams, u, v) -> Tensor:
    """Same scores built from primitive ops on the explicit pair batch (O(N^2 d) memory)."""
    u, v = nd.as_tensor(u), nd.as_tensor(v)
    n, m = u.shape[0], v.shape[0]
    pairs = nd.concat_rows_pairwise(u, v)
    h1 = nd.relu(nd.add_row(nd.matmul(pairs, nd.as_tensor(p.L1)), p.b1))
    h2 = nd.relu(nd.add_row(nd.matmul(h1, nd.as_tensor(p.L2)), p.b2))
    out = nd.add_row(nd.matmul(h2, nd.as_tensor(p.L3)), p.b3)
    return nd.reshape(out, (n, m))


def nmn_forward(p: NmnParams, u, v, block_rows: Optional[int] = None) -> Tensor:
    """Negative metric matrix: row softmax of the pair scores (rows sum to one).

    The output bias ``b3`` shifts every score equally and cancels in the
    softmax, so it is left out here; its gradient through ``m`` is exactly
    zero either way.
    """
    u, v = nd.as_tensor(u), nd.as_tensor(v)
    if u.shape != v.shape:
        raise ShapeError(f"u and v must be row-aligned, got {u.shape} and {v.shape}")
    scores = nd.pair_mlp(u, v, p.L1, p.b1, p.L2, p.b2, p.L3, np.zeros((1, 1)), block_rows=block_rows)
    return nd.row_softmax(scores)


# ----------------------------------------------------------------- checkpoints

MAGIC = b"NMLGCL1"


def save_checkpoint(path, encoder: EncoderParams, nmn: Optional[NmnParams] = None) -> Path:
    """Sectioned binary container.

    ``MAGIC`` then, per array: u32 name length, utf-8 name, u32 ndim,
    u64 dims, little-endian float64 payload (row-major).
    """
    arrays = {f"encoder.{k}": v for k, v in encoder.arrays().items()}
    arrays["meta.final_activation"] = np.array([float(encoder.final_activation)])
    arrays["meta.activation_relu"] = np.array([float(encoder.activation == "relu")])
    if nmn is not None:
        arrays.update({f"nmn.{k}": v for k, v in nmn.arrays().items()})
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())
    return path


def read_arrays(path) -> dict:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ParseError(f"{path}: not an NMLGCL1 checkpoint")
    pos = len(MAGIC)
    out = {}
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if pos + 8 * count > len(data):
                raise ParseError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except struct.error as exc:
        raise ParseError(f"{path}: truncated checkpoint") from exc
    return out


def load_checkpoint(path):
    """Returns ``(EncoderParams, NmnParams or None)``."""
    arrays = read_arrays(path)
    enc = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("encoder.")}
    nmn = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("nmn.")}
    final = bool(arrays.get("meta.final_activation", np.zeros(1))[0])
    act = "relu" if arrays.get("meta.activation_relu", np.ones(1))[0] else "identity"
    encoder = EncoderParams(enc["W1"], enc["W2"], act, final)
    metric = NmnParams(*(nmn[k] for k in NmnParams.ARRAYS)) if nmn else None
    return encoder, metric
