"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import ArgumentError
from .tape import Tape, Tensor


def tape_gradients(build_loss: Callable, params: Mapping[str, np.ndarray]):
    """Record ``build_loss`` on a fresh tape; return (loss value, grads by name)."""
    tape = Tape()
    leaves = {k: tape.leaf(np.array(v, dtype=np.float64), name=k) for k, v in params.items()}
    loss = build_loss(leaves)
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        # constant loss: nothing on the tape depends on the parameters
        return float(np.asarray(getattr(loss, "value", loss)).ravel()[0]), {
            k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()
        }
    grads = tape.backward(loss)
    return loss.item(), {k: grads[t] for k, t in leaves.items()}


def _evaluate(build_loss, params) -> float:
    consts = {k: Tensor(v) for k, v in params.items()}
    out = build_loss(consts)
    return float(np.asarray(getattr(out, "value", out)).ravel()[0])


def finite_difference_errors(build_loss: Callable, params: Mapping[str, np.ndarray], eps: float = 1e-6):
    """Per-coordinate relative errors ``|a - n| / max(|a|, |n|, 1e-8)``.

    Returns ``{name: (errors, analytic, numeric)}`` with arrays shaped like
    the parameter.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ArgumentError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = tape_gradients(build_loss, params)
    out = {}
    for name, base in params.items():
        flat = base.reshape(-1)
        numeric = np.empty(flat.size)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = _evaluate(build_loss, params)
            flat[idx] = orig - eps
            f_minus = _evaluate(build_loss, params)
            flat[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[name].reshape(-1)
        err = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        out[name] = (err.reshape(base.shape), analytic[name], numeric.reshape(base.shape))
    return out


def grad_check(build_loss: Callable, params: Mapping[str, np.ndarray], eps: float = 1e-6,
               return_details: bool = False):
    """Max relative error between tape gradients and central differences.

    ``build_loss`` maps a dict of named tensors to a scalar tensor. The
    relative error of a coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    With ``return_details`` the worst coordinate is returned as
    ``(name, flat index, analytic, numeric)`` alongside the error.
    """
    worst, where = 0.0, None
    for name, (err, a, n) in finite_difference_errors(build_loss, params, eps).items():
        if err.size and err.max() > worst:
            idx = int(np.argmax(err))
            worst, where = float(err.reshape(-1)[idx]), (name, idx, a.reshape(-1)[idx], n.reshape(-1)[idx])
    if return_details:
        return worst, where
    return worst
