"""Contrastive objectives, the KL regularizer, MI estimates and the simplex oracle.

All losses take a similarity matrix ``s`` (``s_ij = theta(u_i, v_j)``) and,
where relevant, a row-stochastic metric matrix ``m``. Inputs may be tape
tensors or plain arrays; outputs are tensors so they can be differentiated.
Per-anchor terms are averaged over anchors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from .errors import ArgumentError, ContractError, OracleError, ShapeError
from .ndmath import Tensor

LOG_FLOOR = 1e-12


def _check_tau(tau):
    if not tau > 0:
        raise ArgumentError(f"temperature must be positive, got {tau}")


def _square(s: Tensor, what="similarity matrix"):
    n = s.shape[0]
    if s.shape != (n, n):
        raise ShapeError(f"{what} must be square, got {s.shape}")
    return n


def similarity(u, v, kind: str = "cosine") -> Tensor:
    if kind != "cosine":
        raise ArgumentError(f"unsupported similarity {kind!r}")
    return nd.cosine_similarity_matrix(u, v)


def infonce_equivalent_metric(n: int) -> np.ndarray:
    """Weights reducing the NML loss to InfoNCE: zero diagonal, ``1/(N-1)`` elsewhere."""
    if n < 2:
        raise ArgumentError("InfoNCE needs at least two nodes")
    m = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(m, 0.0)
    return m


def uniform_metric(n: int) -> np.ndarray:
    return np.full((n, n), 1.0 / n)


# ----------------------------------------------------------------- losses


def infonce_anchor_losses(s, tau: float) -> Tensor:
    """``-log(e^{s_ii/t} / sum_j e^{s_ij/t})`` per anchor, as an n x 1 column."""
    _check_tau(tau)
    s = nd.as_tensor(s)
    _square(s)
    a = nd.multiply_scalar(s, 1.0 / tau)
    return nd.sub(nd.logsumexp_row(a), nd.diagonal(a))


def infonce_loss(s, tau: float) -> Tensor:
    return nd.reduce_mean(infonce_anchor_losses(s, tau))


def _check_rows(m: Tensor, tol=1e-6):
    sums = m.value.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol) or np.any(m.value < 0):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ContractError(f"metric matrix must be row-stochastic (worst row-sum error {worst:.3g})")


def nml_anchor_losses(s, m, tau: float) -> Tensor:
    """Per-anchor NML loss.

    ``log(e^{a_ii} + (N-1) sum_j m_ij e^{a_ij}) - a_ii`` with ``a = s/tau``;
    the sum runs over every ``j`` including the anchor itself. Exponents are
    shifted by the row maximum, so the sum never overflows and zero weights
    need no logarithm.
    """
    _check_tau(tau)
    s, m = nd.as_tensor(s), nd.as_tensor(m)
    n = _square(s)
    if m.shape != s.shape:
        raise ShapeError(f"metric {m.shape} does not match similarity {s.shape}")
    _check_rows(m)
    a = nd.multiply_scalar(s, 1.0 / tau)
    shift = nd.row_max(a)
    neg_shift = Tensor(-shift)
    weighted = nd.multiply_scalar(nd.sum_rows(nd.multiply(nd.exp(nd.add_col(a, neg_shift)), m)), n - 1)
    diag = nd.diagonal(a)
    positive = nd.exp(nd.add(diag, neg_shift))
    return nd.sub(nd.add(nd.log(nd.add(positive, weighted)), Tensor(shift)), diag)


def nml_loss(s, m, tau: float) -> Tensor:
    return nd.reduce_mean(nml_anchor_losses(s, m, tau))


def kl_anchor_terms(m) -> Tensor:
    """``(N-1) KL(uniform || m_i)`` per anchor; entries are floored at 1e-12."""
    m = nd.as_tensor(m)
    n = _square(m, "metric matrix")
    logs = nd.sum_rows(nd.log(m, floor=LOG_FLOOR))
    # (N-1) * sum_j (1/N) (log(1/N) - log m_ij)
    return nd.add_scalar(nd.multiply_scalar(logs, -(n - 1) / n), -(n - 1) * math.log(n))


def kl_regularizer(m) -> Tensor:
    return nd.reduce_mean(kl_anchor_terms(m))


def inner_objective(s, m, tau: float, alpha: float) -> Tensor:
    if alpha < 0:
        raise ArgumentError(f"alpha must be non-negative, got {alpha}")
    loss = nml_loss(s, m, tau)
    if alpha == 0:
        return loss
    return nd.add(loss, nd.multiply_scalar(kl_regularizer(m), alpha))


# ----------------------------------------------------------------- reports


@dataclass(frozen=True)
class LossReport:
    nml_loss: float
    infonce_loss: float
    kl_reg: float
    inner_objective: float
    i_nml: float
    i_nce: float


def loss_report(s, m, tau: float, alpha: float) -> LossReport:
    s = nd.constant(s)
    m = nd.constant(m)
    n = s.shape[0]
    nml = float(nml_loss(s, m, tau))
    nce = float(infonce_loss(s, tau))
    kl = float(kl_regularizer(m))
    return LossReport(nml, nce, kl, nml + alpha * kl, -nml + math.log(n), -nce + math.log(n))


def mi_estimates(s, m, tau: float):
    """``(I_NML, I_NCE)``: negative mean loss plus ``log N`` for each estimator."""
    s = nd.constant(s)
    n = s.shape[0]
    return (
        -float(nml_loss(s, nd.constant(m), tau)) + math.log(n),
        -float(infonce_loss(s, tau)) + math.log(n),
    )


def hinge_diagnostic(s, m, tau: float, anchor: int):
    """Max-approximation of one anchor's NML loss, with the exact loss.

    Returns ``(approx, exact)`` where ``approx`` is
    ``max{0, log((N-1) m_ii), max_{j != i} [(s_ij - s_ii)/tau + log((N-1) m_ij)]}``.
    """
    _check_tau(tau)
    s = np.asarray(nd.as_tensor(s).value)
    m = np.asarray(nd.as_tensor(m).value)
    n = s.shape[0]
    i = int(anchor)
    with np.errstate(divide="ignore"):
        logw = np.log((n - 1) * m[i])
    terms = (s[i] - s[i, i]) / tau + logw
    terms[i] = logw[i]
    approx = max(0.0, float(np.max(terms)))
    exact = float(nml_anchor_losses(s, m, tau).value[i, 0])
    return approx, exact


# ----------------------------------------------------------------- oracle


def anchor_inner_value(s_row, anchor: int, m_row, tau: float, alpha: float) -> float:
    """Per-anchor ``L_NML + alpha * L_reg`` in plain numpy (no tape)."""
    a = np.asarray(s_row, dtype=np.float64) / tau
    m_row = np.asarray(m_row, dtype=np.float64)
    n = len(a)
    if np.any(m_row <= 0):
        return math.inf
    c = a.max()
    e = np.exp(a - c)
    d = e[anchor] + (n - 1) * float(m_row @ e)
    nml = math.log(d) + c - a[anchor]
    reg = (n - 1) * float(np.mean(-math.log(n) - np.log(m_row)))
    return nml + alpha * reg


def _anchor_parts(a, anchor, m, alpha):
    n = len(a)
    c = a.max()
    e = np.exp(a - c)
    d = e[anchor] + (n - 1) * float(m @ e)
    grad = (n - 1) * e / d - alpha * (n - 1) / (n * m)
    hess_diag = alpha * (n - 1) / (n * m * m)
    hess_low = (n - 1) * e / d
    return grad, hess_diag, hess_low


def _oracle_descend(a, anchor, m, tau, alpha, tol, max_iter):
    n = len(a)
    s_row = a * tau
    f = anchor_inner_value(s_row, anchor, m, tau, alpha)
    for it in range(max_iter):
        grad, hd, hl = _anchor_parts(a, anchor, m, alpha)
        tangent = grad - grad.mean()
        if np.linalg.norm(tangent) < tol:
            return m, f, it
        # Newton step on the simplex tangent space; the rank-one term is the
        # (concave) curvature of the log part. Fall back to the barrier-scaled
        # projected gradient whenever Newton is not a descent direction.
        kkt = np.zeros((n + 1, n + 1))
        kkt[:n, :n] = np.diag(hd) - np.outer(hl, hl)
        kkt[:n, n] = kkt[n, :n] = 1.0
        rhs = np.concatenate([-grad, [0.0]])
        try:
            step = np.linalg.solve(kkt, rhs)[:n]
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)) or grad @ step >= 0:
            inv = 1.0 / hd
            mu = (grad * inv).sum() / inv.sum()
            step = -(grad - mu) * inv
        neg = step < 0
        t = 1.0
        if np.any(neg):
            t = min(1.0, 0.99 * float(np.min(-m[neg] / step[neg])))
        slope = float(grad @ step)
        # below the resolution of f, decrease cannot be measured; the tangent
        # norm is the progress measure there
        flat = abs(slope) < 1e-13 * max(1.0, abs(f))
        while True:
            cand = m + t * step
            cand /= cand.sum()
            fc = anchor_inner_value(s_row, anchor, cand, tau, alpha)
            if fc <= f + 1e-4 * t * slope or t < 1e-16 or (flat and np.isfinite(fc)):
                break
            t *= 0.5
        if t < 1e-16 and fc > f and not flat:
            # no representable decrease left: accept only if already near-stationary
            if np.linalg.norm(tangent) < 1e-6:
                return m, f, it
            raise OracleError(f"oracle line search stalled at tangent norm {np.linalg.norm(tangent):.3g}")
        m, f = cand, fc
    raise OracleError(f"simplex oracle did not converge in {max_iter} iterations")


def optimal_metric_oracle(s, tau: float, alpha: float, anchor: int, tol: float = 1e-8,
                          max_iter: int = 100_000) -> np.ndarray:
    """Minimize one anchor's inner objective over the probability simplex.

    Independent of any network: a safeguarded projected Newton descent run
    from several starts (uniform, and mixtures leaning on the least similar
    column), stopped once the gradient projected onto the simplex tangent has
    norm below ``tol``. The lowest objective wins. With ``alpha == 0`` the
    exact minimizer is returned: the vertex on the least similar column.
    """
    _check_tau(tau)
    if alpha < 0:
        raise ArgumentError(f"alpha must be non-negative, got {alpha}")
    s = np.asarray(nd.as_tensor(s).value)
    n = s.shape[0]
    if n > 16:
        raise ArgumentError("the oracle is a test device for N <= 16")
    a = s[anchor] / tau
    vertex = np.zeros(n)
    vertex[int(np.argmin(a))] = 1.0
    if alpha == 0:
        # the bare loss is concave in m, so a vertex attains the minimum
        return vertex
    uniform = np.full(n, 1.0 / n)
    starts = [uniform] + [(1 - w) * vertex + w * uniform for w in (0.5, 0.1, 0.01)]
    best, best_f = None, math.inf
    for m0 in starts:
        m, f, _ = _oracle_descend(a, anchor, m0.copy(), tau, alpha, tol, max_iter)
        if f < best_f:
            best, best_f = m, f
    return best


def oracle_metric_matrix(s, tau: float, alpha: float, **kw) -> np.ndarray:
    s = np.asarray(nd.as_tensor(s).value)
    return np.stack([optimal_metric_oracle(s, tau, alpha, i, **kw) for i in range(s.shape[0])])
