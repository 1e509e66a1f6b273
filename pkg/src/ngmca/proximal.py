"""Proximal operators for the non-negative sparse subproblems.

Matrices hold one signal per row; thresholds ``lam`` broadcast against the
operand, so a column vector of per-row values (shape ``(r, 1)``) is the usual
way to give one threshold per source.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "prox_nonneg",
    "soft_threshold",
    "prox_nonneg_soft",
    "prox_nonneg_unit_ball",
    "prox_synthesis_nonneg",
    "prox_analysis_l1",
    "project_linf",
    "expand_weights",
]


def _weights(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("thresholds must be non-negative")
    return lam


def expand_weights(lam, shape):
    """Broadcast per-source (or scalar) thresholds to a full ``shape`` matrix."""
    lam = _weights(lam)
    if lam.ndim == 1 and len(shape) == 2 and lam.shape[0] == shape[0]:
        lam = lam[:, None]
    return np.broadcast_to(lam, shape).copy()


def prox_nonneg(x):
    """Projection on the non-negative orthant, ``max(x, 0)``."""
    return np.maximum(x, 0.0)


def soft_threshold(x, lam):
    """``sign(x) * max(|x| - lam, 0)``, elementwise."""
    lam = _weights(lam)
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def prox_nonneg_soft(x, lam):
    """Non-negative soft thresholding, prox of ``||lam * x||_1 + i_{x >= 0}``."""
    lam = _weights(lam)
    return np.maximum(np.asarray(x, dtype=float) - lam, 0.0)


def prox_nonneg_unit_ball(x, axis=0):
    """Projection on ``{y >= 0, ||y||_2 <= 1}``.

    For a matrix the constraint holds per column (``axis=0``), which is the
    norm constraint on the columns of the mixing matrix.
    """
    y = np.maximum(np.asarray(x, dtype=float), 0.0)
    norms = np.linalg.norm(y, axis=axis, keepdims=True)
    return y / np.maximum(norms, 1.0)


def prox_synthesis_nonneg(x_w, W):
    """Projection of coefficients on ``{y : W^T y >= 0}`` for a tight frame.

    Returns ``x_w + W [-W^T x_w]_+``; the result ``z`` satisfies
    ``W^T z = [W^T x_w]_+``.
    """
    if not W.tight_frame:
        raise ValueError("prox_synthesis_nonneg requires a tight frame (W^T W = I)")
    neg = np.maximum(-W.adjoint(x_w), 0.0)
    return np.asarray(x_w, dtype=float) + W.forward(neg)


def project_linf(u, lam):
    """Clip ``u`` to the box ``[-lam, lam]``."""
    lam = _weights(lam)
    return np.clip(u, -lam, lam)


def prox_analysis_l1(x, lam, W, inner_iters=200, tol=1e-6, dual_init=None, full_output=False):
    """Prox of ``||lam * (W x)||_1`` computed on its dual.

    The dual problem ``min_{|u| <= lam} 1/2 ||W^T u - x||^2`` is solved by
    projected gradient with step ``1 / ||W||^2``; the prox is ``x - W^T u``.

    Parameters
    ----------
    x : array, last axis of length ``W.n``
    lam : array broadcastable to the coefficient shape ``x.shape[:-1] + (W.p,)``
    W : LinearTransform
    inner_iters : int
        Maximum number of dual iterations.
    tol : float
        Stop when ``||u_new - u|| <= tol * ||u_new||``.
    dual_init : array, optional
        Warm start for the dual variable, usually the ``dual`` returned by the
        previous call.
    full_output : bool
        Also return ``(dual, info)`` with ``info = {"iters", "converged"}``.
    """
    x = np.asarray(x, dtype=float)
    lam = _weights(lam)
    shape = x.shape[:-1] + (W.p,)
    u = np.zeros(shape) if dual_init is None else np.array(dual_init, dtype=float)
    u = np.clip(u, -lam, lam)
    step = 1.0 / W.norm() ** 2
    converged = False
    it = 0
    for it in range(1, inner_iters + 1):
        u_new = np.clip(u - step * W.forward(W.adjoint(u) - x), -lam, lam)
        delta = np.linalg.norm(u_new - u)
        u = u_new
        if delta <= tol * max(np.linalg.norm(u), np.finfo(float).tiny):
            converged = True
            break
    y = x - W.adjoint(u)
    if full_output:
        return y, u, {"iters": it, "converged": converged}
    return y
