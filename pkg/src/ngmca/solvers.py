"""Splitting solvers for the alternating subproblems.

Every S-update solves, for fixed ``A`` and thresholds ``lam``,

* direct:       min_{S >= 0}        1/2 ||Y - A S||^2 + ||lam * S||_1          (forward-backward)
* synthesis:    min_{S_w W >= 0}    1/2 ||Y - A S_w W||^2 + ||lam * S_w||_1    (generalized FB)
* analysis:     min_{S >= 0}        1/2 ||Y - A S||^2 + ||lam * S W^T||_1      (Chambolle-Pock)
* convolutive:  min_{S_w >= 0}      1/2 ||Y - A S_w W||^2 + ||lam * S_w||_1    (forward-backward)

and returns a :class:`SolverState` whose ``x`` is the optimization variable,
``signal`` the sources in the direct domain and ``aux`` the auxiliary/dual
iterates used to warm start the next call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .proximal import (
    prox_nonneg,
    prox_nonneg_soft,
    prox_nonneg_unit_ball,
    prox_synthesis_nonneg,
    soft_threshold,
)
from .transforms import Convolution, ConvolutionKernel

__all__ = [
    "SolverParams",
    "SolverState",
    "fb_solve",
    "negligible_rows",
    "update_A",
    "update_S_direct",
    "update_S_synthesis",
    "update_S_analysis",
    "update_S_convolutive",
    "objective_direct",
    "objective_synthesis",
    "objective_analysis",
    "spectral_norm_sym",
]


@dataclass
class SolverParams:
    """Step sizes and stopping rule shared by the inner solvers.

    ``gamma``, ``tau`` and ``sigma`` default to ``1/L`` (FB, GFB) and ``0.9/L``
    (Chambolle-Pock) where ``L`` is known only once the operator is.
    """

    gamma: float | None = None
    mu: float = 1.0
    omega_u: float = 0.5
    omega_v: float = 0.5
    tau: float | None = None
    sigma: float | None = None
    max_iters: int = 80
    tol: float = 1e-6
    trace: bool = False

    def __post_init__(self):
        for name in ("gamma", "tau", "sigma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if not (0 < self.omega_u < 1 and 0 < self.omega_v < 1):
            raise ValueError("omega_u and omega_v must lie in (0, 1)")
        if abs(self.omega_u + self.omega_v - 1.0) > 1e-12:
            raise ValueError("omega_u + omega_v must equal 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def fb_step(self, L):
        gamma = 1.0 / L if self.gamma is None else self.gamma
        if not gamma * L < 2.0:
            raise ValueError(f"forward-backward step gamma={gamma:g} must be < 2/L = {2.0 / L:g}")
        return gamma

    def gfb_steps(self, L):
        gamma = self.fb_step(L)
        mu_max = min(1.5, (1.0 + 2.0 / (L * gamma)) / 2.0)
        if not 0.0 < self.mu < mu_max:
            raise ValueError(f"relaxation mu={self.mu:g} must lie in (0, {mu_max:g})")
        return gamma, self.mu

    def cp_steps(self, L, balance=1.0):
        """Primal and dual steps; defaults are ``0.9 * balance / L`` and ``0.9 / (balance * L)``."""
        tau = 0.9 * balance / L if self.tau is None else self.tau
        sigma = 0.9 / (balance * L) if self.sigma is None else self.sigma
        if not tau * sigma * L ** 2 < 1.0:
            raise ValueError(f"Chambolle-Pock steps need tau*sigma*L^2 < 1, got {tau * sigma * L ** 2:g}")
        return tau, sigma


@dataclass
class SolverState:
    x: np.ndarray
    signal: np.ndarray
    aux: dict = field(default_factory=dict)
    iters: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)


def spectral_norm_sym(M):
    """Largest eigenvalue of a symmetric positive semi-definite matrix."""
    M = np.atleast_2d(M)
    return float(np.linalg.eigvalsh(M)[-1])


def _rel_change(new, old):
    diff = np.linalg.norm(new - old)
    scale = np.linalg.norm(new)
    if scale == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / scale


def _as_conv(W, n):
    if isinstance(W, ConvolutionKernel):
        return Convolution(n, W)
    return W


def _residual_sq(Y, A, S):
    return 0.5 * np.sum((Y - A @ S) ** 2)


def objective_direct(Y, A, S, lam):
    return _residual_sq(Y, A, S) + np.sum(np.abs(lam * S))


def objective_synthesis(Y, A, S_w, lam, W):
    return _residual_sq(Y, A, W.adjoint(S_w)) + np.sum(np.abs(lam * S_w))


def objective_analysis(Y, A, S, lam, W):
    return _residual_sq(Y, A, S) + np.sum(np.abs(lam * W.forward(S)))


def fb_solve(grad_f, lipschitz, prox_g, init, params=None, objective=None):
    """Forward-backward iterations ``x <- prox_g(x - gamma grad_f(x), gamma)``.

    ``prox_g(v, gamma)`` must return the prox of ``gamma * g`` at ``v``.
    Raises FloatingPointError on a non-finite gradient.
    """
    params = params or SolverParams(max_iters=500)
    if not lipschitz > 0:
        raise ValueError("lipschitz constant must be positive")
    gamma = params.fb_step(lipschitz)
    x = np.array(init, dtype=float)
    state = SolverState(x=x, signal=x)
    if objective is not None:
        state.trace.append(objective(x))
    for k in range(1, params.max_iters + 1):
        g = grad_f(x)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at forward-backward iteration {k}")
        x_new = prox_g(x - gamma * g, gamma)
        change = _rel_change(x_new, x)
        x = x_new
        if objective is not None:
            state.trace.append(objective(x))
        state.iters = k
        if change < params.tol:
            state.converged = True
            break
    state.x = state.signal = x
    return state


def negligible_rows(Y, A, S, rtol=1e-10):
    """Rows of ``S`` whose contribution ``||A_j|| ||S_j||`` is below ``rtol * ||Y||``.

    Exactly zero rows always qualify, also when ``Y`` is zero. A zero column
    of ``A`` counts as unit norm, so it does not hide a live row.
    """
    a = np.linalg.norm(A, axis=0)
    contrib = np.where(a > 0, a, 1.0) * np.linalg.norm(S, axis=1)
    return (contrib <= rtol * np.linalg.norm(Y)) | ~np.any(S != 0, axis=1)


def update_A(Y, S, A_init, params=None, constrained=False):
    """Mixing matrix update ``min_{A >= 0} 1/2 ||Y - A S||^2``.

    With ``constrained=True`` the columns are also kept in the unit ball.
    Columns paired with an all-zero (or numerically negligible, see
    :func:`negligible_rows`) row of ``S`` are returned unchanged and reported
    in ``state.aux["dead"]``.
    """
    params = params or SolverParams()
    Y, S, A_init = (np.asarray(v, dtype=float) for v in (Y, S, A_init))
    dead = negligible_rows(Y, A_init, S)
    if dead.any():
        # fitting a column to round-off would blow it up along a random direction
        S = np.where(dead[:, None], 0.0, S)
    SSt = S @ S.T
    YSt = Y @ S.T
    L = spectral_norm_sym(SSt)
    if L == 0.0:
        state = SolverState(x=A_init.copy(), signal=A_init.copy(), converged=True)
        state.aux["dead"] = dead
        return state
    if constrained:
        def prox(v, gamma):
            return prox_nonneg_unit_ball(v, axis=0)
    else:
        def prox(v, gamma):
            return prox_nonneg(v)
    objective = (lambda A: _residual_sq(Y, A, S)) if params.trace else None
    state = fb_solve(lambda A: A @ SSt - YSt, L, prox, A_init, params, objective)
    if dead.any():
        state.x[:, dead] = A_init[:, dead]
    state.aux["dead"] = dead
    return state


def update_S_direct(Y, A, lam, S_init, params=None):
    """Sparse non-negative source update by forward-backward."""
    params = params or SolverParams()
    AtA = A.T @ A
    AtY = A.T @ Y
    lam = np.broadcast_to(lam, np.shape(S_init))
    objective = (lambda S: objective_direct(Y, A, S, lam)) if params.trace else None
    return fb_solve(
        lambda S: AtA @ S - AtY,
        spectral_norm_sym(AtA),
        lambda v, gamma: prox_nonneg_soft(v, gamma * lam),
        S_init,
        params,
        objective,
    )


def update_S_convolutive(Y, A, lam, W, S_w_init, params=None):
    """Source update on non-negative spike coefficients, ``S = S_w W``.

    ``W`` is a :class:`Convolution` or a :class:`ConvolutionKernel`.
    """
    params = params or SolverParams()
    W = _as_conv(W, np.shape(Y)[-1])
    AtA = A.T @ A
    AtY = A.T @ Y
    lam = np.broadcast_to(lam, np.shape(S_w_init))
    L = spectral_norm_sym(AtA) * W.norm() ** 2
    objective = (lambda Sw: objective_synthesis(Y, A, Sw, lam, W)) if params.trace else None
    state = fb_solve(
        lambda Sw: W.forward(AtA @ W.adjoint(Sw) - AtY),
        L,
        lambda v, gamma: prox_nonneg_soft(v, gamma * lam),
        S_w_init,
        params,
        objective,
    )
    state.signal = W.adjoint(state.x)
    return state


def _gfb_cold_start(x, grad, lam, gamma, wu, wv):
    """Auxiliaries ``z_i = x - gamma grad - (gamma / w_i) p_i`` with ``p_u + p_v = -grad``.

    ``p_u`` is a subgradient of the weighted l1 norm at ``x``; when ``x`` is
    optimal (e.g. zero under thresholds above the gradient) this is a fixed
    point of the iteration.
    """
    p_u = np.where(x != 0, lam * np.sign(x), np.clip(-grad, -lam, lam))
    p_v = -grad - p_u
    base = x - gamma * grad
    return base - (gamma / wu) * p_u, base - (gamma / wv) * p_v


def update_S_synthesis(Y, A, lam, W, S_w_init, params=None, warm=None):
    """Synthesis source update with the generalized forward-backward algorithm.

    Parameters
    ----------
    Y, A : arrays (m x n), (m x r)
    lam : thresholds broadcastable to (r x p)
    W : tight-frame LinearTransform
    S_w_init : (r x p) initial coefficients
    params : SolverParams
        ``gamma`` (default 1/L), ``mu``, ``omega_u``, ``omega_v``; checked
        against ``L = ||A^T A||`` before iterating.
    warm : dict, optional
        ``{"U_w": ..., "V_w": ...}`` auxiliaries from a previous call.

    Returns
    -------
    SolverState
        ``x`` holds the coefficients projected on ``{S_w : S_w W >= 0}`` and
        ``signal = x W``.
    """
    params = params or SolverParams()
    if not W.tight_frame:
        raise ValueError("synthesis update requires a tight frame transform")
    AtA = A.T @ A
    AtY = A.T @ Y
    L = spectral_norm_sym(AtA) * W.norm() ** 2
    gamma, mu = params.gfb_steps(L)
    wu, wv = params.omega_u, params.omega_v
    S_w = np.array(S_w_init, dtype=float)
    lam = np.broadcast_to(lam, S_w.shape)
    if warm and "U_w" in warm:
        U = np.array(warm["U_w"])
        V = np.array(warm["V_w"])
    else:
        U, V = _gfb_cold_start(S_w, W.forward(AtA @ W.adjoint(S_w) - AtY), lam, gamma, wu, wv)
    state = SolverState(x=S_w, signal=None)
    for k in range(1, params.max_iters + 1):
        G = W.forward(AtA @ W.adjoint(S_w) - AtY)
        if not np.all(np.isfinite(G)):
            raise FloatingPointError(f"non-finite gradient at GFB iteration {k}")
        U = U - mu * S_w + mu * soft_threshold(2 * S_w - U - gamma * G, (gamma / wu) * lam)
        V = V - mu * S_w + mu * prox_synthesis_nonneg(2 * S_w - V - gamma * G, W)
        S_new = wu * U + wv * V
        change = _rel_change(S_new, S_w)
        S_w = S_new
        if params.trace:
            state.trace.append(objective_synthesis(Y, A, S_w, lam, W))
        state.iters = k
        if change < params.tol:
            state.converged = True
            break
    S_w = prox_synthesis_nonneg(S_w, W)
    state.x = S_w
    state.signal = np.maximum(W.adjoint(S_w), 0.0)
    state.aux = {"U_w": U, "V_w": V}
    return state


def update_S_analysis(Y, A, lam, W, S_init, params=None, warm=None):
    """Analysis source update with the Chambolle-Pock primal-dual algorithm.

    The saddle-point form pairs the primal ``S`` with a box-constrained dual
    ``U_w`` (for ``||lam * S W^T||_1``) and a non-positive dual ``V`` (for
    ``S >= 0``); ``L = sqrt(1 + ||W||^2)``. The primal step solves the
    quadratic prox of the data term through a Cholesky factor of
    ``I + tau A^T A`` computed once per call.
    """
    params = params or SolverParams()
    r = A.shape[1]
    AtA = A.T @ A
    AtY = A.T @ Y
    L = np.sqrt(1.0 + W.norm() ** 2)
    # primal steps shrink with the curvature of the data term
    tau, sigma = params.cp_steps(L, balance=1.0 / max(spectral_norm_sym(AtA), 1.0))
    S = np.array(S_init, dtype=float)
    lam = np.broadcast_to(lam, S.shape[:-1] + (W.p,))
    if warm and "U_w" in warm:
        U = np.array(warm["U_w"])
        V = np.array(warm["V"])
    else:
        # duals that make S_init stationary whenever that is possible, so a
        # zero start under thresholds above the gradient stays exactly zero
        U = np.clip(W.forward(AtY - AtA @ S), -lam, lam)
        V = np.zeros(S.shape)
    chol = cho_factor(np.eye(r) + tau * AtA)
    tAtY = tau * AtY
    S_bar = S.copy()
    state = SolverState(x=S, signal=None)
    for k in range(1, params.max_iters + 1):
        U = np.clip(U + sigma * W.forward(S_bar), -lam, lam)
        V = np.minimum(V + sigma * S_bar, 0.0)
        S_new = cho_solve(chol, S - tau * (W.adjoint(U) + V) + tAtY)
        if not np.all(np.isfinite(S_new)):
            raise FloatingPointError(f"non-finite iterate at Chambolle-Pock iteration {k}")
        S_bar = 2 * S_new - S
        change = _rel_change(S_new, S)
        S = S_new
        if params.trace:
            state.trace.append(objective_analysis(Y, A, np.maximum(S, 0.0), lam, W))
        state.iters = k
        if change < params.tol:
            state.converged = True
            break
    S = np.maximum(S, 0.0)
    state.x = state.signal = S
    state.aux = {"U_w": U, "V": V}
    return state
