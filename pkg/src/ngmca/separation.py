"""Outer nGMCA loop: alternating sparse NMF with a decreasing threshold schedule.

Variants differ only in where sparsity is measured:

=============  ===================  =======================  =================
variant        optimized variable   penalized coefficients   S-update solver
=============  ===================  =======================  =================
direct         S                    S                        forward-backward
ortho          S_w (orthonormal)    S_w                      generalized FB
synthesis      S_w (UDWT frame)     S_w                      generalized FB
analysis       S                    S W^T (UDWT frame)       Chambolle-Pock
convolutive    S_w >= 0             S_w (spike trains)       forward-backward
=============  ===================  =======================  =================

Thresholds start at the largest gradient coefficient of each source and go
down linearly to ``tau_sigma_inf * sigma_grad`` where ``sigma_grad`` is a MAD
estimate of the noise in the (transformed) gradient row. The last
``refinement_iters`` iterations keep them fixed and use the norm-constrained
mixing update, which makes the whole phase a block coordinate descent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .solvers import (
    SolverParams,
    update_A,
    update_S_analysis,
    update_S_convolutive,
    update_S_direct,
    update_S_synthesis,
)
from .transforms import (
    Convolution,
    ConvolutionKernel,
    Identity,
    LinearTransform,
    OrthoWavelet,
    UndecimatedWavelet,
)

log = logging.getLogger(__name__)

__all__ = [
    "VARIANTS",
    "Problem",
    "NgmcaConfig",
    "ThresholdState",
    "SeparationResult",
    "mad_sigma",
    "coefficient_gains",
    "mixture_mad_sigma",
    "residual_noise_sigma",
    "gradient_noise_sigma",
    "update_thresholds",
    "reweight_lambda",
    "ls_coefficients",
    "initialize",
    "run_ngmca",
    "full_cost",
    "sparse_hals_baseline",
    "estimate_noise_std",
]

VARIANTS = ("direct", "ortho", "synthesis", "analysis", "convolutive")
_DEFAULT_TAU = {"direct": 1.0, "ortho": 1.0, "synthesis": 2.0, "analysis": 2.0, "convolutive": 1.0}
MAD_SCALE = 1.4826


@dataclass
class Problem:
    Y: np.ndarray
    r: int

    def __post_init__(self):
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        m, n = self.Y.shape
        if not 1 <= self.r <= min(m, n):
            raise ValueError(f"need 1 <= r <= min(m, n) = {min(m, n)}, got r={self.r}")
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("data matrix contains non-finite values")

    @property
    def shape(self):
        return self.Y.shape


@dataclass
class NgmcaConfig:
    """Settings of one nGMCA run.

    ``transform`` overrides the operator built from ``wavelet``/``levels``
    (wavelet variants) or ``kernel`` (convolutive variant).
    ``tau_sigma_inf`` defaults to 1 for direct, ortho and convolutive runs and
    to 2 for synthesis and analysis. With ``reweighted`` the thresholds are
    recomputed from the least-squares sources ``reweight_passes`` times,
    evenly spread over the refinement phase (every refinement iteration when
    ``None``).
    """

    variant: str = "direct"
    K: int = 300
    refinement_iters: int = 50
    tau_sigma_inf: float | None = None
    wavelet: str = "symmlet4"
    levels: int = 3
    kernel: ConvolutionKernel = field(default_factory=ConvolutionKernel)
    transform: LinearTransform | None = None
    reweighted: bool = False
    reweight_passes: int | None = None
    coarse_scale_mask: np.ndarray | None = None
    inner_iters: int = 80
    final_inner_iters: int = 250
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not self.K > self.refinement_iters >= 0:
            raise ValueError("need K > refinement_iters >= 0")
        if self.tau_sigma_inf is None:
            self.tau_sigma_inf = _DEFAULT_TAU[self.variant]
        if not self.tau_sigma_inf > 0:
            raise ValueError("tau_sigma_inf must be positive")
        if self.reweight_passes is not None and self.reweight_passes < 1:
            raise ValueError("reweight_passes must be >= 1 (or None for every refinement iteration)")

    @property
    def descent_iters(self):
        return self.K - self.refinement_iters

    def build_transform(self, n):
        if self.transform is not None:
            if self.transform.n != n:
                raise ValueError(f"transform expects signals of length {self.transform.n}, data has {n}")
            return self.transform
        if self.variant == "direct":
            return Identity(n)
        if self.variant == "ortho":
            return OrthoWavelet(n, self.wavelet, self.levels)
        if self.variant in ("synthesis", "analysis"):
            return UndecimatedWavelet(n, self.wavelet, self.levels)
        return Convolution(n, self.kernel)


@dataclass
class ThresholdState:
    lam: np.ndarray
    sigma_grad: np.ndarray
    floor: np.ndarray
    tau: float
    descent_iters: int
    mask: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    def masked(self, lam):
        if self.mask is not None:
            lam = lam.copy()
            lam[:, self.mask] = 0.0
        return lam


@dataclass
class SeparationResult:
    A: np.ndarray
    S: np.ndarray
    S_w: np.ndarray | None = None
    lam: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def iters(self):
        return len(self.diagnostics.get("cost", ()))


def mad_sigma(x, axis=-1):
    """Robust noise scale ``1.4826 * median(|x - median(x)|)`` along ``axis``.

    A zero entry marks a row without spread (constant row).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[axis] < 2:
        raise ValueError("need at least 2 samples per row")
    med = np.median(x, axis=axis, keepdims=True)
    return MAD_SCALE * np.median(np.abs(x - med), axis=axis)


def coefficient_gains(W):
    """Standard deviation of each coefficient of ``W x`` for unit white ``x``."""
    return np.linalg.norm(W.forward(np.eye(W.n)), axis=0)


def mixture_mad_sigma(gains):
    """What :func:`mad_sigma` converges to on zero-mean Gaussian entries with stds ``gains``.

    Solves ``mean(P(|N(0, g^2)| <= t)) = 1/2`` for ``t``; equals the common
    value when all gains are equal.
    """
    g = np.asarray(gains, dtype=float)
    g = g[g > 0]
    if g.size == 0:
        raise ValueError("need at least one positive gain")
    half = lambda t: np.mean(erf(t / (np.sqrt(2.0) * g))) - 0.5
    return MAD_SCALE * brentq(half, 0.0, 10.0 * g.max())


def residual_noise_sigma(Y, A):
    """MAD noise level of ``Y`` on the orthogonal complement of ``span(A)``.

    That part of the data holds no source signal once ``A`` is right, so its
    spread is the noise level whatever the sparsity of ``S``. Returns
    ``None`` when ``A`` spans the whole data space (``m <= r``).
    """
    m, r = A.shape
    if m <= r:
        return None
    Q, _ = np.linalg.qr(A, mode="complete")
    return float(mad_sigma((Q[:, r:].T @ Y).ravel()))


def gradient_noise_sigma(Y, A, S, W, gains=None):
    """Per-source noise level of the gradient rows ``A_i^T (A S - Y) W^T``.

    The noise part of row ``i`` is ``A_i^T Z W^T``: white noise of level
    ``||A_i|| sigma_Y`` seen through ``W``. ``sigma_Y`` comes from
    :func:`residual_noise_sigma`; the gradient itself is not used because at
    a solution of the sparse subproblem it is pinned to the thresholds on
    the active set (and, in the analysis form, to a dual variable
    everywhere), so its spread follows the thresholds rather than the noise.
    Without a residual space (``m == r``) the MAD of the gradient rows is
    used instead.
    """
    sigma_y = residual_noise_sigma(Y, A)
    if sigma_y is None:
        return mad_sigma(W.forward(A.T @ (A @ S - Y)))
    gains = coefficient_gains(W) if gains is None else gains
    return sigma_y * mixture_mad_sigma(gains) * np.linalg.norm(A, axis=0)


def update_thresholds(state, gradient_residual, k, config, sigma=None):
    """Threshold selection after outer iteration ``k`` (1-based).

    During the descent phase the noise level of every gradient row is
    re-estimated (``sigma`` when given, else the MAD of each row of
    ``gradient_residual``) and each threshold moves toward its floor by
    ``(lam - floor) / (iterations left)``; this is an exactly linear path
    while the floor is stable. Thresholds never increase: a floor above the
    current value leaves it in place. Past the descent phase the state is
    returned unchanged.
    """
    D = state.descent_iters
    if k > D:
        return state
    sigma = mad_sigma(gradient_residual) if sigma is None else np.asarray(sigma, dtype=float)
    floor = state.tau * sigma[:, None]
    remaining = D - k + 1
    lam = state.lam - (state.lam - floor) / remaining
    # a floor re-estimated above the current thresholds never raises them
    lam = state.masked(np.clip(lam, 0.0, state.lam))
    return replace(state, lam=lam, sigma_grad=sigma, floor=floor, degenerate=sigma == 0.0)


def reweight_lambda(lam, S_w_inv, Sigma):
    """``lam / (1 + (S_w_inv / Sigma)^2)``, elementwise."""
    Sigma = np.asarray(Sigma, dtype=float)
    if np.any(Sigma <= 0):
        raise ValueError("noise levels Sigma must be positive")
    return np.asarray(lam, dtype=float) / (1.0 + (np.asarray(S_w_inv) / Sigma) ** 2)


def ls_coefficients(Y, A, W=None, full_output=False):
    """Least-squares source coefficients ``(A^T A)^{-1} A^T Y W^T``.

    A rank-deficient ``A^T A`` gets a ridge of ``1e-10 * trace``; this is
    reported in ``info["ridge"]`` when ``full_output`` is set.
    """
    AtA = A.T @ A
    ridge = 0.0
    if np.linalg.matrix_rank(AtA) < AtA.shape[0]:
        ridge = 1e-10 * np.trace(AtA)
        log.warning("A^T A is rank deficient, adding ridge %g", ridge)
    S = np.linalg.solve(AtA + ridge * np.eye(AtA.shape[0]), A.T @ Y)
    out = S if W is None else W.forward(S)
    if full_output:
        return out, {"ridge": ridge}
    return out


def _normalize_columns(A):
    norms = np.linalg.norm(A, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return A / safe, norms


def _rng_streams(seed):
    init_ss, redraw_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(redraw_ss)


def _penalized_gradient(Y, A, S, W):
    """Gradient of the data term in the penalized domain, rows of ``A^T (A S - Y) W^T``."""
    G = A.T @ (A @ S - Y)
    return W.forward(G)


def initialize(problem, config):
    """Initial ``(A, X, lam)`` for a run.

    ``A`` has i.i.d. half-normal entries and unit columns, the optimization
    variable ``X`` (``S`` or ``S_w``) is zero and each threshold row starts at
    the largest magnitude of the corresponding gradient row.
    """
    Y = problem.Y
    m, n = Y.shape
    W = config.build_transform(n)
    rng, _ = _rng_streams(config.seed)
    A, _ = _normalize_columns(np.abs(rng.standard_normal((m, problem.r))))
    X = np.zeros((problem.r, n if config.variant in ("direct", "analysis") else W.p))
    grad = _penalized_gradient(Y, A, np.zeros((problem.r, n)), W)
    lam = np.broadcast_to(np.max(np.abs(grad), axis=1, keepdims=True), grad.shape).copy()
    mask = _mask(config, W)
    if mask is not None:
        lam[:, mask] = 0.0
    return A, X, lam


def _mask(config, W):
    if config.coarse_scale_mask is None:
        return None
    mask = np.asarray(config.coarse_scale_mask, dtype=bool)
    if mask.shape != (W.p,):
        raise ValueError(f"coarse_scale_mask must have shape ({W.p},)")
    return mask


def full_cost(Y, A, X, lam, variant, W, constrained=True):
    """Cost minimized by the alternating scheme for fixed thresholds.

    ``1/2 ||Y - A S||^2 + ||lam * X_pen||_1`` plus the indicators of
    ``A >= 0``, ``S >= 0`` (or ``S_w W >= 0``) and, when ``constrained``,
    ``||A_j||_2 <= 1``. Indicator violations beyond 1e-9 give ``inf``.
    """
    S = X if variant in ("direct", "analysis") else W.adjoint(X)
    if np.any(A < 0) or np.any(S < -1e-9):
        return np.inf
    if variant == "convolutive" and np.any(X < 0):
        return np.inf
    if constrained and np.any(np.linalg.norm(A, axis=0) > 1 + 1e-9):
        return np.inf
    pen = W.forward(X) if variant == "analysis" else X
    return 0.5 * np.sum((Y - A @ S) ** 2) + np.sum(np.abs(lam * pen))


def _s_update(variant, Y, A, lam, W, X, warm, params):
    if variant == "direct":
        return update_S_direct(Y, A, lam, X, params)
    if variant in ("ortho", "synthesis"):
        return update_S_synthesis(Y, A, lam, W, X, params, warm=warm)
    if variant == "analysis":
        return update_S_analysis(Y, A, lam, W, X, params, warm=warm)
    return update_S_convolutive(Y, A, lam, W, X, params)


def _signal(variant, X, W):
    if variant in ("direct", "analysis"):
        return X
    S = W.adjoint(X)
    return np.maximum(S, 0.0) if variant != "convolutive" else S


def _reweighted(Y, A, W, base):
    S_inv = ls_coefficients(Y, A, W)
    Sigma = mad_sigma(S_inv)[:, None]
    Sigma = np.where(Sigma > 0, Sigma, np.finfo(float).tiny)
    return reweight_lambda(base, S_inv, Sigma)


def run_ngmca(problem, config):
    """Run one nGMCA separation and return the estimated factors.

    Each outer iteration normalizes the columns of ``A`` (rescaling the
    source rows so that ``A S`` is unchanged), updates the sources for the
    current thresholds, updates ``A`` and selects the next thresholds.
    """
    if not isinstance(problem, Problem):
        problem = Problem(*problem)
    Y = problem.Y
    m, n = Y.shape
    r = problem.r
    variant = config.variant
    W = config.build_transform(n)
    if variant in ("ortho", "synthesis") and not W.tight_frame:
        raise ValueError(f"{variant} variant requires a tight frame transform")
    mask = _mask(config, W)
    _, redraw_rng = _rng_streams(config.seed)
    A, X, lam = initialize(problem, config)
    thr = ThresholdState(
        lam=lam, sigma_grad=np.zeros(r), floor=np.zeros((r, 1)),
        tau=config.tau_sigma_inf, descent_iters=config.descent_iters, mask=mask,
    )
    D = config.descent_iters
    loop_params = SolverParams(max_iters=config.inner_iters, tol=config.tol)
    final_params = SolverParams(max_iters=config.final_inner_iters, tol=config.tol)
    gains = coefficient_gains(W)
    if mask is not None:
        gains = gains[~mask]
    warm = None
    diag = {"cost": [], "lam": [], "sigma_grad": [], "s_iters": [], "a_iters": [], "subproblem_increase": []}
    flags = []
    passes = config.reweight_passes or max(config.refinement_iters, 1)
    rew_every = max(1, -(-config.refinement_iters // passes))

    for k in range(1, config.K + 1):
        refining = k > D
        params = final_params if refining else loop_params

        A, norms = _normalize_columns(A)
        dead = norms == 0
        if dead.any():
            A[:, dead] = _normalize_columns(np.abs(redraw_rng.standard_normal((m, int(dead.sum())))))[0]
            flags.append((k, "zero-column-redrawn", np.flatnonzero(dead).tolist()))
            norms = np.where(dead, 1.0, norms)
        X = X * norms[:, None]
        if warm and variant in ("ortho", "synthesis"):
            warm = {key: val * norms[:, None] for key, val in warm.items()}

        if refining and config.reweighted and (k - D - 1) % rew_every == 0:
            base = np.broadcast_to(thr.floor, thr.lam.shape)
            thr = replace(thr, lam=thr.masked(_reweighted(Y, A, W, base)))
            flags.append((k, "reweighted", None))

        lam_k = thr.lam
        before = full_cost(Y, A, X, lam_k, variant, W, constrained=False)
        s_state = _s_update(variant, Y, A, lam_k, W, X, warm, params)
        X, warm = s_state.x, s_state.aux or None
        S = _signal(variant, X, W)
        after = full_cost(Y, A, X, lam_k, variant, W, constrained=False)
        diag["subproblem_increase"].append(max(0.0, after - before) / max(abs(before), 1e-300)
                                           if np.isfinite(before) else 0.0)

        a_state = update_A(Y, S, A, params, constrained=refining)
        A = a_state.x
        # a source that is still empty past mid-descent is a dead component
        zero_rows = a_state.aux["dead"]
        if not refining and k > D // 2 and zero_rows.any():
            idx = np.flatnonzero(zero_rows)
            A[:, idx] = _normalize_columns(np.abs(redraw_rng.standard_normal((m, idx.size))))[0]
            flags.append((k, "degenerate-source-redrawn", idx.tolist()))

        diag["cost"].append(full_cost(Y, A, X, lam_k, variant, W, constrained=refining))
        diag["lam"].append(lam_k.mean(axis=1))
        diag["s_iters"].append(s_state.iters)
        diag["a_iters"].append(a_state.iters)

        if not refining:
            An, _ = _normalize_columns(A)
            thr = update_thresholds(thr, None, k, config, sigma=gradient_noise_sigma(Y, An, S, W, gains))
        diag["sigma_grad"].append(thr.sigma_grad.copy())

    for key in ("cost", "s_iters", "a_iters", "subproblem_increase"):
        diag[key] = np.asarray(diag[key])
    diag["lam"] = np.vstack(diag["lam"])
    diag["sigma_grad"] = np.vstack(diag["sigma_grad"])
    diag["refinement_start"] = D
    diag["converged"] = bool(s_state.converged)
    S = _signal(variant, X, W)
    S_w = None if variant in ("direct", "analysis") else X
    return SeparationResult(A=A, S=S, S_w=S_w, lam=thr.lam, diagnostics=diag, flags=flags)


def estimate_noise_std(Y):
    """Noise level of ``Y`` from the MAD of first differences, pooled over rows."""
    d = np.diff(np.atleast_2d(Y), axis=1) / np.sqrt(2.0)
    return float(np.median(mad_sigma(d)))


def sparse_hals_baseline(Y, r, lam, iters=300, seed=0):
    """Sparse NMF by cyclic rank-one (HALS) updates.

    Minimizes ``1/2 ||Y - A S||^2 + lam ||S||_1`` over non-negative factors
    with unit-norm columns of ``A``. Components whose row or column vanishes
    are skipped for that sweep.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    Y = np.asarray(Y, dtype=float)
    m, n = Y.shape
    rng = np.random.default_rng(seed)
    A, _ = _normalize_columns(np.abs(rng.standard_normal((m, r))))
    S = np.zeros((r, n))
    cost = []
    for _ in range(iters):
        AtA = A.T @ A
        AtY = A.T @ Y
        for j in range(r):
            if AtA[j, j] == 0:
                continue
            S[j] = np.maximum(S[j] + (AtY[j] - AtA[j] @ S - lam) / AtA[j, j], 0.0)
        SSt = S @ S.T
        YSt = Y @ S.T
        for j in range(r):
            if SSt[j, j] == 0:
                continue
            col = np.maximum(A[:, j] + (YSt[:, j] - A @ SSt[:, j]) / SSt[j, j], 0.0)
            nrm = np.linalg.norm(col)
            if nrm == 0:
                continue
            A[:, j] = col / nrm
            S[j] *= nrm
            SSt[j, :] *= nrm
            SSt[:, j] *= nrm
        cost.append(0.5 * np.sum((Y - A @ S) ** 2) + lam * S.sum())
    return SeparationResult(A=A, S=S, diagnostics={"cost": np.asarray(cost)})
