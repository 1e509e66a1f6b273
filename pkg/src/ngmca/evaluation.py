"""Separation quality metrics.

The estimate of a source is split by orthogonal projections into target,
interference, noise and artifact parts; SDR, SIR, SNR and SAR are energy
ratios between sums of those parts, capped at +/-200 dB.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "DB_CAP",
    "Decomposition",
    "EvalScores",
    "decompose",
    "sdr",
    "sir",
    "snr",
    "sar",
    "hoyer_sparseness",
    "match_sources",
    "evaluate",
]

DB_CAP = 200.0


@dataclass
class Decomposition:
    target: np.ndarray
    interf: np.ndarray
    noise: np.ndarray
    artifacts: np.ndarray

    def total(self):
        return self.target + self.interf + self.noise + self.artifacts


@dataclass
class EvalScores:
    sdr: np.ndarray
    sir: np.ndarray
    snr: np.ndarray
    sar: np.ndarray
    permutation: np.ndarray

    def median(self, name="sdr"):
        return float(np.median(getattr(self, name)))

    def mean(self, name="sdr"):
        return float(np.mean(getattr(self, name)))


def _orth_basis(rows, what):
    """Orthonormal basis (columns) of the span of ``rows``; raises if rank deficient."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    sv = np.linalg.svd(rows, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not cond < 1e10:
        raise ValueError(f"{what} are linearly dependent (condition number {cond:.3g})")
    q, _ = np.linalg.qr(rows.T)
    return q


def _project(basis, x):
    return basis @ (basis.T @ x)


def decompose(est, true_sources, index, noise_rows=None):
    """Split ``est`` into target / interference / noise / artifact parts.

    Parameters
    ----------
    est : (n,) estimated source
    true_sources : (r, n) reference sources, linearly independent
    index : row of ``true_sources`` matched with ``est``
    noise_rows : (k, n), optional
        Rows spanning the noise subspace (the noise realizations of the
        mixtures). Without them the noise part is zero.
    """
    est = np.asarray(est, dtype=float)
    S = np.atleast_2d(np.asarray(true_sources, dtype=float))
    s = S[index]
    target = (est @ s) / (s @ s) * s
    Ps = _orth_basis(S, "reference sources")
    in_sources = _project(Ps, est)
    if noise_rows is not None and np.any(noise_rows):
        # the noise part is what the noise rows add to the source span
        Psn = _orth_basis(np.vstack([S, noise_rows]), "sources and noise rows")
        in_all = _project(Psn, est)
    else:
        in_all = in_sources
    return Decomposition(
        target=target,
        interf=in_sources - target,
        noise=in_all - in_sources,
        artifacts=est - in_all,
    )


def _ratio_db(num, den):
    num = float(np.sum(num ** 2))
    den = float(np.sum(den ** 2))
    if num == 0.0:
        return -DB_CAP
    if den == 0.0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def sdr(parts):
    return _ratio_db(parts.target, parts.interf + parts.noise + parts.artifacts)


def sir(parts):
    return _ratio_db(parts.target, parts.interf)


def snr(parts):
    return _ratio_db(parts.target + parts.interf, parts.noise)


def sar(parts):
    return _ratio_db(parts.target + parts.interf + parts.noise, parts.artifacts)


def hoyer_sparseness(x):
    """``(sqrt(n) - ||x||_1 / ||x||_2) / (sqrt(n) - 1)``: 1 for a single active entry, 0 for a flat vector."""
    x = np.ravel(np.asarray(x, dtype=float))
    n = x.size
    l2 = np.linalg.norm(x)
    if l2 == 0:
        raise ValueError("sparseness is undefined for the zero vector")
    if n == 1:
        return 1.0
    return float((np.sqrt(n) - np.abs(x).sum() / l2) / (np.sqrt(n) - 1.0))


def match_sources(S_est, S_true):
    """Assign estimated rows to reference rows.

    Returns ``(perm, scales)`` with ``S_est[perm[i]] ~ scales[i] * S_true[i]``.
    The permutation maximizes the summed squared normalized correlation.
    """
    S_est = np.atleast_2d(np.asarray(S_est, dtype=float))
    S_true = np.atleast_2d(np.asarray(S_true, dtype=float))
    if S_est.shape != S_true.shape:
        raise ValueError(f"shape mismatch {S_est.shape} vs {S_true.shape}")
    r = S_true.shape[0]
    if r > 20:
        warnings.warn(f"matching {r} sources", RuntimeWarning)
    corr = _normalized_corr(S_est, S_true)
    rows, cols = linear_sum_assignment(corr ** 2, maximize=True)
    perm = np.empty(r, dtype=int)
    perm[cols] = rows
    scales = np.array([
        S_est[perm[i]] @ S_true[i] / max(S_true[i] @ S_true[i], np.finfo(float).tiny)
        for i in range(r)
    ])
    return perm, scales


def _normalized_corr(S_est, S_true):
    ne = np.linalg.norm(S_est, axis=1, keepdims=True)
    nt = np.linalg.norm(S_true, axis=1, keepdims=True)
    ne = np.where(ne > 0, ne, 1.0)
    nt = np.where(nt > 0, nt, 1.0)
    return (S_est / ne) @ (S_true / nt).T


def evaluate(S_est, S_true, noise_rows=None):
    """Match sources and compute SDR/SIR/SNR/SAR for every reference source."""
    perm, _ = match_sources(S_est, S_true)
    S_est = np.atleast_2d(S_est)
    scores = {key: np.empty(len(perm)) for key in ("sdr", "sir", "snr", "sar")}
    for i, j in enumerate(perm):
        parts = decompose(S_est[j], S_true, i, noise_rows)
        scores["sdr"][i] = sdr(parts)
        scores["sir"][i] = sir(parts)
        scores["snr"][i] = snr(parts)
        scores["sar"][i] = sar(parts)
    return EvalScores(permutation=perm, **scores)
