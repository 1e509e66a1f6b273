"""Linear operators used as sparsifying transforms.

All operators act on the last axis, so a source matrix ``S`` (one source per
row) is transformed with ``W.forward(S)`` (that is ``S W^T``) and a coefficient
matrix goes back to the signal domain with ``W.adjoint(S_w)`` (``S_w W``).

Boundaries are periodic everywhere. Circular filtering is done in the Fourier
domain with precomputed transfer functions, which keeps forward/adjoint pairs
exact to rounding error.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FILTERS",
    "ConvolutionKernel",
    "LinearTransform",
    "Identity",
    "MatrixOperator",
    "OrthoWavelet",
    "UndecimatedWavelet",
    "Convolution",
    "make_transform",
    "udwt_forward",
    "udwt_adjoint",
    "odwt_forward",
    "odwt_inverse",
    "conv_apply",
    "conv_adjoint",
    "operator_norm",
    "ConvergenceWarning",
]

_SQ3 = np.sqrt(3.0)

# Orthonormal low-pass filters (unit l2 norm, sum sqrt(2)).
# "daubechies4" is the 4-tap Daubechies filter (two vanishing moments),
# "symmlet4" the 8-tap least-asymmetric filter with four vanishing moments.
FILTERS = {
    "haar": np.array([1.0, 1.0]) / np.sqrt(2.0),
    "daubechies4": np.array([1 + _SQ3, 3 + _SQ3, 3 - _SQ3, 1 - _SQ3]) / (4 * np.sqrt(2.0)),
    "symmlet4": np.array([
        -0.07576571478927333, -0.02963552764599851, 0.49761866763201545,
        0.8037387518059161, 0.29785779560527736, -0.09921954357684722,
        -0.012603967262037833, 0.0322231006040427,
    ]),
}


class ConvergenceWarning(RuntimeWarning):
    pass


def _polish(h, moments, steps=6):
    """Newton-refine a tabulated filter onto the exact orthonormality conditions.

    Equations: unit norm, zero double-shift correlations and ``moments``
    vanishing moments of the high-pass filter. Tabulated coefficients are only
    accurate to ~1e-13, which would leak into the tight-frame identity.
    """
    L = len(h)
    k = np.arange(L)
    sign = (-1.0) ** k

    def residual(h):
        eqs = [h @ h - 1.0]
        eqs += [h[: L - 2 * m] @ h[2 * m:] for m in range(1, L // 2)]
        eqs += [(sign * k ** q) @ h for q in range(moments)]
        return np.array(eqs)

    def jacobian(h):
        rows = [2 * h]
        for m in range(1, L // 2):
            r = np.zeros(L)
            r[: L - 2 * m] += h[2 * m:]
            r[2 * m:] += h[: L - 2 * m]
            rows.append(r)
        rows += [sign * k ** q for q in range(moments)]
        return np.array(rows, dtype=float)

    for _ in range(steps):
        h = h - np.linalg.lstsq(jacobian(h), residual(h), rcond=None)[0]
    return h


FILTERS["symmlet4"] = _polish(FILTERS["symmlet4"], moments=4)


def _lowpass(name):
    try:
        h = FILTERS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown wavelet {name!r}, expected one of {sorted(FILTERS)}") from None
    return h / np.linalg.norm(h)


def _highpass(h):
    k = np.arange(len(h))
    return (-1.0) ** k * h[::-1]


def _circular_taps(taps, offsets, n):
    """Length-``n`` periodic array holding ``taps`` at ``offsets mod n``."""
    out = np.zeros(n)
    np.add.at(out, np.mod(offsets, n), taps)
    return out


def _check_last(x, size, what):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != size:
        got = x.shape[-1] if x.ndim else "scalar"
        raise ValueError(f"{what}: expected last axis of length {size}, got {got}")
    return x


def _check_dyadic(n, levels):
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if n % (2 ** levels):
        raise ValueError(f"signal length {n} is not divisible by 2**{levels}")


class LinearTransform:
    """Forward/adjoint operator pair ``W: R^n -> R^p``."""

    kind = "abstract"
    n: int
    p: int
    tight_frame = False

    def forward(self, x):
        raise NotImplementedError

    def adjoint(self, c):
        raise NotImplementedError

    def norm(self):
        """Spectral norm of the operator."""
        return operator_norm(self)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, p={self.p})"


class Identity(LinearTransform):
    kind = "identity"
    tight_frame = True

    def __init__(self, n):
        self.n = self.p = int(n)

    def forward(self, x):
        return _check_last(x, self.n, "identity").copy()

    def adjoint(self, c):
        return _check_last(c, self.p, "identity").copy()

    def norm(self):
        return 1.0


class MatrixOperator(LinearTransform):
    """Dense matrix ``M`` (p x n) wrapped as an operator on the last axis."""

    kind = "matrix"

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.p, self.n = self.matrix.shape
        gram = self.matrix.T @ self.matrix
        self.tight_frame = bool(np.allclose(gram, np.eye(self.n), atol=1e-12))

    def forward(self, x):
        return _check_last(x, self.n, "matrix forward") @ self.matrix.T

    def adjoint(self, c):
        return _check_last(c, self.p, "matrix adjoint") @ self.matrix


class _FourierBank(LinearTransform):
    """Bank of circular correlations followed by optional decimation.

    ``_bands`` is a list of (transfer function, decimation) pairs; band ``b``
    computes ``irfft(rfft(x) * conj(T_b))[::dec_b]``.
    """

    _bands: list

    def forward(self, x):
        x = _check_last(x, self.n, f"{self.kind} forward")
        X = np.fft.rfft(x, axis=-1)
        out = [np.fft.irfft(X * np.conj(T), n=self.n, axis=-1)[..., ::dec] for T, dec in self._bands]
        return np.concatenate(out, axis=-1)

    def adjoint(self, c):
        c = _check_last(c, self.p, f"{self.kind} adjoint")
        acc = 0.0
        start = 0
        for T, dec in self._bands:
            size = self.n // dec
            block = c[..., start:start + size]
            start += size
            if dec > 1:
                up = np.zeros(c.shape[:-1] + (self.n,))
                up[..., ::dec] = block
                block = up
            acc = acc + np.fft.rfft(block, axis=-1) * T
        return np.fft.irfft(acc, n=self.n, axis=-1)


class OrthoWavelet(_FourierBank):
    """Periodized orthonormal discrete wavelet transform (p = n).

    Coefficients are ordered coarse to fine: ``[a_J, d_J, ..., d_1]``.
    """

    kind = "orthonormal-wavelet"
    tight_frame = True

    def __init__(self, n, wavelet="symmlet4", levels=3):
        n, levels = int(n), int(levels)
        _check_dyadic(n, levels)
        self.n = self.p = n
        self.wavelet = wavelet
        self.levels = levels
        h = _lowpass(wavelet)
        g = _highpass(h)
        self.filter = h
        # Level j filters act on the approximation of length n/2^(j-1); expressed on
        # the full grid this is the filter dilated by 2^(j-1), with decimation 2^j.
        taps = np.arange(len(h))
        bands = []
        low = np.ones(n // 2 + 1, dtype=complex)
        for j in range(levels):
            s = 2 ** j
            Hj = np.fft.rfft(_circular_taps(h, taps * s, n))
            Gj = np.fft.rfft(_circular_taps(g, taps * s, n))
            bands.append((low * Gj, 2 * s))
            low = low * Hj
        bands.append((low, 2 ** levels))
        self._bands = bands[::-1]

    def inverse(self, c):
        return self.adjoint(c)

    def norm(self):
        return 1.0

    def coarse_mask(self):
        mask = np.zeros(self.p, dtype=bool)
        mask[: self.n >> self.levels] = True
        return mask


class UndecimatedWavelet(_FourierBank):
    """Undecimated (a trous) wavelet tight frame, p = n (levels + 1).

    Each analysis filter is scaled by 1/sqrt(2) per level so that
    ``adjoint(forward(x)) == x``. Layout: ``[a_J, d_J, ..., d_1]``, each block of
    length n.
    """

    kind = "undecimated-wavelet"
    tight_frame = True

    def __init__(self, n, wavelet="symmlet4", levels=3):
        n, levels = int(n), int(levels)
        _check_dyadic(n, levels)
        self.n = n
        self.p = n * (levels + 1)
        self.wavelet = wavelet
        self.levels = levels
        h = _lowpass(wavelet) / np.sqrt(2.0)
        g = _highpass(_lowpass(wavelet)) / np.sqrt(2.0)
        self.filter = h * np.sqrt(2.0)
        taps = np.arange(len(h))
        bands = []
        low = np.ones(n // 2 + 1, dtype=complex)
        for j in range(levels):
            s = 2 ** j
            Hj = np.fft.rfft(_circular_taps(h, taps * s, n))
            Gj = np.fft.rfft(_circular_taps(g, taps * s, n))
            bands.append((low * Gj, 1))
            low = low * Hj
        bands.append((low, 1))
        self._bands = bands[::-1]

    def norm(self):
        return 1.0

    def coarse_mask(self):
        """Boolean mask of the coarse approximation coefficients."""
        mask = np.zeros(self.p, dtype=bool)
        mask[: self.n] = True
        return mask


@dataclass(frozen=True)
class ConvolutionKernel:
    """Symmetric peak shape, normalized to a unit maximum at offset 0.

    ``support`` is the truncation half-width; by default 8 * fwhm samples.
    """

    shape: str = "laplacian"
    fwhm: float = 4.0
    support: int | None = None

    def __post_init__(self):
        if self.shape not in ("laplacian", "delta"):
            raise ValueError(f"unknown kernel shape {self.shape!r}")
        if self.shape == "laplacian" and not self.fwhm > 0:
            raise ValueError("fwhm must be positive")

    @property
    def half_width(self):
        if self.shape == "delta":
            return 0
        if self.support is not None:
            return int(self.support)
        return int(np.ceil(8 * self.fwhm))

    def offsets(self, half_width=None):
        hw = self.half_width if half_width is None else half_width
        return np.arange(-hw, hw + 1)

    def values(self, half_width=None):
        t = self.offsets(half_width)
        if self.shape == "delta":
            return (t == 0).astype(float)
        return np.exp(-np.abs(t) * np.log(2.0) * 2.0 / self.fwhm)


class Convolution(_FourierBank):
    """Circular convolution ``x -> f * x`` with a centered kernel (p = n).

    Kernels wider than the signal are truncated to half-width ``(n - 1) // 2``.
    """

    kind = "convolution"

    def __init__(self, n, kernel=None):
        self.n = self.p = int(n)
        self.kernel = ConvolutionKernel() if kernel is None else kernel
        hw = min(self.kernel.half_width, (self.n - 1) // 2)
        taps = _circular_taps(self.kernel.values(hw), self.kernel.offsets(hw), self.n)
        self.taps = taps
        # forward is a convolution, so store the conjugate of the kernel response
        self._bands = [(np.conj(np.fft.rfft(taps)), 1)]
        self.tight_frame = self.kernel.shape == "delta"

    def norm(self):
        return float(np.max(np.abs(self._bands[0][0])))


def make_transform(kind, n, wavelet="symmlet4", levels=3, kernel=None):
    """Build an operator from its kind name."""
    if kind == "identity":
        return Identity(n)
    if kind in ("orthonormal-wavelet", "ortho"):
        return OrthoWavelet(n, wavelet, levels)
    if kind in ("undecimated-wavelet", "udwt"):
        return UndecimatedWavelet(n, wavelet, levels)
    if kind in ("convolution", "conv"):
        return Convolution(n, kernel)
    raise ValueError(f"unknown transform kind {kind!r}")


def udwt_forward(x, t):
    if not isinstance(t, UndecimatedWavelet):
        raise ValueError("udwt_forward needs an UndecimatedWavelet")
    return t.forward(x)


def udwt_adjoint(c, t):
    if not isinstance(t, UndecimatedWavelet):
        raise ValueError("udwt_adjoint needs an UndecimatedWavelet")
    return t.adjoint(c)


def odwt_forward(x, t):
    if not isinstance(t, OrthoWavelet):
        raise ValueError("odwt_forward needs an OrthoWavelet")
    return t.forward(x)


def odwt_inverse(c, t):
    if not isinstance(t, OrthoWavelet):
        raise ValueError("odwt_inverse needs an OrthoWavelet")
    return t.inverse(c)


def conv_apply(x, k):
    x = np.asarray(x, dtype=float)
    return Convolution(x.shape[-1], k).forward(x)


def conv_adjoint(y, k):
    y = np.asarray(y, dtype=float)
    return Convolution(y.shape[-1], k).adjoint(y)


def operator_norm(op, max_iter=100, tol=1e-8, seed=0):
    """Spectral norm ``||W||_{s,2}`` by power iteration on ``W^T W``.

    ``op`` is a :class:`LinearTransform` or a 2-D array. Emits a
    :class:`ConvergenceWarning` and returns the last estimate when the relative
    change has not dropped below ``tol`` after ``max_iter`` iterations.
    """
    if not isinstance(op, LinearTransform):
        op = MatrixOperator(op)
    x = np.random.default_rng(seed).standard_normal(op.n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = op.adjoint(op.forward(x))
        new = np.linalg.norm(y)
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - est) <= tol * new:
            return float(np.sqrt(new))
        est = new
    warnings.warn(f"power iteration did not converge in {max_iter} iterations", ConvergenceWarning)
    return float(np.sqrt(est))
