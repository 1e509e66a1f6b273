"""Synthetic NMR-like mixtures and matrix file I/O.

Sources are non-negative spike trains convolved (circularly) with a Laplacian
peak; the mixing matrix is the absolute value of a Gaussian matrix and the
noise is white Gaussian, rescaled to hit the requested SNR exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .transforms import Convolution, ConvolutionKernel

__all__ = [
    "NmrSourceSpec",
    "MixtureSpec",
    "Dataset",
    "gen_nmr_sources",
    "gen_mixing",
    "add_noise",
    "make_dataset",
    "scaled_spike_range",
    "save_matrix",
    "load_matrix",
    "MAGIC",
]

MAGIC = b"NGMCAMAT"
_HEADER = struct.Struct("<8sII")


REFERENCE_LENGTH = 1024
REFERENCE_SPIKES = (8, 30)


def scaled_spike_range(n):
    """Spike-count range for length ``n`` at the density of 8 to 30 spikes per 1024 samples."""
    lo = max(1, round(REFERENCE_SPIKES[0] * n / REFERENCE_LENGTH))
    hi = max(lo, round(REFERENCE_SPIKES[1] * n / REFERENCE_LENGTH))
    return lo, hi


@dataclass
class NmrSourceSpec:
    """Spike-train source settings.

    ``spikes_per_source=None`` keeps the peak density of the 1024-sample
    default (8 to 30 spikes) at any length, see :func:`scaled_spike_range`.
    """

    n: int = 1024
    r: int = 12
    spikes_per_source: tuple | None = None
    amplitude_offset: float = 0.1
    kernel: ConvolutionKernel = field(default_factory=ConvolutionKernel)
    seed: int = 0

    def __post_init__(self):
        if self.spikes_per_source is None:
            self.spikes_per_source = scaled_spike_range(self.n)
        lo, hi = self.spikes_per_source
        if not 0 <= lo <= hi:
            raise ValueError("spikes_per_source must be a (low, high) range with 0 <= low <= high")
        if self.n < 1 or self.r < 1:
            raise ValueError("n and r must be positive")


@dataclass
class MixtureSpec:
    m: int = 32
    r: int = 12
    snr_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.m < self.r:
            raise ValueError(f"need m >= r, got m={self.m}, r={self.r}")
        if np.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")


@dataclass
class Dataset:
    S: np.ndarray
    spikes: np.ndarray
    A: np.ndarray
    Z: np.ndarray
    Y: np.ndarray


def gen_nmr_sources(spec, rng=None):
    """Spike-train sources convolved with ``spec.kernel``.

    Returns ``(S, spikes)``, both ``r x n``. Each row has a uniform number of
    spikes in ``spikes_per_source``, uniform positions and amplitudes
    ``|N(0, 1)| + amplitude_offset``.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    lo, hi = spec.spikes_per_source
    spikes = np.zeros((spec.r, spec.n))
    for i in range(spec.r):
        count = rng.integers(lo, hi + 1)
        pos = rng.integers(0, spec.n, size=count)
        amp = np.abs(rng.standard_normal(count)) + spec.amplitude_offset
        np.add.at(spikes[i], pos, amp)
    S = Convolution(spec.n, spec.kernel).forward(spikes)
    # circular convolution of non-negative inputs; clear FFT round-off
    return np.maximum(S, 0.0), spikes


def gen_mixing(m, r, seed=0, normalize=False, rng=None):
    rng = np.random.default_rng(seed) if rng is None else rng
    A = np.abs(rng.standard_normal((m, r)))
    if normalize:
        A /= np.linalg.norm(A, axis=0)
    return A


def add_noise(X, snr_db, seed=0, rng=None):
    """Return ``(X + Z, Z)`` with white Gaussian ``Z`` at exactly ``snr_db``.

    ``snr_db = inf`` gives ``Z = 0``.
    """
    X = np.asarray(X, dtype=float)
    energy = np.sum(X ** 2)
    if energy == 0:
        raise ValueError("cannot set an SNR relative to an all-zero signal")
    if np.isinf(snr_db) and snr_db > 0:
        Z = np.zeros_like(X)
        return X.copy(), Z
    rng = np.random.default_rng(seed) if rng is None else rng
    Z = rng.standard_normal(X.shape)
    Z *= np.sqrt(energy / np.sum(Z ** 2) / 10.0 ** (snr_db / 10.0))
    return X + Z, Z


def make_dataset(n=1024, m=32, r=12, snr_db=20.0, fwhm=4.0, seed=0, spikes_per_source=None):
    """Sources, mixing and noise from three independent streams of ``seed``."""
    s_ss, a_ss, z_ss = np.random.SeedSequence(seed).spawn(3)
    spec = NmrSourceSpec(n=n, r=r, spikes_per_source=spikes_per_source,
                         kernel=ConvolutionKernel(fwhm=fwhm))
    MixtureSpec(m=m, r=r, snr_db=snr_db)  # validates m >= r and the SNR
    S, spikes = gen_nmr_sources(spec, rng=np.random.default_rng(s_ss))
    A = gen_mixing(m, r, rng=np.random.default_rng(a_ss))
    Y, Z = add_noise(A @ S, snr_db, rng=np.random.default_rng(z_ss))
    return Dataset(S=S, spikes=spikes, A=A, Z=Z, Y=Y)


def save_matrix(path, M):
    """Write a matrix as ``.csv`` (headerless, 17 significant digits) or binary.

    The binary layout is a 16-byte header (8-byte magic ``NGMCAMAT``, uint32
    rows, uint32 cols, little endian) followed by row-major float64 LE data.
    """
    path = Path(path)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError("only 2-D matrices can be saved")
    if path.suffix == ".csv":
        np.savetxt(path, M, delimiter=",", fmt="%.17g")
        return
    rows, cols = M.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, rows, cols))
        f.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def load_matrix(path):
    path = Path(path)
    if path.suffix == ".csv":
        return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float, ndmin=2))
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols).astype(float)
