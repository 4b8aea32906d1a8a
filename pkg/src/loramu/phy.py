"""Chirp-spread-spectrum baseband primitives.

Generates the orthogonal up-chirp alphabet, dechirps received samples and
transforms them to per-bin received powers with a unitary DFT.  All functions
are pure; arrays may carry arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpreadingConfig",
    "ChirpFrame",
    "BinPowerTensor",
    "generate_chirp",
    "chirps_for_symbols",
    "base_chirp",
    "dechirp",
    "bin_powers",
]


@dataclass(frozen=True)
class SpreadingConfig:
    """Spreading parameters: the chirp alphabet has M = 2**sf symbols of M samples.

    sf = 5 and 6 are allowed on top of the standard 7..12 range so that
    exhaustive-search experiments stay tractable.
    """

    sf: int
    bandwidth_hz: float = 125e3

    def __post_init__(self):
        if not 5 <= self.sf <= 12:
            raise ValueError(f"sf must be in [5, 12], got {self.sf}")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")

    @property
    def M(self) -> int:
        return 1 << self.sf


@dataclass(frozen=True)
class ChirpFrame:
    """One symbol duration of received baseband samples at one gateway.

    samples has shape (n_antennas, M).
    """

    samples: np.ndarray
    gateway_id: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise ValueError("samples must be a 2-D (n_antennas, M) array")


@dataclass(frozen=True)
class BinPowerTensor:
    """Per-gateway bin powers r[..., l, k] and their fused statistic upsilon.

    upsilon[..., k] = sum_l r[..., l, k] / n_antennas.  Leading dimensions are
    batch dimensions (independent frames).
    """

    r: np.ndarray
    upsilon: np.ndarray
    n_antennas: int
    n_gateways: int


def generate_chirp(cfg: SpreadingConfig, m: int) -> np.ndarray:
    """Return chirp x_m as M complex samples.

    The shifted chirp is evaluated through the quadratic phase at argument
    (n + m) rather than by rolling the base sequence; the base chirp has
    period M in n, so this matches the cyclic shift exactly.
    """
    M = cfg.M
    if not 0 <= m < M:
        raise ValueError(f"symbol index {m} outside [0, {M})")
    n = np.arange(M, dtype=float) + m
    return np.exp(2j * np.pi * (n * n / (2.0 * M) - n / 2.0))


def chirps_for_symbols(cfg: SpreadingConfig, m) -> np.ndarray:
    """Vectorised chirp lookup: m with shape (...,) -> samples (..., M)."""
    M = cfg.M
    m = np.asarray(m)
    if m.size and (m.min() < 0 or m.max() >= M):
        raise ValueError("symbol index outside alphabet")
    n = np.arange(M, dtype=float) + m[..., None]
    return np.exp(2j * np.pi * (n * n / (2.0 * M) - n / 2.0))


def base_chirp(cfg: SpreadingConfig) -> np.ndarray:
    return generate_chirp(cfg, 0)


def dechirp(frame, cfg: SpreadingConfig) -> np.ndarray:
    """Multiply received samples (..., M) by the conjugate base chirp.

    A noiseless h*x_m input becomes a pure tone at discrete frequency m.
    """
    samples = frame.samples if isinstance(frame, ChirpFrame) else frame
    samples = np.asarray(samples)
    if samples.shape[-1] != cfg.M:
        raise ValueError(
            f"frame has {samples.shape[-1]} samples, expected {cfg.M}"
        )
    return samples * np.conj(base_chirp(cfg))


def bin_powers(dechirped: np.ndarray, cfg: SpreadingConfig) -> BinPowerTensor:
    """Unitary M-point DFT of dechirped samples and per-bin power reduction.

    dechirped has shape (..., L, n_antennas, M).  Returns r with shape
    (..., L, M) (sum of |Z|^2 over antennas) and upsilon with shape (..., M).
    """
    z = np.asarray(dechirped)
    if z.ndim < 3:
        raise ValueError("expected shape (..., L, n_antennas, M)")
    if z.shape[-1] != cfg.M:
        raise ValueError(f"last axis is {z.shape[-1]}, expected M={cfg.M}")
    n_antennas = z.shape[-2]
    n_gateways = z.shape[-3]
    Z = np.fft.fft(z, axis=-1) / np.sqrt(cfg.M)
    r = np.sum(np.abs(Z) ** 2, axis=-2)
    upsilon = r.sum(axis=-2) / n_antennas
    return BinPowerTensor(r=r, upsilon=upsilon, n_antennas=n_antennas,
                          n_gateways=n_gateways)
