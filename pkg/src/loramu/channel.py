"""Network geometry, fading, noise and received-frame synthesis.

Internal unit conventions: distances in km (gateway height converted from m),
powers in mW, path losses applied in linear scale.  Topology objects are
immutable after creation and JSON-serialisable so experiments can be replayed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .phy import SpreadingConfig, chirps_for_symbols

__all__ = [
    "TopologyParams",
    "NetworkTopology",
    "TopologyError",
    "generate_topology",
    "sample_channels",
    "synthesize_received",
    "noise_power",
]


class TopologyError(RuntimeError):
    """Raised when rejection sampling cannot satisfy the placement constraints."""


@dataclass(frozen=True)
class TopologyParams:
    cell_radius_km: float = 4.0
    gw_circle_radius_km: float = 2.0
    gw_height_m: float = 70.0
    ed_gw_min_km: float = 0.05
    ed_ed_min_km: float = 0.5
    shadowing_std_db: float = 7.8
    pathloss_offset_db: float = 128.95
    pathloss_slope_db: float = 23.2
    max_placement_attempts: int = 100_000


@dataclass(frozen=True)
class NetworkTopology:
    gw_positions: np.ndarray        # (L, 3) km, includes height
    ed_positions: np.ndarray        # (N_u, 2) km, planar
    beta: np.ndarray                # (L, N_u) linear large-scale gains
    sigma2: float                   # noise power per complex sample, mW
    params: TopologyParams = field(default_factory=TopologyParams)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if not np.all(np.isfinite(beta)) or np.any(beta <= 0):
            raise ValueError("beta entries must be strictly positive and finite")

    @property
    def n_gateways(self) -> int:
        return len(self.gw_positions)

    @property
    def n_devices(self) -> int:
        return len(self.ed_positions)

    def to_dict(self) -> dict:
        return {
            "gw_positions": np.asarray(self.gw_positions).tolist(),
            "ed_positions": np.asarray(self.ed_positions).tolist(),
            "beta": np.asarray(self.beta).tolist(),
            "sigma2": float(self.sigma2),
            "params": asdict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkTopology":
        return cls(
            gw_positions=np.asarray(d["gw_positions"], dtype=float),
            ed_positions=np.asarray(d["ed_positions"], dtype=float),
            beta=np.asarray(d["beta"], dtype=float),
            sigma2=float(d["sigma2"]),
            params=TopologyParams(**d["params"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "NetworkTopology":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def pathloss_db(d_km, params: TopologyParams, shadowing_db=0.0):
    """Log-distance path loss in dB; d_km is the 3-D ED-GW distance."""
    return (params.pathloss_offset_db
            + params.pathloss_slope_db * np.log10(d_km)
            + shadowing_db)


def generate_topology(n_gateways: int, n_devices: int, sigma2: float,
                      params: TopologyParams = TopologyParams(),
                      seed=None) -> NetworkTopology:
    """Place gateways on a circle, devices by rejection sampling, draw shadowing.

    Gateways sit equally spaced on the gw_circle_radius_km circle at the
    configured height.  Devices are placed uniformly inside the coverage disc
    until the ED-ED and ED-GW minimum distances hold (horizontal distances).
    Shadowing is frozen per topology.
    """
    rng = _as_rng(seed)
    ang = 2.0 * np.pi * np.arange(n_gateways) / n_gateways
    h_km = params.gw_height_m / 1000.0
    gw = np.column_stack([
        params.gw_circle_radius_km * np.cos(ang),
        params.gw_circle_radius_km * np.sin(ang),
        np.full(n_gateways, h_km),
    ])

    eds = []
    attempts = 0
    while len(eds) < n_devices:
        attempts += 1
        if attempts > params.max_placement_attempts:
            raise TopologyError(
                "rejection sampling exceeded "
                f"{params.max_placement_attempts} attempts; the configured "
                "minimum distances are too dense for the coverage disc")
        rad = params.cell_radius_km * np.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * np.pi)
        cand = np.array([rad * np.cos(theta), rad * np.sin(theta)])
        d_gw = np.hypot(gw[:, 0] - cand[0], gw[:, 1] - cand[1])
        if d_gw.min() < params.ed_gw_min_km:
            continue
        if any(np.hypot(*(e - cand)) < params.ed_ed_min_km for e in eds):
            continue
        eds.append(cand)
    eds = np.array(eds).reshape(n_devices, 2)

    dx = gw[:, None, 0] - eds[None, :, 0]
    dy = gw[:, None, 1] - eds[None, :, 1]
    d3 = np.sqrt(dx ** 2 + dy ** 2 + h_km ** 2)       # (L, N_u), 3-D distance
    shadow = rng.normal(0.0, params.shadowing_std_db, size=d3.shape)
    beta = 10.0 ** (-pathloss_db(d3, params, shadow) / 10.0)
    return NetworkTopology(gw_positions=gw, ed_positions=eds, beta=beta,
                           sigma2=float(sigma2), params=params)


def sample_channels(topology: NetworkTopology, n_antennas: int, seed=None,
                    size=None) -> np.ndarray:
    """Draw i.i.d. Rayleigh gains h[..., l, g, t], CN(0, beta[l, g]) per antenna.

    Real and imaginary parts are each Gaussian with variance beta/2.  With
    size=None the result is (L, N_u, n_antennas); an int size adds a leading
    batch dimension.
    """
    if n_antennas < 1:
        raise ValueError("n_antennas must be >= 1")
    rng = _as_rng(seed)
    L, n_u = topology.beta.shape
    shape = (L, n_u, n_antennas) if size is None else (size, L, n_u, n_antennas)
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return g * np.sqrt(topology.beta[..., None] / 2.0)


def synthesize_received(topology: NetworkTopology, channels: np.ndarray,
                        powers, symbols, cfg: SpreadingConfig, seed=None,
                        sigma2=None) -> np.ndarray:
    """Superpose all devices' chirps through the fading channels, add noise.

    channels: (..., L, N_u, n_antennas); symbols: (..., N_u) in [0, M).
    Returns y with shape (..., L, n_antennas, M).  sigma2 overrides the
    topology noise power for the injected noise only (useful for noise-free
    or noise-scaled experiments).
    """
    p = np.asarray(getattr(powers, "p", powers), dtype=float)
    if np.any(p < 0):
        raise ValueError("transmit powers must be non-negative")
    channels = np.asarray(channels)
    symbols = np.asarray(symbols)
    n_u = topology.n_devices
    if channels.shape[-2] != n_u or symbols.shape[-1] != n_u or len(p) != n_u:
        raise ValueError("channels, powers and symbols disagree on N_u")
    if channels.shape[-3] != topology.n_gateways:
        raise ValueError("channels disagree with topology on L")

    x = chirps_for_symbols(cfg, symbols) * np.sqrt(p)[..., :, None]
    y = np.einsum("...gm,...lgt->...ltm", x, channels)
    s2 = topology.sigma2 if sigma2 is None else sigma2
    if s2 > 0:
        rng = _as_rng(seed)
        w = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(s2 / 2.0) * w
    return y


def noise_power(bandwidth_hz: float, noise_figure_db: float = 6.0) -> float:
    """Thermal noise power per complex sample in mW (-174 dBm/Hz floor)."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    dbm = -174.0 + 10.0 * np.log10(bandwidth_hz) + noise_figure_db
    return float(10.0 ** (dbm / 10.0))
