"""Experiment orchestration: Monte Carlo SER runs, sweeps and CSV emission.

Every random quantity derives from the experiment seed through fixed
SeedSequence paths, so any emitted record can be regenerated bit-exactly.
Topologies depend only on (seed, topology index), never on the swept axis,
which makes arms of a comparison share their realisations automatically.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (NetworkTopology, TopologyParams, generate_topology,
                      noise_power, sample_channels, synthesize_received)
from .detector import (ExhaustiveScorer, TwoStageDetector, active_bin_stats,
                       calibrate_threshold)
from .phy import SpreadingConfig, bin_powers, dechirp
from .power_control import PowerAllocation, run_power_control

__all__ = [
    "ExperimentConfig",
    "SERRecord",
    "calibrate_single_user_powers",
    "apply_sum_power_budget",
    "snr_floor_violations",
    "run_ser_experiment",
    "sweep",
    "write_ser_csv",
    "ser_rows",
]

log = logging.getLogger(__name__)

SWEEP_AXES = ("n_antennas", "alpha", "snr")


@dataclass(frozen=True)
class ExperimentConfig:
    """Simulation parameters; defaults follow the standard scenario set-up."""

    sf: int = 7
    bandwidth_hz: float = 125e3
    noise_figure_db: float = 6.0
    n_gateways: int = 3
    n_devices: int = 3
    n_antennas: int = 35
    snr_grid_db: tuple = (-12.0,)
    trials: int = 1000
    seed: int = 0
    alpha: float = 1.061
    detector: str = "two-stage"          # "two-stage" | "ml"
    power_control: bool = True
    surjective: bool = True
    n_topologies: int = 1
    gw_height_m: float = 70.0
    ed_gw_min_km: float = 0.05
    ed_ed_min_km: float = 0.5
    cell_radius_km: float = 4.0
    gw_circle_radius_km: float = 2.0
    shadowing_std_db: float = 7.8
    snr_floor_fraction: float = 0.5      # epsilon as a fraction of floor at p_max
    pc_tol: float = 1e-5
    pc_max_iter: int = 100
    noise_scale_db: float = 0.0          # scales only the injected noise
    chunk: int = 256
    ml_budget: int = 1 << 20

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.detector not in ("two-stage", "ml"):
            raise ValueError(f"unknown detector {self.detector!r}")
        if not all(np.isfinite(self.snr_grid_db)):
            raise ValueError("SNR grid must be finite")
        object.__setattr__(self, "snr_grid_db",
                           tuple(float(s) for s in self.snr_grid_db))

    @property
    def spreading(self) -> SpreadingConfig:
        return SpreadingConfig(sf=self.sf, bandwidth_hz=self.bandwidth_hz)

    @property
    def topology_params(self) -> TopologyParams:
        return TopologyParams(
            cell_radius_km=self.cell_radius_km,
            gw_circle_radius_km=self.gw_circle_radius_km,
            gw_height_m=self.gw_height_m,
            ed_gw_min_km=self.ed_gw_min_km,
            ed_ed_min_km=self.ed_ed_min_km,
            shadowing_std_db=self.shadowing_std_db,
        )

    @property
    def sigma2(self) -> float:
        return noise_power(self.bandwidth_hz, self.noise_figure_db)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snr_grid_db"] = list(d["snr_grid_db"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "snr_grid_db" in d:
            d["snr_grid_db"] = tuple(d["snr_grid_db"])
        return cls(**d)


@dataclass(frozen=True)
class SERRecord:
    experiment_id: str
    snr_db: float
    n_u: int
    n_t: int
    alpha: float
    detector: str
    power_control: bool
    trials: int
    errors: tuple                 # per-device error counts
    seed: int

    @property
    def ser(self) -> tuple:
        return tuple(e / self.trials for e in self.errors)

    @property
    def ser_avg(self) -> float:
        return float(np.mean(self.ser))

    @property
    def ser_best(self) -> float:
        return float(np.min(self.ser))

    @property
    def ser_worst(self) -> float:
        return float(np.max(self.ser))


def calibrate_single_user_powers(topology: NetworkTopology,
                                 reference_snr_db: float) -> np.ndarray:
    """Per-device power reaching the reference per-sample SNR at the closest GW."""
    snr_lin = 10.0 ** (reference_snr_db / 10.0)
    best_beta = topology.beta.max(axis=0)        # (N_u,)
    return snr_lin * topology.sigma2 / best_beta


def snr_floor_violations(topology: NetworkTopology, p, cfg: SpreadingConfig,
                         epsilon: float) -> list:
    """Devices whose average received SNR falls below the floor (with slack)."""
    p = np.asarray(getattr(p, "p", p), dtype=float)
    snr = (cfg.M * topology.beta * p[None, :] /
           (topology.n_gateways * topology.sigma2)).sum(axis=0)
    return np.flatnonzero(snr < epsilon - 1e-9).tolist()


def apply_sum_power_budget(alloc: PowerAllocation, p_su: np.ndarray,
                           topology: NetworkTopology | None = None,
                           cfg: SpreadingConfig | None = None) -> PowerAllocation:
    """Scale the allocation so its sum never exceeds the single-user sum.

    Scaling is uniform, preserving the power-control ratios.  SNR-floor
    violations introduced by the scaling are logged, not fatal.
    """
    p = np.asarray(alloc.p, dtype=float)
    p_su = np.asarray(p_su, dtype=float)
    if len(p) != len(p_su):
        raise ValueError("allocation and single-user powers disagree on N_u")
    total, budget = p.sum(), p_su.sum()
    if total > budget:
        p = p * (budget / total)
    if topology is not None and cfg is not None:
        bad = snr_floor_violations(topology, p, cfg, alloc.epsilon)
        if bad:
            log.warning("sum-power scaling leaves device(s) %s below the "
                        "SNR floor", bad)
    return PowerAllocation(p=p, p_max=alloc.p_max, epsilon=alloc.epsilon)


def _topology_at(config: ExperimentConfig, topo_idx: int) -> NetworkTopology:
    ss = np.random.SeedSequence([config.seed, 0x70, topo_idx])
    return generate_topology(config.n_gateways, config.n_devices,
                             config.sigma2, config.topology_params, seed=ss)


def _powers_at(config: ExperimentConfig, topology: NetworkTopology,
               snr_db: float) -> np.ndarray:
    scfg = config.spreading
    p_su = calibrate_single_user_powers(topology, snr_db)
    if not config.power_control or config.n_devices < 2:
        return p_su
    p_max = float(p_su.max())
    floor = (scfg.M * topology.beta * p_max /
             (config.n_gateways * topology.sigma2)).sum(axis=0)
    epsilon = config.snr_floor_fraction * float(floor.min())
    alloc, _ = run_power_control(topology, scfg, p_max, epsilon,
                                 alpha=config.alpha, tol=config.pc_tol,
                                 max_iter=config.pc_max_iter)
    return apply_sum_power_budget(alloc, p_su, topology, scfg).p


def _make_detector(config: ExperimentConfig, topology: NetworkTopology, p):
    scfg = config.spreading
    if config.detector == "ml":
        scorer = ExhaustiveScorer(topology, p, scfg, config.n_antennas,
                                  budget=config.ml_budget)
        return lambda r, ups: scorer.detect_batch(r)
    stats = active_bin_stats(topology, p, scfg, config.n_antennas)
    calib = calibrate_threshold(stats)
    det = TwoStageDetector(topology, p, scfg, config.n_antennas, calib.p_th,
                           surjective=config.surjective)
    return det.detect_batch


def _simulate_point(config: ExperimentConfig, topology: NetworkTopology,
                    p: np.ndarray, detect_batch, point_idx: int,
                    topo_idx: int) -> np.ndarray:
    """Run config.trials detections; returns per-(trial, device) error flags."""
    scfg = config.spreading
    n_u, n_t = config.n_devices, config.n_antennas
    ss = np.random.SeedSequence([config.seed, 0x51, point_idx, topo_idx])
    rng_m, rng_h, rng_w = (np.random.default_rng(s) for s in ss.spawn(3))
    sigma2 = topology.sigma2 * 10.0 ** (config.noise_scale_db / 10.0)

    errors = np.empty((config.trials, n_u), dtype=bool)
    done = 0
    while done < config.trials:
        b = min(config.chunk, config.trials - done)
        m = rng_m.integers(0, scfg.M, size=(b, n_u))
        h = sample_channels(topology, n_t, rng_h, size=b)
        y = synthesize_received(topology, h, p, m, scfg, seed=rng_w,
                                sigma2=sigma2)
        bp = bin_powers(dechirp(y, scfg), scfg)
        m_hat = detect_batch(bp.r, bp.upsilon)
        errors[done:done + b] = m_hat != m
        done += b
    return errors


def run_ser_experiment(config: ExperimentConfig,
                       return_trial_errors: bool = False):
    """One SERRecord per SNR grid point, aggregated over the topology draws."""
    records = []
    trial_errors = []
    topologies = [_topology_at(config, t) for t in range(config.n_topologies)]
    for pi, snr_db in enumerate(config.snr_grid_db):
        per_topo = []
        for ti, topo in enumerate(topologies):
            p = _powers_at(config, topo, snr_db)
            detect = _make_detector(config, topo, p)
            per_topo.append(_simulate_point(config, topo, p, detect, pi, ti))
        errs = np.concatenate(per_topo, axis=0)
        records.append(SERRecord(
            experiment_id=_experiment_id(config),
            snr_db=snr_db,
            n_u=config.n_devices,
            n_t=config.n_antennas,
            alpha=config.alpha,
            detector=config.detector,
            power_control=config.power_control,
            trials=len(errs),
            errors=tuple(int(c) for c in errs.sum(axis=0)),
            seed=config.seed,
        ))
        if return_trial_errors:
            trial_errors.append(errs)
    return (records, trial_errors) if return_trial_errors else records


def sweep(config: ExperimentConfig, axis: str, values) -> list:
    """Re-run the experiment per axis value with common seeds; flat record list."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    records = []
    for v in values:
        if axis == "snr":
            cfg = replace(config, snr_grid_db=(float(v),))
        elif axis == "n_antennas":
            cfg = replace(config, n_antennas=int(v))
        else:
            cfg = replace(config, alpha=float(v))
        records.extend(run_ser_experiment(cfg))
    return records


def _experiment_id(config: ExperimentConfig) -> str:
    pc = "pc" if config.power_control else "nopc"
    return (f"{config.detector}-sf{config.sf}-nu{config.n_devices}"
            f"-nt{config.n_antennas}-{pc}-a{config.alpha:g}-s{config.seed}")


def ser_rows(records) -> tuple:
    """(header, rows) in the canonical delimited layout."""
    n_u = max(r.n_u for r in records)
    header = (["experiment_id", "snr_db", "n_u", "n_t", "alpha", "detector",
               "power_control", "trials"]
              + [f"errors_g{g + 1}" for g in range(n_u)]
              + ["ser_avg", "ser_best", "ser_worst", "seed"])
    rows = []
    for r in records:
        errs = list(r.errors) + [""] * (n_u - r.n_u)
        rows.append([r.experiment_id, f"{r.snr_db:.6g}", r.n_u, r.n_t,
                     f"{r.alpha:.6g}", r.detector, int(r.power_control),
                     r.trials] + errs
                    + [f"{r.ser_avg:.12g}", f"{r.ser_best:.12g}",
                       f"{r.ser_worst:.12g}", r.seed])
    return header, rows


def write_ser_csv(records, path) -> None:
    header, rows = ser_rows(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
