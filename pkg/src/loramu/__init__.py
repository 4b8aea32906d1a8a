"""Multiuser chirp-spread-spectrum uplink simulator and power-control library."""

from .channel import (NetworkTopology, TopologyParams, generate_topology,
                      noise_power, sample_channels, synthesize_received)
from .detector import (DetectionResult, ThresholdCalibration, active_bin_stats,
                       calibrate_threshold, count_tuples, enumerate_candidates,
                       error_upper_bound, loglik, ml_detect, prob_support_size,
                       rho, stage1_identify, two_stage_detect)
from .harness import (ExperimentConfig, SERRecord, apply_sum_power_budget,
                      calibrate_single_user_powers, run_ser_experiment, sweep,
                      write_ser_csv)
from .numerics import ActiveBinStats, chi2_sum_cdf, erf, golden_section_min, \
    integrate_semi_infinite
from .phy import (BinPowerTensor, ChirpFrame, SpreadingConfig, bin_powers,
                  dechirp, generate_chirp)
from .power_control import (PowerAllocation, build_mu_vectors, jaccard,
                            objective_similarity, run_power_control)

__version__ = "0.1.0"
