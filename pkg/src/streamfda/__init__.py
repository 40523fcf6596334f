"""Streaming mean and covariance estimation for irregular functional data.

Observations arrive in blocks of subjects, each measured at its own
random times with noise.  The online estimator folds every block into a
fixed-size bank of kernel-smoothing statistics and discards the raw
data, yet tracks the pooled batch smoother at a provable efficiency.
"""

from __future__ import annotations

from .bandwidth import (BOUND_CONSTANTS, PilotBandwidths, PilotState,
                        efficiency_lower_bound, integrate_curve,
                        integrate_surface, online_bandwidth,
                        pilot_bandwidths, pilot_candidates, trim_mask)
from .batch import BatchResult, batch_cov, batch_fit, batch_mean, merge_blocks
from .blockio import (iter_blocks, load_estimator, load_snapshot, parse_block,
                      save_estimator, save_snapshot, serialize_block)
from .engine import FitConfig, OnlineEstimator
from .errors import (AllDegenerate, DomainError, InvalidBandwidth, ParseError,
                     ShapeMismatch, SnapshotError, StreamFdaError)
from .fpca import FpcaResult, fpca, trapezoid_weights, write_fpca_csv
from .kernels import (Block, GridSpec, Kernel, Subject, cov_substats,
                      make_kernel, mean_substats, observation_counts)
from .simulate import (ChainMoments, ExperimentReport, ReferenceChain,
                       SimConfig, chain_moments, generate_block, imse,
                       run_experiment, true_cov, true_mean, write_report)
from .stream import (CandidateBank, CountLedger, CurveEstimate,
                     SurfaceEstimate, candidate_sequence, generate_candidates,
                     match_candidates, update_counts)

__version__ = "0.1.0"

__all__ = [
    "AllDegenerate", "BatchResult", "Block", "BOUND_CONSTANTS",
    "CandidateBank", "ChainMoments", "CountLedger", "CurveEstimate",
    "DomainError", "ExperimentReport", "FitConfig", "FpcaResult", "GridSpec",
    "InvalidBandwidth", "Kernel", "OnlineEstimator", "ParseError",
    "PilotBandwidths", "PilotState", "ReferenceChain", "ShapeMismatch",
    "SimConfig", "SnapshotError", "StreamFdaError", "Subject",
    "SurfaceEstimate", "batch_cov", "batch_fit", "batch_mean",
    "candidate_sequence", "chain_moments", "cov_substats",
    "efficiency_lower_bound", "fpca", "generate_block",
    "generate_candidates", "imse", "integrate_curve", "integrate_surface",
    "iter_blocks", "load_estimator", "load_snapshot", "make_kernel",
    "match_candidates", "mean_substats", "merge_blocks",
    "observation_counts", "online_bandwidth", "parse_block",
    "pilot_bandwidths", "pilot_candidates", "run_experiment",
    "save_estimator", "save_snapshot", "serialize_block",
    "trapezoid_weights", "trim_mask", "true_cov", "true_mean",
    "update_counts", "write_fpca_csv", "write_report", "__version__",
]
