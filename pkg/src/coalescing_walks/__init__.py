"""Coalescing random walks on the discrete torus and Kingman's block-count limit."""
from .config import THRESHOLDS, Thresholds
from .engine import (
    ParticleConfig,
    StopRule,
    TrajectoryRecord,
    is_scattered,
    rate_R,
    replacement_statistic,
    run_replicas,
    simulate,
    step,
)
from .kingman import SValue, TestFunction, carre_du_champ, generator_L, lam, sample_path
from .lattice import TorusGeometry, jump_kernel, torus_distance, walk_transition_probability

__version__ = "0.1.0"
