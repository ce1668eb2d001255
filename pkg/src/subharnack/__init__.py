"""Numerical checks of Li-Yau, Harnack and entropy inequalities on sub-Riemannian model spaces."""

__version__ = "0.1.0"

from .cd import CDConstants, CDReport, default_corpus, verify_cd
from .entropy import EntropyParams, EntropySeries, entropies, lemma52_check, monotonicity_report
from .geometry import Kind, ModelSpace, apply_L, gamma, gamma2, gamma2_Z, gamma_Z
from .harnack import HarnackCertificate, check_harnack_41, check_harnack_42, rho_delta
from .heat import HeatSolver, Potential, PotentialBounds, Trajectory, evolve
from .schedule import LiYauSchedule, ScheduleSpec, build_schedule, harnack_margin, lemma31_margin

__all__ = [
    "CDConstants", "CDReport", "default_corpus", "verify_cd",
    "EntropyParams", "EntropySeries", "entropies", "lemma52_check", "monotonicity_report",
    "Kind", "ModelSpace", "apply_L", "gamma", "gamma2", "gamma2_Z", "gamma_Z",
    "HarnackCertificate", "check_harnack_41", "check_harnack_42", "rho_delta",
    "HeatSolver", "Potential", "PotentialBounds", "Trajectory", "evolve",
    "LiYauSchedule", "ScheduleSpec", "build_schedule", "harnack_margin", "lemma31_margin",
]
