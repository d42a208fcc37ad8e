"""RIS-aided bistatic EMVS-MIMO radar: simulation, PARAFAC estimation with
beyond-half-wavelength phase disambiguation, RIS phase design and CRB."""

__version__ = "0.1.0"

from .crb import CrbResult, build_jacobians, compute_crb
from .estimation import TargetEstimate, estimate_targets, match_to_truth
from .parafac import FactorEstimate, TalsOptions, tals
from .ris_opt import build_phi, optimize_phases, randomize, solve_sdp
from .signal_model import (Angles, ArrayGeometry, Polarization, SceneConfig,
                           SnapshotTensor, Target, synthesize)

__all__ = [
    "Angles", "ArrayGeometry", "CrbResult", "FactorEstimate", "Polarization",
    "SceneConfig", "SnapshotTensor", "TalsOptions", "Target", "TargetEstimate",
    "build_jacobians", "build_phi", "compute_crb", "estimate_targets",
    "match_to_truth", "optimize_phases", "randomize", "solve_sdp", "synthesize",
    "tals",
]
