"""Multilayer convex NMF unmixing with L1/2 sparsity and a TV spatial prior."""

from .baseline import BaselineConfig, l12nmf_solve
from .candidates import CandidateMatrix, RankDeficientError, build_candidates, nfindr, vca
from .estimators import L12NMF, STVMLU
from .hsi_data import HsiCube, HsiFormatError, flatten, load_cube, load_library, save_cube
from .metrics import MetricsReport, evaluate, match_endmembers, rmse, sad
from .solver import NumericalError, SolverConfig, UnmixResult, solve
from .synthgen import SynthScene, make_scene, procedural_library
from .tv import fgp_denoise, htv_norm, tv_aniso

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig", "CandidateMatrix", "HsiCube", "HsiFormatError", "L12NMF",
    "MetricsReport", "NumericalError", "RankDeficientError", "STVMLU", "SolverConfig",
    "SynthScene", "UnmixResult", "build_candidates", "evaluate", "fgp_denoise", "flatten",
    "htv_norm", "l12nmf_solve", "load_cube", "load_library", "make_scene", "match_endmembers",
    "nfindr", "procedural_library", "rmse", "sad", "save_cube", "solve", "tv_aniso", "vca",
]
