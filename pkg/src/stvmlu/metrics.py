"""Spectral angle distance and abundance RMSE with endmember matching."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = ["MetricsReport", "sad", "sad_matrix", "match_endmembers", "rmse", "evaluate"]

MAX_MATCH_M = 12


@dataclass(frozen=True)
class MetricsReport:
    permutation: list[int]  # permutation[j] = estimated column matched to reference j
    sad_per_endmember: list[float]
    sad_mean: float
    rmse_per_endmember: list[float] | None
    rmse_mean: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def sad(a, b) -> float:
    """Angle in radians between two nonzero spectra."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("SAD is undefined for a zero vector")
    return float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))


def sad_matrix(a_est, a_ref) -> np.ndarray:
    """``out[i, j] = sad(a_ref[:, i], a_est[:, j])``."""
    a_est = np.asarray(a_est, dtype=np.float64)
    a_ref = np.asarray(a_ref, dtype=np.float64)
    ne = np.linalg.norm(a_est, axis=0)
    nr = np.linalg.norm(a_ref, axis=0)
    if np.any(ne == 0) or np.any(nr == 0):
        raise ValueError("SAD is undefined for a zero vector")
    cos = (a_ref.T @ a_est) / np.outer(nr, ne)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def match_endmembers(a_est, a_ref) -> list[int]:
    """Bijection minimising the total SAD; ``perm[j]`` is the estimate for reference ``j``."""
    a_est = np.asarray(a_est)
    a_ref = np.asarray(a_ref)
    if a_est.shape != a_ref.shape:
        raise ValueError(f"shape mismatch {a_est.shape} vs {a_ref.shape}")
    if a_ref.shape[1] > MAX_MATCH_M:
        raise ValueError(f"matching is limited to M <= {MAX_MATCH_M}")
    ref_idx, est_idx = linear_sum_assignment(sad_matrix(a_est, a_ref))
    perm = np.empty(a_ref.shape[1], dtype=int)
    perm[ref_idx] = est_idx
    return perm.tolist()


def rmse(s_est, s_ref, perm=None) -> tuple[list[float], float]:
    s_est = np.asarray(s_est, dtype=np.float64)
    s_ref = np.asarray(s_ref, dtype=np.float64)
    if s_est.shape != s_ref.shape:
        raise ValueError(f"shape mismatch {s_est.shape} vs {s_ref.shape}")
    if perm is None:
        perm = range(s_ref.shape[0])
    per = np.sqrt(np.mean((s_ref - s_est[list(perm)]) ** 2, axis=1))
    return per.tolist(), float(np.mean(per))


def evaluate(a_est, a_ref, s_est=None, s_ref=None) -> MetricsReport:
    perm = match_endmembers(a_est, a_ref)
    angles = sad_matrix(a_est, a_ref)[np.arange(len(perm)), perm]
    rm_per = rm_mean = None
    if s_est is not None and s_ref is not None:
        rm_per, rm_mean = rmse(s_est, s_ref, perm)
    return MetricsReport(
        permutation=perm,
        sad_per_endmember=angles.tolist(),
        sad_mean=float(np.mean(angles)),
        rmse_per_endmember=rm_per,
        rmse_mean=rm_mean,
    )
