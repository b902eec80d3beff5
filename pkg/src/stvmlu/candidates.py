"""Candidate endmember pool from repeated VCA and N-FINDR runs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

__all__ = ["CandidateMatrix", "vca", "nfindr", "build_candidates", "RankDeficientError"]

logger = logging.getLogger(__name__)


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateMatrix:
    phi: np.ndarray  # B x K
    n_endmembers: int
    n_runs: int
    provenance: list[tuple[str, int, int]]  # (method, run, seed) per column

    @property
    def K(self) -> int:
        return self.phi.shape[1]


def _check_input(x, m):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a B x P matrix")
    if m < 2:
        raise ValueError("need at least 2 endmembers")
    if m > x.shape[1]:
        raise ValueError(f"cannot extract {m} endmembers from {x.shape[1]} pixels")
    return x


def _affine_subspace(x, m):
    """Project mean-removed data onto its leading ``m - 1`` singular directions.

    An ``m``-vertex simplex spans an ``(m-1)``-dimensional affine subspace,
    so that is the rank required of the centred data.
    """
    centred = x - x.mean(axis=1, keepdims=True)
    if centred.shape[0] <= centred.shape[1]:
        evals, u = np.linalg.eigh(centred @ centred.T)
        order = np.argsort(evals)[::-1]
        sv, u = np.sqrt(np.maximum(evals[order], 0.0)), u[:, order]
    else:
        u, sv, _ = np.linalg.svd(centred, full_matrices=False)
    if sv.size < m - 1 or sv[0] == 0 or sv[m - 2] <= 1e-10 * sv[0]:
        raise RankDeficientError(
            f"centred data has numerical rank < {m - 1}; cannot extract {m} endmembers"
        )
    return u[:, : m - 1].T @ centred


def vca(x, n_endmembers: int, seed: int = 0, return_indices: bool = False):
    """Vertex component analysis; returns ``B x M`` pixel spectra.

    Works in projective coordinates: the ``M - 1`` leading centred
    components plus a constant row, so all simplex vertices are linearly
    independent.  Each step picks the pixel with the largest absolute
    projection onto a random direction orthogonal to the vertices chosen
    so far.
    """
    x = _check_input(x, n_endmembers)
    m = n_endmembers
    proj = _affine_subspace(x, m)
    c = np.sqrt(np.max(np.sum(proj**2, axis=0))) or 1.0
    y = np.vstack([proj, np.full((1, x.shape[1]), c)])

    rng = np.random.default_rng(seed)
    basis = np.zeros((m, m))
    basis[-1, 0] = 1.0
    chosen = np.zeros(m, dtype=int)
    taken = np.zeros(x.shape[1], dtype=bool)
    for i in range(m):
        w = rng.random(m)
        f = w - basis @ (np.linalg.pinv(basis) @ w)
        f /= np.linalg.norm(f)
        score = np.abs(f @ y)
        score[taken] = -np.inf
        chosen[i] = np.argmax(score)
        taken[chosen[i]] = True
        basis[:, i] = y[:, chosen[i]]
    out = x[:, chosen].copy()
    return (out, chosen) if return_indices else out


def nfindr(
    x, n_endmembers: int, seed: int = 0, return_indices: bool = False, max_sweeps: int = 100
):
    """N-FINDR simplex volume maximisation over the pixels of ``x``.

    Column swaps are accepted only if they strictly increase the simplex
    volume.  With ``return_indices`` the call also returns the selected
    pixel indices and the sequence of accepted ``|det|`` values.
    """
    x = _check_input(x, n_endmembers)
    m = n_endmembers
    y = _affine_subspace(x, m)
    e_all = np.vstack([np.ones((1, x.shape[1])), y])  # M x P

    rng = np.random.default_rng(seed)
    for attempt in range(10):
        idx = rng.choice(x.shape[1], size=m, replace=False)
        vol = abs(np.linalg.det(e_all[:, idx]))
        if vol > 1e-12 * _volume_scale(y, m):
            break
        logger.debug("nfindr: degenerate initial simplex, attempt %d", attempt + 1)
    else:
        raise RankDeficientError("N-FINDR could not find a non-degenerate initial simplex")

    trace = [vol]
    for _ in range(max_sweeps):
        changed = False
        for j in range(m):
            e = e_all[:, idx]
            det = np.linalg.det(e)
            # det with column j replaced by pixel p is linear in that pixel:
            # det * (E^{-1})[j] @ e_p  (cofactor expansion).
            vols = np.abs(det * (np.linalg.solve(e.T, np.eye(m)[:, j]) @ e_all))
            best = int(np.argmax(vols))
            if vols[best] > trace[-1] * (1 + 1e-12) and best not in idx:
                idx[j] = best
                trace.append(float(abs(np.linalg.det(e_all[:, idx]))))
                changed = True
        if not changed:
            break
    out = x[:, idx].copy()
    return (out, idx.copy(), trace) if return_indices else out


def _volume_scale(y, m):
    return float(np.max(np.abs(y))) ** (m - 1) if y.size else 1.0


def build_candidates(x, n_endmembers: int, n_runs: int = 5, seed: int = 0) -> CandidateMatrix:
    """Stack ``n_runs`` VCA and ``n_runs`` N-FINDR results: ``K = 2 * n_runs * M`` columns.

    Run ``r`` uses seed ``seed + r`` for VCA and ``seed + n_runs + r`` for
    N-FINDR.  Duplicated spectra are kept.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    x = _check_input(x, n_endmembers)
    blocks, provenance = [], []
    for method, extract, offset in (("vca", vca, 0), ("nfindr", nfindr, n_runs)):
        for r in range(n_runs):
            run_seed = seed + offset + r
            blocks.append(extract(x, n_endmembers, seed=run_seed))
            provenance.extend([(method, r, run_seed)] * n_endmembers)
    phi = np.maximum(np.hstack(blocks), 0.0)
    return CandidateMatrix(phi, n_endmembers, n_runs, provenance)
