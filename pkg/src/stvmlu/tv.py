"""Anisotropic total variation and its proximal operator.

The prox is solved in the dual with the fast gradient projection (FGP)
scheme of Beck and Teboulle, anisotropic variant, with an optional lower
bound on the primal variable.  All routines accept a stack of grids with
shape ``(..., I, J)`` so the per-endmember problems can be solved in one
vectorised pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["tv_aniso", "htv_norm", "TvDual", "TvProxConfig", "fgp_denoise", "prox_objective"]


def tv_aniso(z) -> float | np.ndarray:
    """Sum of absolute vertical and horizontal neighbour differences.

    One-sided differences, no wraparound.  For stacked input the TV of
    each trailing ``I x J`` grid is returned.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim < 2:
        raise ValueError("tv_aniso expects at least a 2-D grid")
    tv = np.abs(np.diff(z, axis=-2)).sum(axis=(-2, -1)) + np.abs(np.diff(z, axis=-1)).sum(
        axis=(-2, -1)
    )
    return float(tv) if np.ndim(tv) == 0 else tv


def htv_norm(s, rows: int, cols: int) -> float:
    """Sum over abundance rows of the TV of each row laid out on the image grid."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != rows * cols:
        raise ValueError(f"abundances of shape {s.shape} do not fit a {rows}x{cols} grid")
    return float(np.sum(tv_aniso(s.reshape(s.shape[0], rows, cols))))


@dataclass
class TvDual:
    """Dual variables of the FGP iteration; ``p`` vertical, ``q`` horizontal."""

    p: np.ndarray  # (..., I-1, J)
    q: np.ndarray  # (..., I, J-1)

    @classmethod
    def zeros(cls, shape) -> TvDual:
        *lead, i, j = shape
        return cls(np.zeros((*lead, i - 1, j)), np.zeros((*lead, i, j - 1)))

    def copy(self) -> TvDual:
        return TvDual(self.p.copy(), self.q.copy())


@dataclass(frozen=True)
class TvProxConfig:
    inner_iters: int = 20
    box_lower: float | None = 0.0

    def __post_init__(self):
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")


def _div(p, q):
    # Adjoint of the difference operator: L(p, q) in Beck-Teboulle notation.
    out = np.zeros(p.shape[:-2] + (q.shape[-2], p.shape[-1]))
    out[..., :-1, :] += p
    out[..., 1:, :] -= p
    out[..., :, :-1] += q
    out[..., :, 1:] -= q
    return out


def _grad(x):
    # L^T(x): forward differences x_ij - x_{i+1,j} and x_ij - x_{i,j+1}.
    return x[..., :-1, :] - x[..., 1:, :], x[..., :, :-1] - x[..., :, 1:]


def prox_objective(z, b, weight) -> np.ndarray | float:
    """``||z - b||_F^2 + 2 * weight * TV(z)`` per grid."""
    z = np.asarray(z, dtype=np.float64)
    val = np.sum((z - b) ** 2, axis=(-2, -1)) + 2.0 * weight * np.asarray(tv_aniso(z))
    return float(val) if np.ndim(val) == 0 else val


def fgp_denoise(
    b,
    weight: float,
    *,
    inner_iters: int = 20,
    box_lower: float | None = None,
    warm_start: TvDual | None = None,
) -> tuple[np.ndarray, TvDual]:
    """Approximately minimise ``||Z - b||^2 + 2*weight*TV(Z)`` s.t. ``Z >= box_lower``.

    The best primal iterate seen (starting from ``clip(b)``) is returned,
    so the objective never increases with more inner iterations.  The
    final dual pair is returned for warm starting the next call.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim < 2:
        raise ValueError("fgp_denoise expects grids of shape (..., I, J)")
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    if inner_iters < 1:
        raise ValueError("inner_iters must be >= 1")

    def project(x):
        return x if box_lower is None else np.maximum(x, box_lower)

    dual = TvDual.zeros(b.shape) if warm_start is None else warm_start.copy()
    if dual.p.shape != b.shape[:-2] + (b.shape[-2] - 1, b.shape[-1]):
        raise ValueError("warm start does not match grid shape")

    best = project(b)
    if weight < np.finfo(np.float64).tiny:  # zero, or so small the dual step overflows
        return best.copy(), dual

    best_obj = np.asarray(prox_objective(best, b, weight))
    step = 1.0 / (8.0 * weight)
    p_prev, q_prev = dual.p, dual.q
    r, s = dual.p.copy(), dual.q.copy()
    t = 1.0
    for _ in range(inner_iters):
        gp, gq = _grad(project(b - weight * _div(r, s)))
        p = np.clip(r + step * gp, -1.0, 1.0)
        q = np.clip(s + step * gq, -1.0, 1.0)

        z = project(b - weight * _div(p, q))
        obj = np.asarray(prox_objective(z, b, weight))
        better = obj < best_obj
        if np.any(better):
            mask = better[..., None, None] if better.ndim else better
            best = np.where(mask, z, best)
            best_obj = np.where(better, obj, best_obj)

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        momentum = (t - 1.0) / t_next
        r = p + momentum * (p - p_prev)
        s = q + momentum * (q - q_prev)
        p_prev, q_prev, t = p, q, t_next

    return best, TvDual(p_prev, q_prev)
