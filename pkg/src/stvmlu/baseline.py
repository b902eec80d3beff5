"""L1/2-sparsity constrained NMF, the comparison baseline.

Reimplementation of the standard multiplicative scheme with a Frobenius
data term.  It shares the optional sum-to-one augmentation of the main
solver so both are compared under the same abundance constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import NumericalError

__all__ = ["BaselineConfig", "BaselineResult", "l12nmf_solve", "l12nmf_cost"]

LABEL = "L1/2-NMF (reimplementation)"


@dataclass(frozen=True)
class BaselineConfig:
    n_endmembers: int = 5
    lam: float = 0.01
    t_max: int = 500
    eps_div: float = 1e-12
    seed: int = 0
    asc_delta: float = 20.0

    def __post_init__(self):
        if self.n_endmembers < 1:
            raise ValueError("n_endmembers must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not self.eps_div > 0:
            raise ValueError("eps_div must be positive")
        if self.asc_delta < 0:
            raise ValueError("asc_delta must be nonnegative")


@dataclass(frozen=True)
class BaselineResult:
    a: np.ndarray
    s: np.ndarray
    cost_trace: list[float]
    label: str = LABEL


def l12nmf_cost(x, a, s, lam) -> float:
    r = x - a @ s
    return float(0.5 * np.einsum("bp,bp->", r, r) + lam * np.sum(np.sqrt(np.maximum(s, 0.0))))


def l12nmf_solve(x, config: BaselineConfig | None = None, a0=None, s0=None) -> BaselineResult:
    """Alternate multiplicative updates of ``A`` and ``S`` for ``t_max`` iterations."""
    config = config or BaselineConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("X must be a finite nonnegative B x P matrix")
    m, eps = config.n_endmembers, config.eps_div
    rng = np.random.default_rng(config.seed)
    a = 1.0 - rng.random((x.shape[0], m)) if a0 is None else np.array(a0, dtype=np.float64)
    s = 1.0 - rng.random((m, x.shape[1])) if s0 is None else np.array(s0, dtype=np.float64)

    d = config.asc_delta
    d2 = d * d
    trace = []
    for it in range(1, config.t_max + 1):
        a = a * (x @ s.T) / (a @ (s @ s.T) + eps)
        # S step on [X; d 1] ~ [A; d 1] S, the augmented rows handled analytically
        atx = a.T @ x
        ata = a.T @ a
        if d > 0:
            atx = atx + d2
            ata = ata + d2
        denom = ata @ s + eps
        if config.lam:
            denom = denom + 0.5 * config.lam / np.sqrt(np.maximum(s, eps))
        s = s * atx / denom
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
            raise NumericalError(f"iteration {it}: non-finite baseline state")
        trace.append(l12nmf_cost(x, a, s, config.lam))
    if d > 0:
        s = s / np.maximum(s.sum(axis=0, keepdims=True), eps)
    return BaselineResult(a, s, trace)
