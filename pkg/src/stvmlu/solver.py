"""Sparsity and TV constrained multilayer linear unmixing.

The model factorises a ``B x P`` image as ``X ~ Phi W_1 ... W_L S`` with an
L2,1 data term, an L1/2 penalty on the abundances ``S`` and an anisotropic
TV prior applied through a split variable ``L_aux = S``.  Each outer
iteration performs one multiplicative sweep over the weight layers, one
multiplicative abundance update, a TV proximal step for ``L_aux``, then the
multiplier and penalty updates.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .tv import TvDual, TvProxConfig, fgp_denoise, htv_norm

__all__ = [
    "SolverConfig",
    "SolverState",
    "UnmixResult",
    "NumericalError",
    "row_weights",
    "update_w_layer",
    "update_s",
    "update_l",
    "update_multiplier",
    "update_mu",
    "mu_schedule",
    "cost",
    "initialize",
    "solve",
    "solve_abundances",
]

logger = logging.getLogger(__name__)

INIT_METHODS = ("kmeans", "random")


class NumericalError(FloatingPointError):
    """A state matrix became non-finite during the iteration."""


@dataclass(frozen=True)
class SolverConfig:
    num_layers: int = 3
    alpha: float = 0.01
    lam: float = 0.01
    mu0: float = 0.01
    rho: float = 1.1
    mu_max: float = 1000.0
    t_max: int = 500
    eps_stop: float = 1e-3
    eps_div: float = 1e-12
    asc_delta: float = 20.0
    seed: int = 0
    init: str = "kmeans"
    tv: TvProxConfig = field(default_factory=TvProxConfig)

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lam must be nonnegative")
        if not self.mu0 > 0:
            raise ValueError("mu0 must be positive")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        if self.mu_max < self.mu0:
            raise ValueError("mu_max must be >= mu0")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not self.eps_stop > 0:
            raise ValueError("eps_stop must be positive")
        if not self.eps_div > 0:
            raise ValueError("eps_div must be positive")
        if self.asc_delta < 0:
            raise ValueError("asc_delta must be nonnegative")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}, got {self.init!r}")


@dataclass
class SolverState:
    w_stack: list[np.ndarray]
    s: np.ndarray
    l_aux: np.ndarray
    delta: np.ndarray
    mu: float
    iter: int = 0
    cost_trace: list[float] = field(default_factory=list)
    dual: TvDual | None = None

    def endmembers(self, phi) -> np.ndarray:
        return reduce(np.matmul, self.w_stack, phi)

    def check_nonnegative(self):
        for name, mat in self._named():
            if np.any(mat < 0):
                raise AssertionError(f"iteration {self.iter}: {name} has negative entries")

    def check_finite(self):
        for name, mat in (*self._named(), ("delta", self.delta)):
            if not np.all(np.isfinite(mat)):
                raise NumericalError(f"iteration {self.iter}: non-finite values in {name}")

    def _named(self):
        yield from ((f"W_{i + 1}", w) for i, w in enumerate(self.w_stack))
        yield "S", self.s
        yield "L_aux", self.l_aux


@dataclass(frozen=True)
class UnmixResult:
    a: np.ndarray
    s: np.ndarray
    w_stack: list[np.ndarray]
    cost_trace: list[float]
    gap_trace: list[float]
    mu_trace: list[float]
    iterations_run: int
    termination: str  # "converged" | "max_iter"


# -- elementary updates -------------------------------------------------------


def row_weights(residual, eps_div: float = 1e-12) -> np.ndarray:
    """Per-pixel reweighting ``1 / ||r_p||_2`` of the L2,1 majoriser, guarded."""
    residual = np.asarray(residual)
    return 1.0 / np.maximum(np.sqrt(np.einsum("bp,bp->p", residual, residual)), eps_div)


def _residual_sqnorms(x, a, s, work=None) -> np.ndarray:
    """Squared column norms of ``x - a @ s``; ``work`` is an optional ``B x P`` buffer."""
    if work is None:
        work = np.empty_like(x)
    np.matmul(a, s, out=work)
    np.subtract(x, work, out=work)
    return np.einsum("bp,bp->p", work, work)


def update_w_layer(x, u, v, w, eps_div: float = 1e-12, work=None) -> np.ndarray:
    """One multiplicative step for ``W`` in ``X ~ U W V`` under the L2,1 loss.

    The reweighting ``D`` is computed from the residual at the current ``W``.
    """
    if u.shape[1] != w.shape[0] or w.shape[1] != v.shape[0]:
        raise ValueError(f"shapes do not chain: U{u.shape} W{w.shape} V{v.shape}")
    uw = u @ w
    d = 1.0 / np.maximum(np.sqrt(_residual_sqnorms(x, uw, v, work)), eps_div)
    vd = v * d
    numer = u.T @ (x @ vd.T)
    denom = (u.T @ uw) @ (vd @ v.T)
    return w * numer / (denom + eps_div)


def update_s(
    x, a, s, l_aux, delta, mu, lam, eps_div: float = 1e-12, asc_delta: float = 0.0, work=None
) -> np.ndarray:
    """Multiplicative abundance step with L1/2 penalty and split coupling.

    With ``asc_delta > 0`` a constant row ``asc_delta`` is appended to both
    ``X`` and ``A`` (softly enforcing sum-to-one); the augmentation is
    applied analytically rather than by copying ``X``.
    """
    if a.shape[1] != s.shape[0] or s.shape != l_aux.shape or s.shape != delta.shape:
        raise ValueError("shape mismatch in abundance update")
    sq = _residual_sqnorms(x, a, s, work)
    atx = a.T @ x
    ata_s = (a.T @ a) @ s
    if asc_delta > 0:
        d2 = asc_delta * asc_delta
        colsum = s.sum(axis=0)
        sq = sq + d2 * (1.0 - colsum) ** 2
        atx = atx + d2
        ata_s = ata_s + d2 * colsum
    h = 1.0 / np.maximum(np.sqrt(sq), eps_div)
    numer = atx * h + mu * l_aux
    denom = ata_s * h + mu * s + delta
    if lam:
        denom = denom + 0.5 * lam / np.sqrt(np.maximum(s, eps_div))
    denom = np.maximum(denom + eps_div, eps_div)
    return s * numer / denom


def update_l(s, delta, mu, alpha, rows, cols, tv: TvProxConfig | None = None, warm=None):
    """TV proximal step on every abundance row; returns ``(l_aux, dual)``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    tv = tv or TvProxConfig()
    m = s.shape[0]
    target = (s + delta / mu).reshape(m, rows, cols)
    grids, dual = fgp_denoise(
        target, alpha / mu, inner_iters=tv.inner_iters, box_lower=tv.box_lower, warm_start=warm
    )
    return grids.reshape(m, rows * cols), dual


def update_multiplier(delta, mu, s, l_aux) -> np.ndarray:
    return delta + mu * (s - l_aux)


def update_mu(mu, rho, mu_max) -> float:
    return min(rho * mu, mu_max)


def mu_schedule(t: int, mu0: float, rho: float, mu_max: float) -> float:
    """Penalty after ``t`` updates, ``min(mu0 * rho**t, mu_max)``.

    Equal to ``t`` applications of :func:`update_mu` in exact arithmetic;
    the closed form avoids accumulating rounding along the way.
    """
    try:
        return min(mu0 * rho ** int(t), mu_max)
    except OverflowError:
        return mu_max


def cost(x, phi, w_stack, s, alpha, lam, rows, cols, work=None) -> float:
    """Objective: half L2,1 residual + alpha * HTV(S) + lam * sum(sqrt(S))."""
    a = reduce(np.matmul, w_stack, phi)
    data = 0.5 * np.sum(np.sqrt(_residual_sqnorms(x, a, s, work)))
    value = data
    if alpha:
        value += alpha * htv_norm(s, rows, cols)
    if lam:
        value += lam * np.sum(np.sqrt(np.maximum(s, 0.0)))
    return float(value)


# -- driver -------------------------------------------------------------------


def _uniform_open(rng, shape):
    # uniform on (0, 1]
    return 1.0 - rng.random(shape)


def _kmeans_layers(phi, n_endmembers, num_layers, rng, jitter=1e-3):
    """``W_1`` averages spectral-angle clusters of the candidates, deeper layers ~ identity.

    A small positive jitter keeps every entry strictly positive so the
    multiplicative updates can still reach any support.
    """
    k = phi.shape[1]
    unit = phi / np.maximum(np.linalg.norm(phi, axis=0), 1e-300)
    seed = int(rng.integers(2**31 - 1))
    with warnings.catch_warnings():
        # duplicated candidates can leave fewer distinct points than clusters
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = KMeans(n_endmembers, n_init=10, random_state=seed).fit(unit.T).labels_
    w1 = np.zeros((k, n_endmembers))
    for m in range(n_endmembers):
        members = np.flatnonzero(labels == m)
        if members.size == 0:
            members = rng.integers(k, size=1)
        w1[members, m] = 1.0 / members.size
    w1 += jitter * _uniform_open(rng, w1.shape) / k
    eye = np.eye(n_endmembers)
    deeper = [
        eye + jitter * _uniform_open(rng, eye.shape) for _ in range(num_layers - 1)
    ]
    return [w1] + deeper


def initialize(phi, n_endmembers: int, n_pixels: int, config: SolverConfig) -> SolverState:
    """Starting point: nonnegative layers, random sum-to-one ``S``, ``L_aux = S``, zero multiplier.

    ``init="random"`` draws every ``W_l`` uniformly on (0, 1] divided by
    its row count.  ``init="kmeans"`` starts ``A`` at cluster means of the
    candidate spectra.
    """
    rng = np.random.default_rng(config.seed)
    if config.init == "kmeans":
        w_stack = _kmeans_layers(phi, n_endmembers, config.num_layers, rng)
    else:
        widths = [phi.shape[1]] + [n_endmembers] * config.num_layers
        w_stack = [_uniform_open(rng, (r, c)) / r for r, c in zip(widths[:-1], widths[1:])]
    s = _uniform_open(rng, (n_endmembers, n_pixels))
    s /= s.sum(axis=0, keepdims=True)
    return SolverState(w_stack, s, s.copy(), np.zeros_like(s), config.mu0)


def _sweep_layers(x, phi, state, eps_div, work=None):
    ws = state.w_stack
    n = len(ws)
    # suffixes[l] = W_{l+1} ... W_L S; layers after l are untouched until their turn.
    suffixes = [None] * n
    acc = state.s
    for i in range(n - 1, -1, -1):
        suffixes[i] = acc
        acc = ws[i] @ acc
    u = phi
    for i in range(n):
        ws[i] = update_w_layer(x, u, suffixes[i], ws[i], eps_div, work)
        u = u @ ws[i]
    return u  # A = Phi W_1 ... W_L


def _check_inputs(x, phi, rows, cols):
    x = np.asarray(x, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if x.ndim != 2 or phi.ndim != 2 or x.shape[0] != phi.shape[0]:
        raise ValueError(f"X {x.shape} and Phi {phi.shape} must be B x P and B x K")
    if x.shape[1] != rows * cols:
        raise ValueError(f"X has {x.shape[1]} pixels, grid is {rows}x{cols}")
    if np.any(x < 0) or np.any(phi < 0):
        raise ValueError("X and Phi must be nonnegative")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(phi))):
        raise ValueError("X and Phi must be finite")
    return x, phi


def solve(
    x,
    phi,
    n_endmembers: int,
    rows: int,
    cols: int,
    config: SolverConfig | None = None,
    *,
    check_invariants: bool = False,
    callback=None,
) -> UnmixResult:
    """Run the alternating scheme until ``max|S - L_aux| < eps_stop`` or ``t_max``.

    ``callback(state)`` is invoked after every outer iteration.
    """
    config = config or SolverConfig()
    x, phi = _check_inputs(x, phi, rows, cols)
    if phi.shape[1] < n_endmembers:
        raise ValueError(f"Phi has {phi.shape[1]} columns, need at least {n_endmembers}")

    state = initialize(phi, n_endmembers, x.shape[1], config)
    work = np.empty_like(x)
    gaps, mus = [], []
    termination = "max_iter"
    while state.iter < config.t_max:
        state.iter += 1
        a = _sweep_layers(x, phi, state, config.eps_div, work)
        state.s = update_s(
            x, a, state.s, state.l_aux, state.delta, state.mu, config.lam,
            config.eps_div, config.asc_delta, work,
        )
        state.l_aux, state.dual = update_l(
            state.s, state.delta, state.mu, config.alpha, rows, cols, config.tv, state.dual
        )
        state.delta = update_multiplier(state.delta, state.mu, state.s, state.l_aux)
        state.mu = mu_schedule(state.iter, config.mu0, config.rho, config.mu_max)

        state.check_finite()
        if check_invariants:
            state.check_nonnegative()
        state.cost_trace.append(
            cost(x, phi, state.w_stack, state.s, config.alpha, config.lam, rows, cols, work)
        )
        gap = float(np.max(np.abs(state.s - state.l_aux)))
        gaps.append(gap)
        mus.append(state.mu)
        if callback is not None:
            callback(state)
        if gap < config.eps_stop:
            termination = "converged"
            break

    logger.debug("solve: %s after %d iterations", termination, state.iter)
    s = state.s
    if config.asc_delta > 0:
        s = s / np.maximum(s.sum(axis=0, keepdims=True), config.eps_div)
    return UnmixResult(
        a=state.endmembers(phi),
        s=s,
        w_stack=[w.copy() for w in state.w_stack],
        cost_trace=state.cost_trace,
        gap_trace=gaps,
        mu_trace=mus,
        iterations_run=state.iter,
        termination=termination,
    )


def solve_abundances(
    x, a, rows: int, cols: int, config: SolverConfig | None = None, s0=None
) -> np.ndarray:
    """Abundances for fixed endmembers ``a`` using the S / L_aux / multiplier loop.

    Unlike :func:`solve`, the loop also requires ``S`` itself to have
    settled (max change below ``eps_stop``) before stopping, since with a
    zero TV weight the split gap vanishes after one step.
    """
    config = config or SolverConfig()
    x, a = _check_inputs(x, a, rows, cols)
    m, p = a.shape[1], x.shape[1]
    if s0 is None:
        s = _uniform_open(np.random.default_rng(config.seed), (m, p))
        s /= s.sum(axis=0, keepdims=True)
    else:
        s = np.array(s0, dtype=np.float64)
    l_aux, delta, mu, dual = s.copy(), np.zeros_like(s), config.mu0, None
    work = np.empty_like(x)
    for t in range(1, config.t_max + 1):
        s_prev = s
        s = update_s(
            x, a, s, l_aux, delta, mu, config.lam, config.eps_div, config.asc_delta, work
        )
        l_aux, dual = update_l(s, delta, mu, config.alpha, rows, cols, config.tv, dual)
        delta = update_multiplier(delta, mu, s, l_aux)
        mu = mu_schedule(t, config.mu0, config.rho, config.mu_max)
        if not np.all(np.isfinite(s)):
            raise NumericalError("non-finite abundances")
        settled = np.max(np.abs(s - s_prev)) < config.eps_stop
        if settled and np.max(np.abs(s - l_aux)) < config.eps_stop:
            break
    if config.asc_delta > 0:
        s = s / np.maximum(s.sum(axis=0, keepdims=True), config.eps_div)
    return s
