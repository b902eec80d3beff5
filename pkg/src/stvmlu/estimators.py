"""scikit-learn compatible wrappers.

Inputs follow the scikit-learn convention: ``X`` has shape
``(n_pixels, n_bands)`` with pixels in row-major image order.  The image
grid needed by the TV prior is given by ``image_shape``; when it is
omitted the pixels are treated as a single image row.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted, check_non_negative, validate_data

from .baseline import BaselineConfig, l12nmf_solve
from .candidates import build_candidates
from .solver import SolverConfig, solve, solve_abundances
from .tv import TvProxConfig

__all__ = ["STVMLU", "L12NMF"]


def _seed_from(random_state) -> int:
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(check_random_state(random_state).randint(np.iinfo(np.int32).max))


class _UnmixingMixin:
    def _grid(self, n_pixels):
        if self.image_shape is None:
            return 1, n_pixels
        rows, cols = self.image_shape
        if rows * cols != n_pixels:
            raise ValueError(
                f"image_shape {self.image_shape} has {rows * cols} pixels, X has {n_pixels}"
            )
        return rows, cols

    def inverse_transform(self, X):
        """Reconstruct spectra from abundances of shape ``(n_pixels, n_endmembers)``."""
        check_is_fitted(self)
        return np.asarray(X) @ self.components_


class STVMLU(_UnmixingMixin, TransformerMixin, BaseEstimator):
    """Multilayer convex-NMF unmixing with L1/2 sparsity and a TV spatial prior.

    Parameters
    ----------
    n_endmembers : int, default=5
        Number of materials ``M``.
    image_shape : tuple of int or None, default=None
        ``(rows, cols)`` of the image; ``rows * cols`` must equal ``n_pixels``.
    n_layers : int, default=3
        Number of weight layers between the candidate pool and ``A``.
    alpha : float, default=0.01
        TV weight.
    lam : float, default=0.01
        L1/2 sparsity weight.
    candidates : ndarray of shape (n_bands, K) or None
        Candidate pool. Built from ``n_candidate_runs`` VCA and N-FINDR
        runs on ``X`` when omitted.
    n_candidate_runs : int, default=5
    mu0, rho, mu_max : float
        Penalty start, growth factor and cap.
    max_iter : int, default=500
    tol : float, default=1e-3
        Stop once ``max|S - L_aux| < tol``.
    asc_delta : float, default=20.0
        Weight of the sum-to-one augmentation; 0 disables it.
    init : {"kmeans", "random"}, default="kmeans"
    tv_inner_iter : int, default=20
    random_state : int, RandomState or None

    Attributes
    ----------
    endmembers_ : ndarray of shape (n_bands, n_endmembers)
    components_ : ndarray of shape (n_endmembers, n_bands)
    abundances_ : ndarray of shape (n_endmembers, n_pixels)
    candidates_ : ndarray of shape (n_bands, K)
    weights_ : list of ndarray
    cost_trace_ : list of float
    n_iter_ : int
    converged_ : bool
    """

    def __init__(
        self,
        n_endmembers=5,
        *,
        image_shape=None,
        n_layers=3,
        alpha=0.01,
        lam=0.01,
        candidates=None,
        n_candidate_runs=5,
        mu0=0.01,
        rho=1.1,
        mu_max=1000.0,
        max_iter=500,
        tol=1e-3,
        asc_delta=20.0,
        init="kmeans",
        tv_inner_iter=20,
        random_state=None,
    ):
        self.n_endmembers = n_endmembers
        self.image_shape = image_shape
        self.n_layers = n_layers
        self.alpha = alpha
        self.lam = lam
        self.candidates = candidates
        self.n_candidate_runs = n_candidate_runs
        self.mu0 = mu0
        self.rho = rho
        self.mu_max = mu_max
        self.max_iter = max_iter
        self.tol = tol
        self.asc_delta = asc_delta
        self.init = init
        self.tv_inner_iter = tv_inner_iter
        self.random_state = random_state

    def _config(self, seed) -> SolverConfig:
        return SolverConfig(
            num_layers=self.n_layers,
            alpha=self.alpha,
            lam=self.lam,
            mu0=self.mu0,
            rho=self.rho,
            mu_max=self.mu_max,
            t_max=self.max_iter,
            eps_stop=self.tol,
            asc_delta=self.asc_delta,
            seed=seed,
            init=self.init,
            tv=TvProxConfig(inner_iters=self.tv_inner_iter),
        )

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=2)
        check_non_negative(X, "STVMLU.fit")
        rows, cols = self._grid(X.shape[0])
        seed = _seed_from(self.random_state)
        x = X.T
        if self.candidates is None:
            phi = build_candidates(x, self.n_endmembers, self.n_candidate_runs, seed).phi
        else:
            phi = np.asarray(self.candidates, dtype=np.float64)
            if phi.ndim != 2 or phi.shape[0] != X.shape[1]:
                raise ValueError(
                    f"candidates must have shape (n_bands={X.shape[1]}, K), got {phi.shape}"
                )
        self._seed = seed
        result = solve(x, phi, self.n_endmembers, rows, cols, self._config(seed))
        self.candidates_ = phi
        self.endmembers_ = result.a
        self.components_ = result.a.T
        self.abundances_ = result.s
        self.weights_ = result.w_stack
        self.cost_trace_ = result.cost_trace
        self.n_iter_ = result.iterations_run
        self.converged_ = result.termination == "converged"
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).abundances_.T

    def transform(self, X):
        """Abundances of shape ``(n_pixels, n_endmembers)`` for fixed endmembers."""
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        check_non_negative(X, "STVMLU.transform")
        rows, cols = self._grid(X.shape[0])
        s = solve_abundances(X.T, self.endmembers_, rows, cols, self._config(self._seed))
        return s.T


class L12NMF(_UnmixingMixin, TransformerMixin, BaseEstimator):
    """Multiplicative NMF with an L1/2 abundance penalty (Frobenius loss)."""

    def __init__(
        self, n_endmembers=5, *, lam=0.01, max_iter=500, asc_delta=20.0, random_state=None
    ):
        self.n_endmembers = n_endmembers
        self.lam = lam
        self.max_iter = max_iter
        self.asc_delta = asc_delta
        self.random_state = random_state

    # the baseline has no spatial term
    image_shape = None

    def _config(self, seed) -> BaselineConfig:
        return BaselineConfig(
            n_endmembers=self.n_endmembers,
            lam=self.lam,
            t_max=self.max_iter,
            seed=seed,
            asc_delta=self.asc_delta,
        )

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=2)
        check_non_negative(X, "L12NMF.fit")
        self._seed = _seed_from(self.random_state)
        result = l12nmf_solve(X.T, self._config(self._seed))
        self.endmembers_ = result.a
        self.components_ = result.a.T
        self.abundances_ = result.s
        self.cost_trace_ = result.cost_trace
        self.n_iter_ = len(result.cost_trace)
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).abundances_.T

    def transform(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        check_non_negative(X, "L12NMF.transform")
        # Only the abundance half of the update runs: A stays at the fitted value.
        cfg = self._config(self._seed)
        rng = np.random.default_rng(cfg.seed)
        s0 = 1.0 - rng.random((self.n_endmembers, X.shape[0]))
        a = self.endmembers_
        x = X.T
        d2 = cfg.asc_delta**2
        atx = a.T @ x + d2
        ata = a.T @ a + d2
        s = s0
        for _ in range(cfg.t_max):
            denom = ata @ s + cfg.eps_div
            if cfg.lam:
                denom = denom + 0.5 * cfg.lam / np.sqrt(np.maximum(s, cfg.eps_div))
            s = s * atx / denom
        if cfg.asc_delta > 0:
            s = s / np.maximum(s.sum(axis=0, keepdims=True), cfg.eps_div)
        return s.T
