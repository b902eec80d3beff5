"""Synthetic linear-mixture scenes with block-structured abundances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.optimize import brentq

from .hsi_data import AbundanceImage, HsiCube, SpectralLibrary, flatten

__all__ = [
    "SynthScene",
    "procedural_library",
    "generate_abundances",
    "mix",
    "add_noise",
    "realized_snr",
    "make_scene",
]


@dataclass(frozen=True)
class SynthScene:
    cube: HsiCube
    clean: HsiCube
    a_true: np.ndarray
    s_true: AbundanceImage
    noise: np.ndarray
    snr_db: float
    seed: int

    @property
    def x(self) -> np.ndarray:
        return flatten(self.cube)


def procedural_library(
    n_signatures: int = 12, bands: int = 224, seed: int = 0, wl_range=(0.4, 2.5)
) -> SpectralLibrary:
    """Smooth nonnegative pseudo-reflectance spectra built from Gaussian bumps.

    Each signature is a 0.05 floor plus 3 to 6 bumps, rescaled to peak at
    a random value in ``[0.5, 1]``.  Stands in for USGS spectra in tests.
    """
    rng = np.random.default_rng(seed)
    wl = np.linspace(*wl_range, bands)
    span = wl_range[1] - wl_range[0]
    sig = np.empty((bands, n_signatures))
    for q in range(n_signatures):
        spec = np.full(bands, 0.05)
        for _ in range(rng.integers(3, 7)):
            centre = rng.uniform(*wl_range)
            width = rng.uniform(0.03, 0.25) * span
            spec += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((wl - centre) / width) ** 2)
        sig[:, q] = spec * rng.uniform(0.5, 1.0) / spec.max()
    return SpectralLibrary([f"sig{q:02d}" for q in range(n_signatures)], wl, sig)


def generate_abundances(
    rows: int,
    cols: int,
    n_endmembers: int,
    block_size: int = 8,
    filter_radius: int = 4,
    purity_threshold: float = 0.8,
    seed: int = 0,
) -> AbundanceImage:
    """Blocky random labels, mean-filtered into smooth mixtures.

    Pixels whose largest fraction exceeds ``purity_threshold`` are
    replaced by the uniform mixture, so the scene has no pure pixels.
    """
    if n_endmembers < 2:
        raise ValueError("need at least 2 endmembers")
    if block_size < 1 or rows % block_size or cols % block_size:
        raise ValueError(f"{rows}x{cols} grid is not divisible into {block_size}x{block_size} blocks")
    if not 0 < purity_threshold < 1:
        raise ValueError("purity_threshold must lie in (0, 1)")
    if purity_threshold <= 1.0 / n_endmembers:
        raise ValueError("purity_threshold must exceed 1/M (the uniform mixture)")

    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_endmembers, size=(rows // block_size, cols // block_size))
    labels = np.kron(labels, np.ones((block_size, block_size), dtype=int))

    size = 2 * filter_radius + 1
    maps = np.stack(
        [uniform_filter((labels == m).astype(float), size=size, mode="nearest") for m in range(n_endmembers)]
    )
    s = maps.reshape(n_endmembers, rows * cols)
    s = np.maximum(s, 0.0)
    s /= s.sum(axis=0, keepdims=True)
    too_pure = s.max(axis=0) > purity_threshold
    s[:, too_pure] = 1.0 / n_endmembers
    return AbundanceImage(s, rows, cols, asc=True)


def mix(a_true, s: AbundanceImage, wavelengths=None) -> HsiCube:
    a_true = np.asarray(a_true, dtype=np.float64)
    if a_true.ndim != 2 or a_true.shape[1] != s.n_endmembers:
        raise ValueError(
            f"endmember matrix {a_true.shape} does not match {s.n_endmembers} abundance rows"
        )
    return HsiCube.from_matrix(a_true @ s.values, s.rows, s.cols, wavelengths)


def realized_snr(clean, noisy) -> float:
    clean = np.asarray(clean)
    noise = np.asarray(noisy) - clean
    return 10.0 * np.log10(np.sum(clean**2) / np.sum(noise**2))


def add_noise(cube: HsiCube, snr_db: float, seed: int = 0, clip: bool = True) -> HsiCube:
    """Add white Gaussian noise at exactly ``snr_db`` (``inf`` returns the input).

    With ``clip`` the noisy cube is clamped at zero and the noise scale is
    solved so that the SNR of the clamped result still hits the target.
    """
    if np.isposinf(snr_db):
        return cube
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    clean = cube.values
    signal = np.sum(clean**2)
    if signal == 0:
        raise ValueError("cannot set an SNR on an all-zero cube")
    draw = np.random.default_rng(seed).standard_normal(clean.shape)
    target = signal / 10.0 ** (snr_db / 10.0)
    scale = np.sqrt(target / np.sum(draw**2))
    if clip:
        def excess(c):
            return np.sum((np.maximum(clean + c * draw, 0.0) - clean) ** 2) - target

        if excess(scale) < 0:
            hi = scale * 2
            while excess(hi) < 0:
                hi *= 2
            scale = brentq(excess, scale, hi, xtol=1e-14 * scale, rtol=1e-14)
        noisy = np.maximum(clean + scale * draw, 0.0)
    else:
        noisy = clean + scale * draw
    return HsiCube(noisy, cube.wavelengths)


def make_scene(
    rows: int = 64,
    cols: int = 64,
    n_endmembers: int = 5,
    snr_db: float = 20.0,
    seed: int = 0,
    library: SpectralLibrary | None = None,
    indices=None,
    block_size: int = 8,
    filter_radius: int = 4,
    purity_threshold: float = 0.8,
) -> SynthScene:
    if library is None:
        library = procedural_library(seed=0)
    if indices is None:
        indices = range(n_endmembers)
    indices = list(indices)
    if len(indices) != n_endmembers:
        raise ValueError("number of library indices must equal n_endmembers")
    if n_endmembers > len(library):
        raise ValueError(f"library has {len(library)} signatures, {n_endmembers} requested")
    a_true = library.select(indices)
    s_true = generate_abundances(
        rows, cols, n_endmembers, block_size, filter_radius, purity_threshold, seed=seed
    )
    clean = mix(a_true, s_true, library.wavelengths)
    cube = add_noise(clean, snr_db, seed=seed + 1)
    noise = flatten(cube) - flatten(clean)
    return SynthScene(cube, clean, a_true, s_true, noise, float(snr_db), int(seed))

