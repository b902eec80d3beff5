import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import mix_loop

from stvmlu.hsi_data import AbundanceImage, HsiCube, flatten
from stvmlu.synthgen import (
    add_noise,
    generate_abundances,
    make_scene,
    mix,
    procedural_library,
    realized_snr,
)


def test_default_scene_shape():
    s = generate_abundances(64, 64, 5, seed=0)
    assert s.values.shape == (5, 4096)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(2, 6), st.sampled_from([(16, 16), (32, 16), (64, 64)]))
def test_abundances_asc_anc_and_purity(seed, m, shape):
    s = generate_abundances(*shape, m, seed=seed).values
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=0), 1.0, rtol=0, atol=1e-9)
    assert s.max(axis=0).max() <= 0.8


def test_abundances_reject_indivisible_grid():
    with pytest.raises(ValueError):
        generate_abundances(10, 16, 3)


def test_mix_pure_and_uniform_pixels():
    lib = procedural_library(4, bands=30)
    a = lib.signatures
    s = np.zeros((4, 4))
    s[2, 0] = 1.0
    s[:, 1:] = 0.25
    cube = mix(a, AbundanceImage(s, 2, 2, asc=True))
    x = flatten(cube)
    np.testing.assert_array_equal(x[:, 0], a[:, 2])
    np.testing.assert_allclose(x[:, 3], a.mean(axis=1), rtol=1e-14)


def test_mix_matches_loop(rng):
    a = rng.random((7, 3))
    s = rng.random((3, 6))
    x = flatten(mix(a, AbundanceImage(s, 2, 3)))
    np.testing.assert_allclose(x, mix_loop(a, s), rtol=0, atol=1e-12)


@pytest.mark.parametrize("snr", [10.0, 20.0, 30.0])
def test_realized_snr(snr):
    scene = make_scene(32, 32, 4, snr, seed=3)
    assert abs(realized_snr(scene.clean.values, scene.cube.values) - snr) <= 0.1
    assert np.all(scene.cube.values >= 0)
    assert np.all(scene.clean.values >= 0)


def test_noise_is_difference_of_cubes():
    scene = make_scene(16, 16, 3, 20.0, seed=1)
    np.testing.assert_array_equal(scene.noise, flatten(scene.cube) - flatten(scene.clean))


def test_infinite_snr_returns_input():
    cube = HsiCube(np.random.default_rng(0).random((2, 2, 3)))
    assert add_noise(cube, float("inf")) is cube
    scene = make_scene(16, 16, 3, float("inf"), seed=2)
    assert scene.cube.values.tobytes() == scene.clean.values.tobytes()


def test_same_seed_same_scene():
    a = make_scene(16, 16, 3, 20.0, seed=7)
    b = make_scene(16, 16, 3, 20.0, seed=7)
    assert a.cube.values.tobytes() == b.cube.values.tobytes()
    assert a.s_true.values.tobytes() == b.s_true.values.tobytes()
    c = make_scene(16, 16, 3, 20.0, seed=8)
    assert a.cube.values.tobytes() != c.cube.values.tobytes()


def test_library_index_checks():
    lib = procedural_library(3, bands=10)
    with pytest.raises(ValueError):
        make_scene(16, 16, 4, library=lib)
    with pytest.raises(ValueError):
        make_scene(16, 16, 2, library=lib, indices=[0])


def test_procedural_library_is_nonnegative_and_smooth():
    lib = procedural_library()
    assert lib.signatures.shape == (224, 12)
    assert np.all(lib.signatures > 0)
    assert np.max(np.abs(np.diff(lib.signatures, axis=0))) < 0.1
