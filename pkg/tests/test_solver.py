import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import augment, cost_loop, row_weights_loop, update_s_loop, update_w_loop

from stvmlu.candidates import build_candidates
from stvmlu.solver import (
    NumericalError,
    SolverConfig,
    cost,
    initialize,
    mu_schedule,
    row_weights,
    solve,
    solve_abundances,
    update_l,
    update_multiplier,
    update_mu,
    update_s,
    update_w_layer,
)

EPS = 1e-12


# -- row weights ----------------------------------------------------------------


def test_row_weights_cases(rng):
    r = np.zeros((3, 2))
    r[:, 0] = [0.0, 2.0, 0.0]
    w = row_weights(r, EPS)
    assert w[0] == 0.5
    assert w[1] == 1.0 / EPS and np.isfinite(w[1])
    r = rng.normal(size=(3, 4))
    np.testing.assert_allclose(row_weights(r, EPS), row_weights_loop(r, EPS), rtol=1e-14)


# -- W update ------------------------------------------------------------------


def random_layer_problem(rng, bands=4, k=3, m=2, pixels=5):
    u = rng.random((bands, k))
    w = rng.random((k, m))
    v = rng.random((m, pixels))
    x = rng.random((bands, pixels)) * 2
    return x, u, v, w


def test_update_w_matches_loop(rng):
    for _ in range(20):
        x, u, v, w = random_layer_problem(rng)
        np.testing.assert_allclose(update_w_layer(x, u, v, w, EPS), update_w_loop(x, u, v, w, EPS),
                                   rtol=1e-12, atol=1e-12)


def test_update_w_stationary_point():
    u = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, 1.0]])
    w = np.array([[1.0, 2.0], [2.0, 1.0]])
    v = np.array([[1.0, 0.0, 2.0], [1.0, 3.0, 1.0]])
    x = u @ w @ v
    np.testing.assert_allclose(update_w_layer(x, u, v, w, EPS), w, rtol=1e-14)


def test_update_w_zero_absorbing(rng):
    x, u, v, w = random_layer_problem(rng)
    assert np.all(update_w_layer(x, u, v, np.zeros_like(w), EPS) == 0)
    w[0, 1] = 0.0
    assert update_w_layer(x, u, v, w, EPS)[0, 1] == 0.0


def surrogate(x, u, w, v, d):
    r = x - u @ w @ v
    return float(np.sum(r * r * d[None, :]))


def frozen_d(x, u, w, v):
    r = x - u @ w @ v
    return 1.0 / np.maximum(np.sqrt(np.sum(r * r, axis=0)), EPS)


def test_update_w_toy_decreases_surrogate(rng):
    x, u, v, w = random_layer_problem(rng, bands=3, k=2, m=2, pixels=4)
    d = frozen_d(x, u, w, v)
    w_new = update_w_layer(x, u, v, w, EPS)
    assert surrogate(x, u, w_new, v, d) <= surrogate(x, u, w, v, d)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_update_w_surrogate_property(seed):
    rng = np.random.default_rng(seed)
    dims = rng.integers(1, 6, size=4)
    x, u, v, w = random_layer_problem(rng, *dims)
    d = frozen_d(x, u, w, v)
    before = surrogate(x, u, w, v, d)
    after = surrogate(x, u, update_w_layer(x, u, v, w, EPS), v, d)
    assert after <= before * (1 + 1e-10)


# -- S update --------------------------------------------------------------------


def random_s_problem(rng, bands=3, m=2, pixels=2):
    a = rng.random((bands, m))
    s = rng.random((m, pixels))
    x = rng.random((bands, pixels))
    l_aux = rng.random((m, pixels))
    delta = rng.normal(size=(m, pixels)) * 0.1
    return x, a, s, l_aux, delta


def test_update_s_matches_loop_toy(rng):
    x, a, s, l_aux, delta = random_s_problem(rng)
    got = update_s(x, a, s, l_aux, delta, 0.3, 0.05, EPS)
    np.testing.assert_allclose(got, update_s_loop(x, a, s, l_aux, delta, 0.3, 0.05, EPS),
                               rtol=1e-12, atol=1e-12)


def test_update_s_matches_loop_random(rng):
    for _ in range(20):
        x, a, s, l_aux, delta = random_s_problem(rng, 5, 3, 6)
        mu, lam = rng.random(), rng.random() * 0.1
        np.testing.assert_allclose(update_s(x, a, s, l_aux, delta, mu, lam, EPS),
                                   update_s_loop(x, a, s, l_aux, delta, mu, lam, EPS),
                                   rtol=1e-12, atol=1e-12)


def test_update_s_augmentation_equals_explicit_rows(rng):
    x, a, s, l_aux, delta = random_s_problem(rng, 5, 3, 6)
    xa, aa = augment(x, a, 20.0)
    got = update_s(x, a, s, l_aux, delta, 0.2, 0.01, EPS, asc_delta=20.0)
    np.testing.assert_allclose(got, update_s_loop(xa, aa, s, l_aux, delta, 0.2, 0.01, EPS),
                               rtol=1e-12, atol=1e-12)


def test_update_s_fixed_point():
    a = np.array([[1.0, 2.0], [3.0, 1.0], [0.5, 0.5]])
    s = np.array([[1.0, 2.0, 0.5], [2.0, 1.0, 1.5]])
    x = a @ s
    z = np.zeros_like(s)
    np.testing.assert_allclose(update_s(x, a, s, z, z, 0.0, 0.0, EPS), s, rtol=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(0, 10), st.floats(0, 1), st.floats(0, 50))
def test_update_s_nonnegative_and_zero_preserving(seed, mu, lam, asc):
    rng = np.random.default_rng(seed)
    x, a, s, l_aux, delta = random_s_problem(rng, 4, 3, 5)
    delta = rng.normal(size=s.shape) * 5  # large multipliers can push denominators negative
    s[0, 0] = 0.0
    out = update_s(x, a, s, l_aux, delta, mu, lam, EPS, asc_delta=asc)
    assert np.all(out >= 0) and np.all(np.isfinite(out))
    assert out[0, 0] == 0.0


# -- L, multiplier, mu -------------------------------------------------------------


def test_update_l_zero_alpha(rng):
    s = rng.random((2, 6))
    delta = rng.normal(size=(2, 6))
    l_aux, _ = update_l(s, delta, 0.5, 0.0, 2, 3)
    np.testing.assert_array_equal(l_aux, np.maximum(s + delta / 0.5, 0.0))
    l_aux, _ = update_l(s, np.zeros_like(s), 0.5, 0.0, 2, 3)
    np.testing.assert_array_equal(l_aux, s)


def test_update_l_constant_rows_fixed(rng):
    s = np.repeat(rng.random((3, 1)), 12, axis=1)
    for alpha in (0.01, 1.0, 100.0):
        l_aux, _ = update_l(s, np.zeros_like(s), 0.01, alpha, 3, 4)
        np.testing.assert_allclose(l_aux, s, rtol=0, atol=1e-15)


def test_update_l_nonnegative(rng):
    s = rng.random((2, 16))
    l_aux, _ = update_l(s, -rng.random((2, 16)), 0.1, 0.5, 4, 4)
    assert np.all(l_aux >= 0)


def test_multiplier_cases(rng):
    d = rng.random((2, 3))
    s = rng.random((2, 3))
    np.testing.assert_array_equal(update_multiplier(d, 0.7, s, s), d)
    np.testing.assert_allclose(
        update_multiplier(np.zeros((2, 2)), 0.01, np.ones((2, 2)), np.zeros((2, 2))), 0.01
    )
    l_aux = rng.random((2, 3))
    twice = update_multiplier(update_multiplier(d, 0.3, s, l_aux), 0.3, s, l_aux)
    np.testing.assert_allclose(twice, d + 2 * 0.3 * (s - l_aux), rtol=1e-14)


def test_mu_cases():
    assert update_mu(0.01, 1.1, 1000.0) == pytest.approx(0.011, rel=1e-15)
    assert update_mu(999.0, 1.1, 1000.0) == 1000.0
    assert update_mu(0.5, 1.0, 1000.0) == 0.5


# -- cost ----------------------------------------------------------------------------


def test_cost_cases(rng):
    phi = rng.random((4, 3))
    w = [np.eye(3)]
    s = np.full((3, 6), 0.3)
    x = phi @ s
    assert cost(x, phi, w, s, 0.5, 0.0, 2, 3) == pytest.approx(0.0, abs=1e-12)
    x = rng.random((4, 6))
    half_l21 = 0.5 * np.sum(np.linalg.norm(x, axis=0))
    assert cost(x, phi, w, np.zeros((3, 6)), 0.5, 0.2, 2, 3) == pytest.approx(half_l21, rel=1e-14)


def test_cost_matches_loop(rng):
    for _ in range(10):
        phi = rng.random((5, 4))
        ws = [rng.random((4, 3)), rng.random((3, 3))]
        s = rng.random((3, 6))
        x = rng.random((5, 6))
        a = phi @ ws[0] @ ws[1]
        expected = cost_loop(x, a, s, 0.3, 0.1, 2, 3)
        assert abs(cost(x, phi, ws, s, 0.3, 0.1, 2, 3) - expected) <= 1e-12 * max(1, expected)


# -- driver ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def micro_problem():
    from stvmlu.synthgen import make_scene

    scene = make_scene(16, 16, 3, 20.0, seed=0)
    x = scene.x
    phi = build_candidates(x, 3, 5, 0).phi
    return scene, x, phi


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(num_layers=0)
    with pytest.raises(ValueError):
        SolverConfig(alpha=-1)
    with pytest.raises(ValueError):
        SolverConfig(init="nope")
    with pytest.raises(ValueError):
        SolverConfig(mu_max=0.001)


@pytest.mark.parametrize("init", ["kmeans", "random"])
def test_initialize_shapes(micro_problem, init):
    _, x, phi = micro_problem
    st_ = initialize(phi, 3, x.shape[1], SolverConfig(num_layers=3, init=init))
    assert [w.shape for w in st_.w_stack] == [(phi.shape[1], 3), (3, 3), (3, 3)]
    assert all(np.all(w > 0) for w in st_.w_stack)
    np.testing.assert_allclose(st_.s.sum(axis=0), 1.0)
    assert np.array_equal(st_.s, st_.l_aux) and not np.any(st_.delta)


def test_solve_invariants(micro_problem):
    _, x, phi = micro_problem
    seen = []

    def record(state):
        for w in state.w_stack:
            assert np.all(w >= 0)
        assert np.all(state.s >= 0) and np.all(state.l_aux >= 0)
        seen.append(state.iter)

    res = solve(x, phi, 3, 16, 16, SolverConfig(), check_invariants=True, callback=record)
    t = list(range(1, res.iterations_run + 1))
    assert res.mu_trace == [min(0.01 * 1.1**k, 1000.0) for k in t]
    gaps = np.array(res.gap_trace)
    if res.termination == "converged":
        assert gaps[-1] < 1e-3 and np.all(gaps[:-1] >= 1e-3)
    assert seen == list(t)
    assert res.cost_trace[-1] < res.cost_trace[0]


def test_solve_mu_hits_cap(micro_problem):
    _, x, phi = micro_problem
    cfg = SolverConfig(num_layers=1, mu0=100.0, rho=2.0, mu_max=1000.0, t_max=6, eps_stop=1e-300)
    res = solve(x, phi, 3, 16, 16, cfg)
    assert res.mu_trace == [200.0, 400.0, 800.0, 1000.0, 1000.0, 1000.0]
    assert res.termination == "max_iter" and res.iterations_run == 6


def test_solve_single_iteration_with_infinite_eps(micro_problem):
    _, x, phi = micro_problem
    res = solve(x, phi, 3, 16, 16, SolverConfig(t_max=1, eps_stop=float("inf")))
    assert res.iterations_run == 1 and res.termination == "converged"


def test_solve_deterministic(micro_problem):
    _, x, phi = micro_problem
    r1 = solve(x, phi, 3, 16, 16, SolverConfig(seed=4, t_max=30))
    r2 = solve(x, phi, 3, 16, 16, SolverConfig(seed=4, t_max=30))
    assert r1.a.tobytes() == r2.a.tobytes() and r1.s.tobytes() == r2.s.tobytes()
    assert r1.cost_trace == r2.cost_trace


def test_solve_output_asc(micro_problem):
    _, x, phi = micro_problem
    res = solve(x, phi, 3, 16, 16, SolverConfig(t_max=20))
    np.testing.assert_allclose(res.s.sum(axis=0), 1.0, rtol=1e-12)
    assert res.a.shape == (x.shape[0], 3)


def test_solve_raises_on_non_finite(micro_problem):
    _, x, phi = micro_problem

    def poison(state):
        state.w_stack[0][0, 0] = np.nan

    with pytest.raises(NumericalError, match="iteration 2"):
        solve(x, phi, 3, 16, 16, SolverConfig(t_max=5), callback=poison)


def test_solve_input_validation(micro_problem):
    _, x, phi = micro_problem
    with pytest.raises(ValueError):
        solve(x, phi, 3, 16, 15)
    with pytest.raises(ValueError):
        solve(-x, phi, 3, 16, 16)
    with pytest.raises(ValueError):
        solve(x, phi[:, :2], 3, 16, 16)


def test_solve_abundances_recovers_known_mixture():
    rng = np.random.default_rng(0)
    a = rng.random((20, 3)) + 0.1
    s = rng.dirichlet(np.ones(3), size=16).T
    x = a @ s
    cfg = SolverConfig(alpha=0.0, lam=0.0, t_max=20000, eps_stop=1e-9, asc_delta=0.0)
    np.testing.assert_allclose(solve_abundances(x, a, 4, 4, cfg), s, atol=1e-3)


def test_mu_schedule_matches_folded_updates():
    mu = 0.01
    for t in range(1, 200):
        mu = update_mu(mu, 1.1, 1000.0)
        assert mu_schedule(t, 0.01, 1.1, 1000.0) == pytest.approx(mu, rel=1e-13)
    assert mu_schedule(10**6, 0.01, 1.1, 1000.0) == 1000.0
