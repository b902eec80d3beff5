import numpy as np
import pytest

from stvmlu.baseline import LABEL, BaselineConfig, l12nmf_cost, l12nmf_solve


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(3)
    a = rng.random((30, 3)) + 0.05
    s = rng.dirichlet(np.ones(3), size=64).T
    return a, s, a @ s + 0.01 * rng.random((30, 64))


def test_exact_start_is_fixed_point(data):
    a, s, _ = data
    x = a @ s
    res = l12nmf_solve(x, BaselineConfig(3, lam=0.0, t_max=5, asc_delta=0.0), a0=a, s0=s)
    np.testing.assert_allclose(res.a, a, rtol=1e-12)
    np.testing.assert_allclose(res.s, s, rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_frobenius_cost_monotone_without_sparsity(data, seed):
    _, _, x = data
    res = l12nmf_solve(x, BaselineConfig(3, lam=0.0, t_max=200, asc_delta=0.0, seed=seed))
    c = np.array(res.cost_trace)
    assert np.all(c[1:] <= c[:-1] * (1 + 1e-10))


def test_nonnegative_and_deterministic(data):
    _, _, x = data
    r1 = l12nmf_solve(x, BaselineConfig(3, t_max=50, seed=1))
    r2 = l12nmf_solve(x, BaselineConfig(3, t_max=50, seed=1))
    assert np.all(r1.a >= 0) and np.all(r1.s >= 0)
    assert r1.a.tobytes() == r2.a.tobytes() and r1.cost_trace == r2.cost_trace
    assert r1.label == LABEL == "L1/2-NMF (reimplementation)"
    np.testing.assert_allclose(r1.s.sum(axis=0), 1.0, rtol=1e-12)


def test_larger_lambda_gives_sparser_abundances(data):
    _, _, x = data
    cfg = dict(n_endmembers=3, t_max=500, seed=0, asc_delta=0.0)
    s0 = l12nmf_solve(x, BaselineConfig(lam=0.0, **cfg)).s
    s1 = l12nmf_solve(x, BaselineConfig(lam=0.1, **cfg)).s
    assert np.sum(np.sqrt(s1)) <= np.sum(np.sqrt(s0))


def test_cost_definition(data):
    a, s, x = data
    r = x - a @ s
    assert l12nmf_cost(x, a, s, 0.2) == pytest.approx(0.5 * np.sum(r * r) + 0.2 * np.sum(np.sqrt(s)))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        BaselineConfig(lam=-1)
    with pytest.raises(ValueError):
        l12nmf_solve(-np.ones((3, 3)), BaselineConfig(2))
