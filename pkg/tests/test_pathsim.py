import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from episir.model import ModelParams
from episir.pathsim import (
    IntegrationError,
    PathSeries,
    Z0,
    expected_deaths,
    herd_immunity_day,
    path_metrics,
    simulate_path,
    social_welfare,
    welfare_cost,
)


def test_no_contact_decays_exponentially(params):
    p = params
    path = simulate_path(0.0, (0.9, 0.01, 0.0), p, horizon=100, a_Ik_policy=0.0)
    np.testing.assert_allclose(path.I, 0.01 * np.exp(-p.gamma * path.t), rtol=1e-9)
    np.testing.assert_array_equal(path.S, 0.9)


def test_no_infected_stays_put(params):
    path = simulate_path(1.0, (0.9, 0.0, 0.0), params, horizon=10)
    assert path.t[-1] == pytest.approx(0.1)
    assert path.D[-1] == 0.0
    assert path.S[-1] == 0.9


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.3, 1.0), I0=st.floats(1e-6, 0.05))
def test_death_accounting_and_monotone_S(a, I0):
    p = ModelParams()
    path = simulate_path(a, (1 - I0, I0, 0.0), p, horizon=600, dt=0.2)
    lhs = path.D[-1] - path.D[0]
    rhs = p.sigma * p.delta * p.gamma * path.cum_I[-1]
    assert abs(lhs - rhs) <= 1e-8
    assert np.all(np.diff(path.S) <= 0)
    assert np.all(path.S + path.I <= 1 + 1e-12)


def test_herd_immunity_day_cases(params):
    thr = params.herd_threshold
    start_below = simulate_path(1.0, (0.3, 1e-3, 0.0), params, horizon=50)
    assert herd_immunity_day(start_below, params) == 0.0
    never = simulate_path(0.3, Z0, params, horizon=365)
    assert never.S.min() > thr
    assert herd_immunity_day(never, params) is None
    fake = PathSeries(np.array([0.0, 1.0]), np.array([thr + 0.1, thr - 0.1]), np.zeros(2), np.zeros(2),
                      np.ones(2), np.ones(2), np.zeros(2))
    assert herd_immunity_day(fake, params) == pytest.approx(0.5)


def _augmented_oracle(p, a, horizon):
    """Expected deaths by integrating the discounted toll alongside the epidemic."""
    def f(t, y):
        S, I, D, E = y
        new = p.beta * S * a * (p.sigma * p.a_Ik + (1 - p.sigma) * a) * I
        return [-new, new - p.gamma * I, p.gamma * p.delta * p.sigma * I,
                p.nu * np.exp(-p.nu * t) * (D + p.delta * p.sigma * I)]
    sol = solve_ivp(f, (0, horizon), [*Z0, 0.0], method="DOP853", rtol=1e-12, atol=1e-15)
    S, I, D, E = sol.y[:, -1]
    return 1e5 * (E + np.exp(-p.nu * horizon) * (D + p.delta * p.sigma * I))


@pytest.mark.parametrize("a", [1.0, 0.8])
def test_expected_deaths_against_augmented_ode(params, a):
    path = simulate_path(a, Z0, params, horizon=3650)
    ref = _augmented_oracle(params, a, path.t[-1])
    assert expected_deaths(path, params) == pytest.approx(ref, rel=1e-4)


def test_expected_deaths_without_vaccine(params):
    p = params.replace(nu=0.0)
    path = simulate_path(1.0, Z0, p)
    assert expected_deaths(path, p) == pytest.approx(1e5 * (path.D[-1] + p.delta * p.sigma * path.I[-1]))


def test_expected_deaths_constant_toll(params):
    t = np.linspace(0, 100, 1001)
    z = np.zeros_like(t)
    path = PathSeries(t, z + 0.5, z, z + 1e-3, z + 1, z, z)
    assert expected_deaths(path, params) == pytest.approx(100.0, rel=1e-6)


def test_welfare_cost_without_epidemic(params):
    assert welfare_cost(lambda S, I: 0.0, (1.0, 0.0, 0.0), params) == 0.0
    assert welfare_cost(lambda S, I: 0.0, (1.0, 1e-9, 0.0), params) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        welfare_cost(lambda S, I: 1.0, Z0, params)


def test_social_welfare_no_epidemic_is_zero(params):
    assert social_welfare(0.0, 0.0, 1.0, 0.0, params) == 0.0


def test_peak_where_reproduction_crosses_one(params):
    path = simulate_path(1.0, Z0, params, dt=0.05)
    k = int(np.argmax(path.I))
    assert abs(path.R_eff[k] - 1) < 3e-3
    peak, day = path.peak()
    assert peak >= path.I[k]
    assert abs(day - path.t[k]) <= 0.05


def test_policy_sources_agree(params, grid):
    arr = np.full(grid.shape, 0.7)
    a = simulate_path(arr, Z0, params, horizon=200, grid=grid)
    b = simulate_path(0.7, Z0, params, horizon=200)
    c = simulate_path(lambda S, I: 0.7, Z0, params, horizon=200)
    np.testing.assert_allclose(a.I, b.I, rtol=1e-12)
    np.testing.assert_array_equal(b.I, c.I)
    with pytest.raises(ValueError):
        simulate_path(arr, Z0, params)


def test_bad_inputs(params):
    with pytest.raises(ValueError):
        simulate_path(1.0, (0.9, 0.2, 0.0), params)
    with pytest.raises(ValueError):
        simulate_path(1.0, Z0, params, dt=0)
    with pytest.raises(ValueError):
        simulate_path(1.0, Z0, params, method="midpoint")
    with pytest.raises(IntegrationError):
        simulate_path(1.0, (0.5, 0.5, 0.0), params.replace(beta=50.0), dt=5, method="euler")


def test_csv_and_metrics(params, tmp_path):
    path = simulate_path(1.0, Z0, params, horizon=100)
    out = tmp_path / "p.csv"
    path.to_csv(out, {"a_spp": np.ones_like(path.t)})
    head = out.read_text().splitlines()[0]
    assert head == "t,S,I,D,a_U,R_eff,a_spp"
    m = path_metrics(path, params)
    text = m.as_text()
    assert "welfare_cost=none" in text and "herd_immunity_day=none" in text
