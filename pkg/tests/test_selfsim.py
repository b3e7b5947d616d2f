import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coagself import transform as tr
from coagself.errors import ZeroProfileError
from coagself.kernel import make_brownian, make_constant, make_power
from coagself.profile import Grid, Profile, l1_mass_distance, mass, normalize_mass
from coagself.selfsim import (
    BUILTIN_SEEDS,
    SolveSettings,
    apply_map,
    builtin_seed,
    residual,
    solve,
    strong_form_map,
    substitution_step,
)


@pytest.fixture(scope="module")
def expo():
    return Profile.from_function(lambda x: np.exp(-x))


def _window(p):
    x = p.grid.nodes
    return (x >= 1e-3) & (x <= 40.0)


def test_constant_fixed_point(expo):
    t = apply_map(make_constant(), expo)
    sel = _window(expo)
    assert np.max(np.abs(t.values[sel] / expo.values[sel] - 1)) < 1e-4
    assert residual(make_constant(), expo) < 1e-4


def test_quadratic_scaling(expo):
    k = make_power(0.1, 1 / 3)
    base = apply_map(k, expo).values
    for c in (0.5, 2.0):
        scaled = apply_map(k, expo.scaled(c)).values
        assert np.max(np.abs(scaled - c * c * base) / (c * c * base + 1e-300)) <= 1e-12
    two = apply_map(make_constant(), expo.scaled(2.0))
    sel = _window(expo)
    assert np.max(np.abs(two.values[sel] / (4 * expo.values[sel]) - 1)) < 1e-4


def test_kernel_monotonicity(expo):
    lo = apply_map(make_constant(), expo).values
    hi = apply_map(make_brownian(), expo).values
    assert np.all(lo <= hi)


@pytest.mark.parametrize("x", [0.05, 1.0, 7.0])
def test_apply_map_oracle_power(expo, x):
    k = make_power(0.1, 1 / 3)
    grid = Grid()
    i = int(np.argmin(np.abs(grid.nodes - x)))
    node = grid.nodes[i]
    got = apply_map(k, expo).values[i]
    assert got == pytest.approx(oracles.profile_map(node, "power", "exp"), rel=1e-5)


def test_strong_form_agrees_at_fixed_point(expo):
    s = strong_form_map(make_constant(), expo)
    sel = _window(expo)
    assert np.max(np.abs(s.values[sel] / expo.values[sel] - 1)) < 1e-4


def test_residual_wrong_scale():
    p = normalize_mass(Profile.from_function(lambda x: np.exp(-2 * x)))
    assert residual(make_constant(), p) > 0.5


def test_settings_validation():
    for kw in ({"omega": 0.0}, {"omega": 1.5}, {"tolerance": 0.0}, {"max_iterations": 0}, {"refinement": -1}):
        with pytest.raises(ValueError):
            SolveSettings(**kw)


def test_zero_seed_rejected():
    with pytest.raises(ZeroProfileError):
        solve(make_constant(), Profile.from_function(lambda x: 0.0 * x))


def test_builtin_seeds_unit_mass():
    for name in BUILTIN_SEEDS:
        assert mass(builtin_seed(name)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        builtin_seed("nope")


def test_solve_from_fixed_point():
    res = solve(make_constant(), builtin_seed("exp"))
    assert res.converged and res.iterations <= 3
    assert res.residual <= 1e-9
    assert l1_mass_distance(res.profile, lambda x: np.exp(-x)) < 1e-6


def test_nonconvergence_reported():
    res = solve(make_power(0.1, 1 / 3), builtin_seed("gamma2"), SolveSettings(max_iterations=2))
    assert not res.converged
    assert res.iterations == 2 and len(res.history) == 2
    assert "maximum" in res.message


def test_substitution_step_keeps_mass(expo):
    p = substitution_step(make_power(0.1, 1 / 3), normalize_mass(expo), 0.5)
    assert mass(p) == pytest.approx(1.0, abs=1e-12)
    assert np.all(p.values >= 0)


@pytest.mark.slow
def test_constant_from_gamma2(solution):
    res = solution(0.0, "gamma2")
    assert res.converged
    assert res.residual <= 10 * 1e-10
    assert l1_mass_distance(res.profile, lambda x: np.exp(-x)) < 1e-3
    assert mass(res.profile) == pytest.approx(1.0, abs=1e-10)
    assert np.all(res.profile.values >= 0)


@pytest.mark.slow
def test_power_solution_contract(solution):
    res = solution(0.1, "exp")
    assert res.converged
    assert res.residual <= 10 * 1e-10
    assert mass(res.profile) == pytest.approx(1.0, abs=1e-10)
    assert np.all(res.profile.values >= 0)
    assert residual(make_power(0.1, 1 / 3), res.profile) <= 1e-9


@pytest.mark.slow
def test_seed_independence(solution):
    a = solution(0.1, "exp").profile
    b = solution(0.1, "gamma2").profile
    assert tr.profile_distance(a, b) < 1e-3


@given(c=st.floats(min_value=0.2, max_value=5.0))
@settings(max_examples=8, deadline=None)
def test_quadratic_scaling_property(c):
    p = Profile.from_function(lambda x: (1 + x) * np.exp(-1.3 * x), Grid(1e-5, 60.0, 128))
    k = make_brownian()
    base = apply_map(k, p).values
    assert np.allclose(apply_map(k, p.scaled(c)).values, c * c * base, rtol=1e-12, atol=0)
