import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coagself.errors import DivergenceError, DivergentTailError, NonPositiveValuesError, ZeroProfileError
from coagself.profile import (
    Grid,
    Profile,
    fit_tail,
    integrate,
    l1_mass_distance,
    mass,
    moment,
    negative_moment,
    normalize_mass,
    profile_from_csv,
    profile_to_csv,
    read_csv,
    rescale,
    write_csv,
)

# int_0^1 x^(-1/3) e^(-x) dx = lower incomplete gamma(2/3, 1), mpmath at 30 digits
NEG_MOMENT_THIRD = 1.0496884916422417


@pytest.fixture(scope="module")
def expo():
    return Profile.from_function(lambda x: np.exp(-x))


def test_grid_geometric():
    g = Grid()
    r = g.nodes[1:] / g.nodes[:-1]
    assert np.all(np.diff(g.nodes) > 0)
    assert np.max(np.abs(r / r[0] - 1)) <= 1e-12
    assert (g.x_min, g.x_max, g.count) == (1e-6, 80.0, 512)
    assert Grid.from_nodes(g.nodes) == g
    with pytest.raises(ValueError):
        Grid(1.0, 0.5, 64)
    with pytest.raises(ValueError):
        Grid.from_nodes([1.0, 2.0, 3.5, 4.0, 5.0, 6.0, 7.0, 8.0])


def test_profile_validation():
    g = Grid()
    with pytest.raises(ValueError):
        Profile.from_function(lambda x: -np.exp(-x))
    with pytest.raises(ValueError):
        Profile(g, np.full(g.count, np.nan), 1.0, 1.0)
    with pytest.raises(ValueError):
        Profile(g, np.ones(3), 1.0, 1.0)


def test_tail_continuity(expo):
    assert expo.tail_rate == pytest.approx(1.0, rel=1e-12)
    xm = expo.grid.x_max
    assert expo.tail_amp * math.exp(-expo.tail_rate * xm) == pytest.approx(expo.values[-1], rel=1e-6)
    x = np.array([100.0, 200.0])
    assert np.allclose(expo(x), np.exp(-x), rtol=1e-9)


def test_integrate_gamma_moments(expo):
    assert integrate(expo, power=1.0) == pytest.approx(1.0, abs=1e-6)
    assert integrate(expo, power=2.0) == pytest.approx(2.0, abs=1e-6)
    assert moment(expo, 0.0) == pytest.approx(1.0, abs=1e-6)
    assert moment(expo, 5.0) == pytest.approx(120.0, rel=1e-6)
    assert moment(expo, 1 / 3) == pytest.approx(float(mpmath.gamma(mpmath.mpf(4) / 3)), rel=1e-6)
    with pytest.raises(ValueError):
        moment(expo, -1.0)


def test_integrate_tail_rates(expo):
    # int x e^{0.001 x} e^{-x} = 1/0.999^2
    assert integrate(expo, power=1.0, rate=-0.001) == pytest.approx(1 / 0.999**2, rel=1e-6)
    assert math.isfinite(integrate(expo, power=1.0, rate=-0.999))
    with pytest.raises(DivergentTailError):
        integrate(expo, power=1.0, rate=-1.5)


def test_integrate_windows(expo):
    assert integrate(expo, lower=1.0, upper=3.0) == pytest.approx(math.exp(-1) - math.exp(-3), rel=1e-10)
    assert integrate(expo, lower=50.0, upper=200.0) == pytest.approx(math.exp(-50) - math.exp(-200), rel=1e-8)
    assert integrate(expo, upper=1e-7) == pytest.approx(1e-7, rel=1e-6)


def test_mass_and_normalize(expo):
    assert mass(expo) == pytest.approx(1.0, abs=1e-6)
    two = expo.scaled(2.0)
    assert mass(two) == pytest.approx(2.0, abs=2e-6)
    assert mass(normalize_mass(two)) == pytest.approx(1.0, abs=1e-14)
    assert mass(rescale(expo, 2.0)) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(ZeroProfileError):
        normalize_mass(Profile.from_function(lambda x: 0.0 * x))


def test_rescale_examples(expo):
    assert rescale(expo, 1.0) is expo
    assert mass(rescale(expo, 4.0)) == pytest.approx(0.25, abs=1e-6)
    assert moment(rescale(expo, 3.0), 0.0) == pytest.approx(1.0, abs=1e-6)
    r = rescale(expo, 2.0)
    assert r.tail_rate == pytest.approx(2.0)
    with pytest.raises(ValueError):
        rescale(expo, 0.0)


def test_negative_moment(expo):
    assert negative_moment(expo, 0.0) == pytest.approx(1 - math.exp(-1), rel=1e-8)
    oracle = float(mpmath.gammainc(mpmath.mpf(2) / 3, 0, 1))
    assert oracle == pytest.approx(NEG_MOMENT_THIRD, rel=1e-15)
    assert negative_moment(expo, 1 / 3) == pytest.approx(NEG_MOMENT_THIRD, rel=1e-6)
    diag = Profile.from_function(lambda x: np.exp(-x) / x)
    with pytest.raises(DivergenceError):
        negative_moment(diag, 1 / 3)
    with pytest.raises(ValueError):
        negative_moment(expo, 1.0)


def test_fit_tail(expo):
    a, c, res = fit_tail(expo, (5.0, 20.0))
    assert a == pytest.approx(1.0, abs=1e-10) and c == pytest.approx(1.0, rel=1e-8) and res < 1e-10
    a, c, _ = fit_tail(Profile.from_function(lambda x: 3 * np.exp(-2 * x)), (5.0, 20.0))
    assert a == pytest.approx(2.0, rel=1e-10) and c == pytest.approx(3.0, rel=1e-8)
    cut = Profile.from_function(lambda x: np.where(x < 10, np.exp(-x), 0.0))
    with pytest.raises(NonPositiveValuesError):
        fit_tail(cut, (5.0, 20.0))


def test_csv_roundtrip(tmp_path, expo):
    text = profile_to_csv(expo)
    assert text.splitlines()[0] == "x,f"
    back = profile_from_csv(text)
    assert np.array_equal(back.values, expo.values)
    assert (back.tail_rate, back.tail_amp) == (expo.tail_rate, expo.tail_amp)
    assert profile_to_csv(back) == text
    write_csv(expo, tmp_path / "p.csv")
    assert profile_to_csv(read_csv(tmp_path / "p.csv")) == text
    with pytest.raises(ValueError):
        profile_from_csv("a,b\n1,2\n")


def test_l1_distance(expo):
    assert l1_mass_distance(expo, expo) <= 1e-15
    assert l1_mass_distance(expo, lambda x: 0.0 * x) == pytest.approx(1.0, abs=1e-6)


amps = st.floats(min_value=0.1, max_value=10.0)
rates = st.floats(min_value=0.3, max_value=3.0)


@given(c=amps, a=rates)
@settings(max_examples=25, deadline=None)
def test_normalize_idempotent(c, a):
    p = Profile.from_function(lambda x: c * np.exp(-a * x) * (1 + x) ** 0.5)
    once = normalize_mass(p)
    twice = normalize_mass(once)
    assert np.max(np.abs(twice.values - once.values)) <= 1e-14 * np.max(once.values)


@given(a=st.floats(min_value=0.5, max_value=2.0))
@settings(max_examples=20, deadline=None)
def test_rescale_roundtrip(a):
    p = Profile.from_function(lambda x: x**0.5 * np.exp(-x))
    back = rescale(rescale(p, a), 1.0 / a)
    x = p.grid.nodes
    sel = (x > 1e-4) & (x < 30.0)
    assert np.max(np.abs(back.values[sel] - p.values[sel])) <= 1e-8


@given(c=amps, a=rates)
@settings(max_examples=20, deadline=None)
def test_scaling_laws(c, a):
    p = Profile.from_function(lambda x: np.exp(-x))
    q = rescale(p.scaled(c), a)
    assert moment(q, 0.0) == pytest.approx(c * moment(p, 0.0), rel=1e-6)
    assert mass(q) == pytest.approx(c * mass(p) / a, rel=1e-6)
