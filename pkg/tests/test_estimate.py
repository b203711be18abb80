import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gibbstf.core import Configuration, Window
from gibbstf.estimate import (CollarMissing, DegenerateCounts, OptimizerConfig, QuadratureScheme, contrast, count_Nk,
                              fit_mple, fit_strauss_explicit, fit_tf, fold_into_box, gnz_terms, nelder_mead_box,
                              residual, volume_Vk)
from gibbstf.models import Box, PoissonModel, StraussModel, theta_from_beta_gamma
from gibbstf.sim import SamplerConfig, sample_gibbs
from gibbstf.testfn import Constant, h_count, h_exp_energy, h_fiksel, h_gradV, h_strauss_indicator

R = 0.05
CARRIER = Window.square(-R, 1 + R)
LAM = Window.square(0, 1)
FINE = QuadratureScheme.with_spacing(LAM, 1 / 512)


@pytest.fixture(scope="module")
def pattern():
    return sample_gibbs(StraussModel(R), theta_from_beta_gamma(100, 0.5), CARRIER, SamplerConfig(seed=4))


def brute_counts(xy, inside, r):
    d = np.sqrt(((xy[inside][:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    return (d <= r).sum(1) - 1


def raster_Vk(xy, window, r, k, res):
    n = int(round(window.sides[0] * res))
    g = window.lower[0] + (np.arange(n) + 0.5) / res
    X, Y = np.meshgrid(g, g, indexing="ij")
    c = np.zeros(X.shape, dtype=int)
    for x, y in xy:
        c += (X - x) ** 2 + (Y - y) ** 2 <= r * r
    return np.count_nonzero(c == k) / c.size * window.volume()


def test_poisson_residual_vanishes_at_mle():
    g = np.random.default_rng(0)
    cfg = Configuration(g.uniform(0, 1, (37, 2)), LAM)
    m = PoissonModel()
    theta = [-math.log(37.0)]
    assert residual(cfg, LAM, Constant(), m, theta) == pytest.approx(0.0, abs=1e-10)
    rep = fit_mple(cfg, LAM, m)
    assert rep.theta_hat[0] == pytest.approx(-math.log(37.0), abs=1e-8)
    assert rep.converged


def test_count_Nk_matches_brute_force(pattern):
    inside = np.flatnonzero(pattern.in_window(LAM))
    nb = brute_counts(pattern.xy, inside, R)
    for k in range(4):
        assert count_Nk(pattern, LAM, R, k) == int(np.sum(nb == k))
    assert sum(count_Nk(pattern, LAM, R, k) for k in range(20)) == len(inside)


def test_count_Nk_examples():
    cfg = Configuration([[0.5, 0.5], [0.53, 0.5], [0.9, 0.9]], CARRIER)
    assert count_Nk(cfg, LAM, R, 0) == 1
    assert count_Nk(cfg, LAM, R, 1) == 2
    assert count_Nk(Configuration(np.zeros((0, 2)), CARRIER), LAM, R, 0) == 0
    with pytest.raises(ValueError):
        count_Nk(cfg, LAM, R, -1)


def test_volume_Vk_examples(pattern):
    empty = Configuration(np.zeros((0, 2)), CARRIER)
    assert volume_Vk(empty, LAM, R, 0) == pytest.approx(1.0)
    assert volume_Vk(empty, LAM, R, 1) == 0.0
    one = Configuration([[0.5, 0.5]], CARRIER)
    spacing = 1 / 512
    assert abs(volume_Vk(one, LAM, R, 1) - math.pi * R * R) <= 2 * spacing * 2 * math.pi * R
    total = sum(volume_Vk(pattern, LAM, R, k) for k in range(30))
    assert total == pytest.approx(LAM.volume(), rel=1e-12)
    with pytest.raises(ValueError):
        volume_Vk(pattern, LAM, R, 0, resolution=32)


def test_volume_Vk_matches_raster_oracle(pattern):
    for k in range(3):
        assert volume_Vk(pattern, LAM, R, k, 256) == pytest.approx(raster_Vk(pattern.xy, LAM, R, k, 256), abs=1e-12)


def test_explicit_is_closed_form(pattern):
    rep = fit_strauss_explicit(pattern, LAM, R)
    t = rep.trace
    assert t["N0"] == count_Nk(pattern, LAM, R, 0) and t["N1"] == count_Nk(pattern, LAM, R, 1)
    assert t["V0"] == volume_Vk(pattern, LAM, R, 0) and t["V1"] == volume_Vk(pattern, LAM, R, 1)
    assert rep.theta_hat[0] == pytest.approx(math.log(t["V0"] / t["N0"]), rel=1e-15)
    assert rep.theta_hat[1] == pytest.approx(math.log(t["V1"] / t["N1"]) - math.log(t["V0"] / t["N0"]), rel=1e-12)
    assert np.allclose(rep.residuals, 0, atol=1e-9)
    json.dumps(rep.to_json())


def test_explicit_degenerate_counts():
    cfg = Configuration([[0.2, 0.2], [0.7, 0.7]], CARRIER)
    with pytest.raises(DegenerateCounts, match="N1"):
        fit_strauss_explicit(cfg, LAM, R)


def test_collar_missing(pattern):
    with pytest.raises(CollarMissing):
        fit_strauss_explicit(pattern, CARRIER, R)
    with pytest.raises(CollarMissing):
        contrast(pattern, CARRIER, [h_count(R)], StraussModel(R), [-4, 1])
    # a collar of exactly the range is enough
    contrast(pattern, LAM, [h_count(R), Constant()], StraussModel(R), [-4, 1])


def test_indicator_residual_formula(pattern):
    m = StraussModel(R)
    theta = np.array([-4.4, 0.6])
    for k in (1, 2, 3):
        c = residual(pattern, LAM, h_strauss_indicator(k), m, theta, quadrature=FINE)
        expect = math.exp(-theta[0]) * volume_Vk(pattern, LAM, R, k - 1) - math.exp((k - 1) * theta[1]) * count_Nk(
            pattern, LAM, R, k - 1)
        assert c == pytest.approx(expect, rel=1e-9, abs=1e-9)


def test_quadrature_refinement_within_error_estimate(pattern):
    m = StraussModel(R)
    theta = theta_from_beta_gamma(100, 0.5)
    for h in (h_count(R), h_strauss_indicator(2), Constant()):
        coarse, err = residual(pattern, LAM, h, m, theta, QuadratureScheme(n_dummy=128 ** 2), return_error=True)
        fine = residual(pattern, LAM, h, m, theta, QuadratureScheme(n_dummy=1024 ** 2))
        assert abs(coarse - fine) <= err


def test_monte_carlo_quadrature(pattern):
    m = StraussModel(R)
    theta = theta_from_beta_gamma(100, 0.5)
    ref = residual(pattern, LAM, h_count(R), m, theta, FINE)
    mc, err = residual(pattern, LAM, h_count(R), m, theta, QuadratureScheme("monte_carlo", 20_000, seed=3),
                       return_error=True)
    assert abs(mc - ref) <= err
    a = residual(pattern, LAM, h_count(R), m, theta, QuadratureScheme("monte_carlo", 500, seed=3))
    b = residual(pattern, LAM, h_count(R), m, theta, QuadratureScheme("monte_carlo", 500, seed=3))
    assert a == b
    with pytest.raises(ValueError):
        QuadratureScheme("simpson")


def test_fiksel_shortcut_close_to_quadrature(pattern):
    m = StraussModel(R)
    theta = theta_from_beta_gamma(100, 0.5)
    exact = residual(pattern, LAM, h_fiksel(R), m, theta, FINE)
    short = residual(pattern, LAM, h_fiksel(R), m, theta, QuadratureScheme(fiksel_shortcut=True))
    n = int(pattern.in_window(LAM).sum())
    # the shortcut ignores the edge loss of discs near the boundary of the window
    assert abs(exact - short) <= 4 * R * n * math.pi * R * R


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_contrast_non_negative(theta):
    g = np.random.default_rng(1)
    cfg = Configuration(g.uniform(-R, 1 + R, (60, 2)), CARRIER)
    theta = [theta[0], abs(theta[1]) % 5]
    assert contrast(cfg, LAM, [h_count(R), Constant()], StraussModel(R), theta, QuadratureScheme(n_dummy=400)) >= 0


def test_fit_tf_test_count_checks(pattern):
    m = StraussModel(R)
    with pytest.raises(ValueError):
        fit_tf(pattern, LAM, [Constant()], m)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        fit_tf(pattern, LAM, [Constant(), h_count(R)], m, optimizer=OptimizerConfig(n_starts=1))
    assert any("K = p" in str(x.message) for x in w)


def test_fit_tf_permutation_invariant(pattern):
    m = StraussModel(R)
    perm = np.random.default_rng(2).permutation(len(pattern))
    shuffled = Configuration(pattern.xy[perm], pattern.carrier)
    tests = [Constant(), h_count(R), h_strauss_indicator(2)]
    a = fit_tf(pattern, LAM, tests, m)
    b = fit_tf(shuffled, LAM, tests, m)
    assert np.allclose(a.theta_hat, b.theta_hat, atol=1e-10)
    assert a.U_value == pytest.approx(b.U_value, abs=1e-14)


def test_tf_with_indicators_equals_explicit(pattern):
    m = StraussModel(R)
    ex = fit_strauss_explicit(pattern, LAM, R)
    tf = fit_tf(pattern, LAM, [h_strauss_indicator(1), h_strauss_indicator(2)], m, quadrature=FINE,
                optimizer=OptimizerConfig(n_starts=2, xtol=1e-9))
    assert np.allclose(tf.theta_hat, ex.theta_hat, atol=1e-5)


def test_tf_with_gradV_equals_mple(pattern):
    m = StraussModel(R)
    q = QuadratureScheme(n_dummy=200 ** 2)
    ml = fit_mple(pattern, LAM, m, quadrature=q)
    tf = fit_tf(pattern, LAM, h_gradV(m), m, quadrature=q, optimizer=OptimizerConfig(n_starts=2, xtol=1e-9))
    assert np.allclose(tf.theta_hat, ml.theta_hat, atol=1e-5)
    assert ml.converged
    assert ml.trace["max_hessian_eigenvalue"] <= 0


def test_exp_energy_pair_has_zero_contrast_at_truth():
    # with h = exp(<theta, V>) the integral is |Lambda| exactly
    cfg = Configuration(np.random.default_rng(5).uniform(-R, 1 + R, (80, 2)), CARRIER)
    terms = gnz_terms(cfg, LAM, [h_exp_energy()], StraussModel(R), QuadratureScheme(n_dummy=64 ** 2))
    assert terms.integrals(np.array([-3.0, 1.0]))[0, 0] == pytest.approx(1.0, rel=1e-12)


def test_fold_into_box():
    assert np.allclose(fold_into_box(np.array([1.5, -0.25]), np.array([0.0, 0.0]), np.array([1.0, 1.0])), [0.5, 0.25])
    x = fold_into_box(np.array([17.3, -9.1]), np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    assert np.all((x >= 0) & (x <= [1, 2]))


def test_nelder_mead_box_quadratic():
    box = Box([-5, 0], [5, 5])
    f = lambda t: (t[0] - 1.2) ** 2 + 3 * (t[1] - 0.7) ** 2
    x, fx, it, ok = nelder_mead_box(f, np.array([0.0, 2.5]), box, np.array([0.5, 0.25]), xtol=1e-10)
    assert ok and np.allclose(x, [1.2, 0.7], atol=1e-6)
    # optimum outside the box lands on the boundary
    x, *_ = nelder_mead_box(lambda t: (t[0] - 1) ** 2 + (t[1] + 1) ** 2, np.array([0.0, 2.5]), box,
                            np.array([0.5, 0.25]), xtol=1e-10)
    assert x[1] == pytest.approx(0.0, abs=1e-6)
