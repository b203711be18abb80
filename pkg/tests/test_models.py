import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gibbstf.core import Configuration, Window
from gibbstf.models import (AreaModel, Box, ModelMismatch, MultiStraussModel, PoissonModel, StraussModel,
                            beta_gamma, model_from_json, theta_from_beta_gamma, uncovered_area)

W = Window.square(-1, 2)


def random_cfg(seed, n=60, window=Window.square(0, 1)):
    g = np.random.default_rng(seed)
    return Configuration(g.uniform(window.lower, window.upper, (n, 2)), window)


def lens(R, d):
    return 2 * R * R * math.acos(d / (2 * R)) - d / 2 * math.sqrt(4 * R * R - d * d)


def test_strauss_local_energy_examples():
    m = StraussModel(0.05)
    th = np.array([-math.log(100), math.log(2)])
    empty = Configuration(np.zeros((0, 2)), W)
    assert m.local_energy(th, (0.3, 0.3), empty) == th[0]
    one = Configuration([[0.0, 0.0]], W)
    assert m.local_energy(th, (0.03, 0.0), one) == pytest.approx(-math.log(100) + math.log(2), abs=1e-15)
    assert m.papangelou(th, (0.03, 0.0), one) == math.exp(-m.local_energy(th, (0.03, 0.0), one))


def test_papangelou_beta_gamma():
    m = StraussModel(0.05)
    th = theta_from_beta_gamma(100, 0.5)
    two = Configuration([[0.0, 0.0], [0.02, 0.0]], W)
    assert m.papangelou(th, (0.01, 0.01), two) == pytest.approx(25.0, rel=1e-12)
    assert beta_gamma(th) == pytest.approx((100, 0.5))


def test_data_point_statistics_exclude_self():
    m = StraussModel(0.1)
    cfg = Configuration([[0.5, 0.5], [0.55, 0.5], [0.9, 0.9]], Window.square(0, 1))
    assert m.statistics_of_data(cfg).tolist() == [[1, 1], [1, 1], [1, 0]]
    assert m.statistics_of_data(cfg, [False, False, True]).tolist() == [[1, 0]]
    assert m.sufficient_statistics((0.5, 0.5), cfg).tolist() == [1, 1]


def test_multistrauss_nested_counts():
    m = MultiStraussModel([0.1, 0.2])
    cfg = Configuration([[0.5, 0.5], [0.55, 0.5], [0.65, 0.5]], Window.square(0, 1))
    assert m.statistics([[0.5, 0.5]], cfg, exclude=[0]).tolist() == [[1, 1, 2]]
    with pytest.raises(ValueError):
        MultiStraussModel([0.2, 0.1])
    with pytest.raises(ValueError):
        StraussModel(0.05, box=Box([-10, -1], [10, 5]))


def test_box_and_check():
    m = StraussModel(0.05)
    assert m.box.lower == (-10.0, 0.0) and m.box.upper == (10.0, 5.0)
    with pytest.raises(ValueError):
        m.check([0.0, -0.1])
    with pytest.raises(ValueError):
        m.check([0.0])
    with pytest.raises(ValueError):
        Box([0, 0], [1, np.inf])
    assert Box([0, 1], [2, 3]).to_json() == {"theta1": [0.0, 2.0], "theta2": [1.0, 3.0]}


def test_uncovered_area_examples():
    R = 0.05
    empty = Configuration(np.zeros((0, 2)), W)
    assert uncovered_area((0.5, 0.5), R, empty) == pytest.approx(math.pi * R * R, rel=1e-15)
    far = Configuration([[0.5 + 2 * R, 0.5]], W)
    assert uncovered_area((0.5, 0.5), R, far) == pytest.approx(math.pi * R * R, rel=1e-15)


@pytest.mark.parametrize("resolution", [128, 512])
def test_uncovered_area_lens(resolution):
    # one neighbour at distance R: pi R^2 minus the two-disc lens
    R = 1.0
    cfg = Configuration([[1.0, 0.0]], Window.square(-3, 3))
    area, err = uncovered_area((0.0, 0.0), R, cfg, resolution=resolution, return_error=True)
    exact = math.pi - lens(R, R)
    assert exact == pytest.approx(math.pi - (2 * math.pi / 3 - math.sqrt(3) / 2), abs=1e-12)
    assert exact == pytest.approx(1.9132, abs=1e-4)
    assert abs(area - exact) <= err


@given(st.floats(0.0, 1.99), st.floats(0, 2 * math.pi))
def test_uncovered_area_two_discs(d, angle):
    R = 1.0
    cfg = Configuration([[d * math.cos(angle), d * math.sin(angle)]], Window.square(-3, 3))
    area, err = uncovered_area((0.0, 0.0), R, cfg, resolution=256, return_error=True)
    assert 0 <= area <= math.pi
    assert abs(area - (math.pi - lens(R, d))) <= err


def test_area_model_basics():
    m = AreaModel(0.05)
    assert m.D == pytest.approx(0.1)
    cfg = random_cfg(1, 200)
    V = m.statistics_of_data(cfg)
    assert np.all(V[:, 0] == 1)
    assert np.all((V[:, 1] >= 0) & (V[:, 1] <= math.pi * 0.05 ** 2 + 1e-15))


@pytest.mark.parametrize("model", [StraussModel(0.05), MultiStraussModel([0.03, 0.08]), AreaModel(0.05), PoissonModel()])
def test_local_stability(model):
    g = np.random.default_rng(7)
    rho = model.local_stability_bound()
    thetas = model.box.sample(g, 10_000)
    cfg = random_cfg(3, 300)
    V = model.statistics(g.uniform(0, 1, (10_000, 2)), cfg)
    energy = np.sum(V * thetas, axis=1)
    assert np.all(energy >= -rho - 1e-9)


@pytest.mark.parametrize("model", [StraussModel(0.07), MultiStraussModel([0.03, 0.08]), AreaModel(0.05)])
def test_finite_range(model):
    cfg = random_cfg(11, 150)
    q = np.array([0.5, 0.5])
    near = np.sum((cfg.xy - q) ** 2, axis=1) <= model.D ** 2
    trimmed = Configuration(cfg.xy[near], cfg.carrier)
    assert np.array_equal(model.statistics(q[None], cfg), model.statistics(q[None], trimmed))


@given(st.floats(0, 1), st.integers(0, 1000))
def test_exponential_family_linearity(alpha, seed):
    m = StraussModel(0.1)
    g = np.random.default_rng(seed)
    cfg = random_cfg(seed, 40)
    x = g.uniform(0, 1, 2)
    t1, t2 = m.box.sample(g), m.box.sample(g)
    mix = alpha * t1 + (1 - alpha) * t2
    v = m.sufficient_statistics(x, cfg)
    assert m.local_energy(mix, x, cfg) == pytest.approx(alpha * np.dot(t1, v) + (1 - alpha) * np.dot(t2, v), abs=1e-12)


@given(st.integers(0, 1000), st.sampled_from([0.25, -0.5, 1.0, 0.125]), st.sampled_from([0.5, -0.25, 2.0]))
def test_translation_invariance(seed, tx, ty):
    cfg = random_cfg(seed, 80)
    t = np.array([tx, ty])
    moved = cfg.translated(t)
    g = np.random.default_rng(seed)
    q = g.uniform(0.2, 0.8, (20, 2))
    s = StraussModel(0.1)
    assert np.array_equal(s.statistics(q, cfg), s.statistics(q + t, moved))
    a = AreaModel(0.05)
    h = 2 * 0.05 / a.resolution
    assert np.allclose(a.statistics(q, cfg), a.statistics(q + t, moved), atol=4 * h * h)


def test_model_from_json():
    m = model_from_json({"model": "strauss", "R": 0.05, "box": {"theta1": [-10, 10], "theta2": [0, 5]}})
    assert isinstance(m, StraussModel) and m.R == 0.05
    assert isinstance(model_from_json({"model": "area", "R": 0.1}), AreaModel)
    assert isinstance(model_from_json({"type": "poisson"}), PoissonModel)
    assert model_from_json(m.to_json()).to_json() == m.to_json()
    with pytest.raises(ValueError):
        model_from_json({"model": "lennard-jones"})


def test_model_mismatch_is_type_error():
    assert issubclass(ModelMismatch, TypeError)
