import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gibbstf.core import (Configuration, EmptyWindow, MarkedPoint, NeighborIndex, Window, count_in_ball, erode,
                          read_pattern, self_indices, write_pattern)


def brute_neighbours(xy, x, r, skip=-1):
    d2 = ((xy - x) ** 2).sum(1)
    hit = d2 <= r * r
    if skip >= 0:
        hit[skip] = False
    return set(np.flatnonzero(hit).tolist())


def test_window_basics():
    w = Window.square(0, 3)
    assert w.d == 2
    assert w.volume() == 9.0
    assert w.contains([[0, 0], [3, 3], [3.0001, 1]]).tolist() == [True, True, False]
    with pytest.raises(EmptyWindow):
        Window((0, 0), (1, 0))
    with pytest.raises(ValueError):
        Window((0,), (1, 1))


def test_erode_examples():
    assert erode(Window.square(0, 3), 0) == Window.square(0, 3)
    e = erode(Window.square(-0.05, 3.05), 0.05)
    assert np.allclose(e.lower, 0) and np.allclose(e.upper, 3)
    with pytest.raises(EmptyWindow):
        erode(Window.square(0, 1), 0.5)
    with pytest.raises(ValueError):
        erode(Window.square(0, 1), -0.1)


@given(st.one_of(st.just(0.0), st.floats(1e-9, 0.49)))
def test_erode_volume_monotone(delta):
    w = Window.square(0, 1)
    v = erode(w, delta).volume()
    assert v <= w.volume()
    assert (v == w.volume()) == (delta == 0)


def test_midpoint_grid():
    g = Window((0, 0), (2, 1)).midpoint_grid((4, 2))
    assert g.shape == (8, 2)
    assert np.allclose(sorted(set(g[:, 0])), [0.25, 0.75, 1.25, 1.75])
    assert np.allclose(sorted(set(g[:, 1])), [0.25, 0.75])


def test_configuration_validation():
    w = Window.square(0, 1)
    with pytest.raises(ValueError):
        Configuration([[0.5, 1.5]], w)
    with pytest.raises(ValueError):
        Configuration([[0.5, 0.5], [0.5, 0.5]], w)
    with pytest.raises(ValueError):
        Configuration([[0.5, 0.5]], w, marks=[0.0])
    c = Configuration([[0.5, 0.5]], w, marks=[0.1])
    assert c.points() == [MarkedPoint((0.5, 0.5), 0.1)]
    with pytest.raises(ValueError):
        c.xy[0, 0] = 0.2


def test_restrict_exact_and_idempotent(rng):
    w = Window.square(0, 1)
    cfg = Configuration(rng.uniform(0, 1, (300, 2)), w)
    sub = Window((0.2, 0.1), (0.7, 0.9))
    r1 = cfg.restrict(sub)
    expect = {tuple(p) for p in cfg.xy if sub.contains(p)[0]}
    assert {tuple(p) for p in r1.xy} == expect
    r2 = r1.restrict(sub)
    assert np.array_equal(r1.xy, r2.xy)


def test_count_in_ball_examples(rng):
    w = Window.square(-1, 1)
    assert count_in_ball(Configuration(np.zeros((0, 2)), w), (0, 0), 0.3) == 0
    assert count_in_ball(Configuration([[0, 0]], w), (0.03, 0), 0.05) == 1
    xy = rng.uniform(0, 1, (50, 2))
    cfg = Configuration(xy, Window.square(0, 1))
    assert count_in_ball(cfg, (0.5, 0.5), 0.2) == len(brute_neighbours(xy, np.array([0.5, 0.5]), 0.2))
    assert count_in_ball(cfg, xy[3], 0.2, exclude=xy[3]) == len(brute_neighbours(xy, xy[3], 0.2, 3))
    with pytest.raises(ValueError):
        count_in_ball(cfg, (0.5, 0.5), 0.0)


def test_closed_ball_convention():
    cfg = Configuration([[0.0, 0.0], [0.5, 0.0]], Window.square(-1, 1))
    assert count_in_ball(cfg, (0.0, 0.0), 0.5, exclude=(0.0, 0.0)) == 1


@given(
    n=st.integers(0, 200),
    r=st.floats(0.001, 0.6),
    seed=st.integers(0, 2**32 - 1),
    side=st.floats(0.5, 3.0),
)
def test_neighbor_index_matches_brute_force(n, r, seed, side):
    g = np.random.default_rng(seed)
    w = Window((0.0, 0.0), (side, 1.0))
    xy = g.uniform(w.lower, w.upper, (n, 2))
    cfg = Configuration(xy, w, check=False)
    idx = NeighborIndex(cfg.xy, w, r)
    queries = g.uniform(w.lower, w.upper, (5, 2))
    for q in queries:
        assert set(idx.neighbors(q, r).tolist()) == brute_neighbours(xy, q, r)
    counts = idx.counts(queries, [r / 2, r])
    for q, c in zip(queries, counts):
        assert c[0] == len(brute_neighbours(xy, q, r / 2))
        assert c[1] == len(brute_neighbours(xy, q, r))
    if n:
        assert set(idx.neighbors(xy[0], r, exclude=0).tolist()) == brute_neighbours(xy, xy[0], r, 0)


def test_neighbor_index_other_dimensions(rng):
    w = Window.square(0, 1, d=3)
    xy = rng.uniform(0, 1, (80, 3))
    idx = NeighborIndex(xy, w, 0.3)
    q = np.array([0.4, 0.5, 0.6])
    assert set(idx.neighbors(q, 0.3).tolist()) == brute_neighbours(xy, q, 0.3)
    assert idx.counts(q[None], [0.3])[0, 0] == len(brute_neighbours(xy, q, 0.3))


def test_self_indices():
    cfg = Configuration([[0.1, 0.1], [0.2, 0.2]], Window.square(0, 1))
    assert self_indices(cfg, (0.2, 0.2)) == 1
    assert self_indices(cfg, (0.3, 0.2)) == -1


def test_pattern_roundtrip(tmp_path, rng):
    w = Window((-0.05, -0.05), (1.05, 2.0))
    cfg = Configuration(rng.uniform(w.lower, w.upper, (40, 2)), w, marks=rng.uniform(0.1, 1, 40))
    path = write_pattern(cfg, tmp_path / "pat.csv")
    assert (tmp_path / "pat.json").exists()
    back = read_pattern(path)
    assert back.carrier == w
    assert np.array_equal(back.xy, cfg.xy)
    assert np.array_equal(back.marks, cfg.marks)
    assert path.read_text().splitlines()[0] == "x,y,mark"


def test_translated_and_without(rng):
    w = Window.square(0, 1)
    cfg = Configuration(rng.uniform(0, 1, (10, 2)), w)
    t = cfg.translated([1.0, -2.0])
    assert t.carrier == Window((1, -2), (2, -1))
    assert np.allclose(t.xy - cfg.xy, [1.0, -2.0])
    assert len(cfg.without(3)) == 9
    assert len(cfg.with_points([[0.123, 0.456]])) == 11
