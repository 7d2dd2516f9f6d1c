import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dissipacert.data import (
    SampleFileError,
    SampleSet,
    covering_radius,
    normalize,
    read_raw,
    read_samples,
    sphere_probes,
    write_samples,
)
from dissipacert.model import Trajectory, sample_pairs, two_subsystem
from oracles import circle_max_min


def traj(x, w, f):
    return Trajectory(0, np.atleast_2d(x), np.atleast_2d(w), np.atleast_2d(f))


def test_normalize_examples():
    s = normalize(traj([[3.0]], [[4.0]], [[5.0]]))
    assert np.allclose([s.x_hat[0, 0], s.w_hat[0, 0], s.f_hat[0, 0]], [0.6, 0.8, 1.0])
    with pytest.raises(ValueError, match="triple 1"):
        normalize(traj([[1.0], [0.0]], [[0.0], [0.0]], [[1.0], [1.0]]))


rows = st.integers(1, 20).flatmap(
    lambda k: st.tuples(*(arrays(np.float64, (k, d), elements=st.floats(-1e3, 1e3)) for d in (2, 3, 2)))
)


@given(rows)
def test_normalize_idempotent(arrs):
    x, w, f = arrs
    if np.any(np.sqrt((x ** 2).sum(1) + (w ** 2).sum(1)) < 1e-100):
        return
    s = normalize(traj(x, w, f))
    assert np.allclose(np.linalg.norm(s.points, axis=1), 1.0, atol=1e-12)
    assert normalize(s) == s


def test_sample_set_is_read_only():
    s = normalize(traj([[1.0]], [[0.0]], [[0.5]]))
    with pytest.raises(ValueError):
        s.x_hat[0, 0] = 2.0


def test_antipodal_circle_against_brute_force():
    s = SampleSet(0, [[1.0], [-1.0]], [[0.0], [0.0]], [[0.0], [0.0]])
    est = covering_radius(s)
    truth = circle_max_min(np.array([[1.0, 0.0], [-1.0, 0.0]]), angles=1_000_000)
    assert truth == pytest.approx(np.sqrt(2), abs=1e-9)
    assert truth <= est.epsilon <= truth + est.probe_spacing_bound + 1e-12
    assert est.raw <= truth + 1e-12


def test_single_point_sphere_diameter():
    s = SampleSet(0, [[1.0]], [[0.0]], [[0.0]])
    assert covering_radius(s).epsilon == pytest.approx(2.0)


def test_dense_circle_small_epsilon():
    th = np.linspace(0, 2 * np.pi, 2000, endpoint=False)
    s = SampleSet(0, np.cos(th)[:, None], np.sin(th)[:, None], np.zeros((2000, 1)))
    est = covering_radius(s)
    assert est.epsilon < 0.01


@pytest.mark.parametrize("dim", [3, 4])
def test_epsilon_bounds_dense_brute_force(dim):
    rng = np.random.default_rng(dim)
    pts = rng.standard_normal((300, dim))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    n = dim // 2
    s = SampleSet(0, pts[:, :n], pts[:, n:], np.zeros((300, n)))
    est = covering_radius(s, probes=4096)
    dense = rng.standard_normal((200_000, dim))
    dense /= np.linalg.norm(dense, axis=1, keepdims=True)
    from scipy.spatial import cKDTree

    brute = cKDTree(pts).query(dense)[0].max()
    assert est.epsilon >= brute


def test_monotone_under_sample_addition():
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(100):
        pts = rng.standard_normal((60, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        s = SampleSet(0, pts[:, :1], pts[:, 1:], np.zeros((60, 1)))
        k = int(rng.integers(5, 59))
        small = covering_radius(s.subset(np.arange(k)), probes=2048)
        big = covering_radius(s, probes=2048)
        violations += big.epsilon > small.epsilon
    assert violations == 0


def test_probe_sets_on_sphere():
    for d in (2, 3, 5, 70):
        p, _ = sphere_probes(512, d, seed=0)
        assert np.allclose(np.linalg.norm(p, axis=1), 1.0)


def test_round_trip_exact(tmp_path):
    s = normalize(sample_pairs(two_subsystem(), 1, 40, seed=5))
    path = write_samples(s, tmp_path / "s.txt")
    back = read_samples(path)
    assert back == s and back.seed == 5


def test_raw_round_trip(tmp_path):
    tr = sample_pairs(two_subsystem(), 0, 10, seed=2, radius=3.0)
    path = write_samples(tr, tmp_path / "raw.txt")
    back = read_raw(path)
    assert np.array_equal(back.states, tr.states)
    assert read_samples(path) == normalize(tr)


def test_malformed_file_reports_line(tmp_path):
    s = normalize(sample_pairs(two_subsystem(), 0, 3, seed=0))
    path = write_samples(s, tmp_path / "s.txt")
    lines = path.read_text().splitlines()
    lines[2] = lines[2] + ",1.0"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SampleFileError) as exc:
        read_samples(path)
    assert exc.value.line == 3
