import numpy as np
import pytest
from hypothesis import given, strategies as st

from dissipacert.data import SampleSet, normalize
from dissipacert.lp import solve_lp
from dissipacert.model import sample_pairs, two_subsystem
from dissipacert.scp import (
    ScpProblem,
    StorageFn,
    StorageTemplate,
    SupplyRate,
    assemble_scp,
    eval_storage,
    solve_scp,
)
from oracles import lp_vertex_enumeration


def scalar_problem(**kw):
    s = SampleSet(0, [[1.0]], [[0.0]], [[0.5]])
    opts = dict(q_max=2.0, x_max=1.0, eta=0.0)
    opts.update(kw)
    return ScpProblem(s, StorageTemplate.diagonal(1), **opts)


def test_scalar_instance_objective():
    sol = solve_scp(scalar_problem())
    assert sol.objective == pytest.approx(-1.5, abs=1e-8)
    assert sol.storage.q[0] == pytest.approx(2.0)
    # the optimum is a face: x22 in [-1, 0.5] with mu = max(-2, -1.5 - x22)
    x22 = sol.supply.x22[0, 0]
    assert -1.0 - 1e-8 <= x22 <= 0.5 + 1e-8
    assert sol.mu == pytest.approx(max(-2.0, -1.5 - x22), abs=1e-8)
    assert sol.delta == pytest.approx(x22, abs=1e-8)


def test_scalar_tie_break_smallest_mu():
    sol = solve_scp(scalar_problem())
    assert sol.mu == pytest.approx(-2.0, abs=1e-7)


def test_scalar_instance_against_vertex_oracle():
    lp = assemble_scp(scalar_problem())
    assert lp_vertex_enumeration(lp.c, lp.A, lp.b, lp.lower, lp.upper) == pytest.approx(-1.5)
    assert solve_lp(lp).objective == pytest.approx(-1.5)


def test_scalar_instance_row_scaling_invariance():
    base = solve_scp(scalar_problem())
    s = SampleSet(0, [[1.0]], [[0.0]], [[0.5]])
    lp = assemble_scp(ScpProblem(s, StorageTemplate.diagonal(1), q_max=2.0, x_max=1.0, eta=0.0))
    rows = lp.A.copy()
    rows *= 3.0
    from dissipacert.lp import LpStandard

    res = solve_lp(LpStandard(lp.c, rows, 3.0 * lp.b, lp.lower, lp.upper))
    assert res.objective == pytest.approx(base.objective, abs=1e-8)


def test_storage_template_features():
    t = StorageTemplate.full(2)
    s = StorageFn(t, np.array([1.0, 2.0, 3.0]))
    assert s(np.array([1.0, 1.0])) == pytest.approx(6.0)
    assert np.allclose(s.matrix(), [[1.0, 1.0], [1.0, 3.0]])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.01, 100),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_storage_degree_two_homogeneous(q, lam, x):
    s = StorageFn(StorageTemplate.full(2), np.array(q))
    x = np.array(x)
    a, b = eval_storage(s, lam * x), lam ** 2 * eval_storage(s, x)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_supply_rate_evaluation():
    sr = SupplyRate(np.eye(1), np.array([[0.5]]), -np.eye(1))
    # 1 + 2 * 0.5 * 1 * 2 - 4
    assert sr.evaluate(np.array([[1.0]]), np.array([[2.0]]))[0] == pytest.approx(-1.0)
    X = sr.matrix()
    assert np.allclose(SupplyRate.from_matrix(X, 1).matrix(), X)


def test_two_subsystem_solutions_satisfy_rows():
    s = normalize(sample_pairs(two_subsystem(), 0, 400, seed=0))
    for variant in ("full", "relaxed"):
        sol = solve_scp(ScpProblem(s, StorageTemplate.full(2), variant=variant))
        assert sol.solver_status == "optimal"
        assert sol.max_violation <= 1e-9
        sx = eval_storage(sol.storage, s.x_hat)
        assert np.all(-sx + 1e-9 <= sol.mu + 1e-12)
        assert np.all(np.abs(sol.storage.q) <= 10 + 1e-9)


def test_fixed_supply_used():
    s = normalize(sample_pairs(two_subsystem(), 1, 200, seed=1))
    sr = SupplyRate(1e-4 * np.eye(2), np.zeros((2, 2)), -1e-3 * np.eye(2))
    sol = solve_scp(ScpProblem(s, StorageTemplate.full(2), variant="relaxed", fixed_supply=sr))
    assert sol.supply is sr and sol.delta is None


def test_invalid_problem():
    s = SampleSet(0, [[1.0]], [[0.0]], [[0.5]])
    with pytest.raises(ValueError):
        ScpProblem(s, StorageTemplate.diagonal(1), variant="other")
    with pytest.raises(ValueError):
        ScpProblem(s, StorageTemplate.full(2))
