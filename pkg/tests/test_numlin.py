import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dissipacert.numlin import (
    EigenError,
    as_symmat,
    congruence,
    is_nsd,
    max_eig,
    stack_with_identity,
    sym_eig,
    sym_eigvals,
)


def sym_matrices(max_dim=8):
    return st.integers(1, max_dim).flatmap(
        lambda n: arrays(np.float64, (n, n), elements=st.floats(-10, 10, allow_nan=False))
    ).map(lambda a: (a + a.T) / 2)


def test_identity_and_diagonal():
    assert np.allclose(sym_eigvals(np.eye(3)), [1, 1, 1])
    assert np.allclose(sym_eigvals(np.diag([-1.0, 2.0])), [-1, 2])


def test_two_by_two_characteristic_polynomial():
    # (2 - l)^2 - 1 = 0  ->  l = 1, 3
    assert np.allclose(sym_eigvals([[2.0, 1.0], [1.0, 2.0]]), [1.0, 3.0], atol=1e-14)


@given(sym_matrices())
def test_reconstruction_and_trace(m):
    w, V = sym_eig(m)
    assert w.size == m.shape[0]
    assert np.all(np.diff(w) >= 0)
    scale = max(1.0, np.linalg.norm(m))
    assert np.linalg.norm(V @ np.diag(w) @ V.T - m) <= 1e-10 * scale
    assert abs(w.sum() - np.trace(m)) <= 1e-9 * m.shape[0] * max(1.0, np.abs(m).max())


def test_larger_matrix_against_characteristic_check(rng):
    a = rng.standard_normal((60, 60))
    m = (a + a.T) / 2
    w, V = sym_eig(m)
    assert np.linalg.norm(V.T @ V - np.eye(60)) < 1e-10
    # each eigenpair satisfies the defining equation
    assert np.max(np.abs(m @ V - V * w)) < 1e-10


def test_nonconvergence_is_reported(rng):
    a = rng.standard_normal((12, 12))
    with pytest.raises(EigenError) as exc:
        sym_eig(a + a.T, max_sweeps=1)
    assert exc.value.residual > 0


def test_symmetry_is_required():
    with pytest.raises(ValueError):
        as_symmat([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        sym_eigvals([[np.nan, 0.0], [0.0, 1.0]])


def test_is_nsd_examples():
    assert is_nsd(-np.eye(2), 0.0)
    assert not is_nsd(np.eye(2), 0.0)
    with pytest.raises(ValueError):
        is_nsd(np.eye(2), -1.0)


@given(sym_matrices(), st.floats(0, 5), st.floats(0, 5))
def test_is_nsd_monotone_in_tol(m, t1, dt):
    if is_nsd(m, t1):
        assert is_nsd(m, t1 + dt)


def test_congruence_examples():
    S = stack_with_identity(np.eye(1))
    assert np.allclose(congruence(np.eye(2), S), 2 * np.eye(1))
    M = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(congruence(np.zeros((5, 5)), stack_with_identity(M)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        congruence(np.eye(3), stack_with_identity(M))


@given(sym_matrices(6), st.integers(1, 4), st.data())
def test_congruence_symmetric(x, n, data):
    d = x.shape[0]
    if d <= n:
        return
    p = d - n
    M = data.draw(arrays(np.float64, (p, n), elements=st.floats(-3, 3, allow_nan=False)))
    out = congruence(x, stack_with_identity(M))
    assert np.array_equal(out, out.T)


def test_printed_composed_matrix(printed, printed_supplies):
    from dissipacert.certify import assemble_x_cmp

    M = np.block([[np.zeros((2, 2)), -np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
    Q = congruence(assemble_x_cmp(printed_supplies), stack_with_identity(M))
    assert np.max(np.abs(Q - printed["composed"])) <= 1e-3
    assert abs(Q[0, 0] - (-0.5238)) <= 1e-3
    assert is_nsd(Q, 1e-6)
    assert max_eig(Q) < 0
