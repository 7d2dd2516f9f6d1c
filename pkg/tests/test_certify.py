import numpy as np
import pytest

from dissipacert.certify import (
    SubsystemEvidence,
    assemble_x_cmp,
    check_known_topology,
    check_lmi,
    check_unknown_topology,
    composed_form,
    composed_max_eig,
    lyapunov_decrease_audit,
    sample_complexity_table,
)
from dissipacert.data import CoveringEstimate
from dissipacert.model import LinearDynamics, NetworkSpec, SubsystemSpec, two_subsystem
from dissipacert.model import TWO_SUBSYSTEM_MATRICES
from dissipacert.scp import ScpSolution, StorageFn, StorageTemplate, SupplyRate


def evidence(index, mu, delta, eps=0.01, L1=1.0, L2=1.0, supply=None):
    supply = supply or SupplyRate(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    n = supply.state_dim
    sol = ScpSolution(
        StorageFn(StorageTemplate.full(n), np.ones(n * (n + 1) // 2)), supply, mu, delta,
        mu + (delta or 0.0), "optimal", 1,
    )
    cov = CoveringEstimate(eps, eps, 1, 0.0, "test")
    return SubsystemEvidence(index, sol, cov, L1, L2)


def test_unknown_topology_certifies():
    ev = [evidence(0, -0.1, 0.02), evidence(1, -0.1, 0.03)]
    cert = check_unknown_topology(ev)
    assert cert.certified and cert.sum_margin2 == pytest.approx(-0.1 + 0.02 + 0.01 - 0.1 + 0.03 + 0.01)


def test_one_bad_margin_names_subsystem():
    ev = [evidence(0, -0.1, 0.0), evidence(1, 0.0, -0.5)]
    cert = check_unknown_topology(ev)
    assert not cert.certified
    assert any("margin1[1]" in v for v in cert.violations)
    assert cert.hints


def test_sum_margin2_nonnegative_refuses():
    cert = check_unknown_topology([evidence(0, -0.1, 0.5)])
    assert not cert.certified and any("sum_margin2" in v for v in cert.violations)


def test_eta_cert_slack():
    ev = [evidence(0, -0.02, -0.05)]
    assert check_unknown_topology(ev).certified
    assert not check_unknown_topology(ev, eta_cert=0.02).certified


def test_verdict_is_pure_function_of_parts():
    ev = [evidence(0, -0.1, 0.02), evidence(1, -0.05, 0.01)]
    a, b = check_unknown_topology(ev), check_unknown_topology(list(reversed(ev)))
    assert a.verdict == b.verdict and a.sum_margin2 == pytest.approx(b.sum_margin2)


def test_zero_composition_known_topology():
    ev = [evidence(0, -0.1, None), evidence(1, -0.1, None)]
    cert = check_known_topology(ev, np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert cert.certified and cert.lmi_max_eig == pytest.approx(0.0, abs=1e-12)


def test_positive_composition_refuses():
    sr = SupplyRate(np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)))
    ev = [evidence(0, -0.1, None, supply=sr)]
    cert = check_known_topology(ev, np.eye(1))
    assert not cert.certified and any("composition" in v for v in cert.violations)


def test_sparse_composed_form_matches_dense(printed_supplies):
    M = np.block([[np.zeros((2, 2)), -np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
    Q = composed_form(printed_supplies, M).toarray()
    X = assemble_x_cmp(printed_supplies)
    S = np.vstack([M, np.eye(4)])
    assert np.allclose(Q, S.T @ X @ S, atol=1e-14)
    assert composed_max_eig(Q) == pytest.approx(np.linalg.eigvalsh(Q).max(), abs=1e-12)


def test_printed_lmis_hold(printed, printed_supplies):
    for i, key in enumerate(("P1", "P2")):
        A, B = (TWO_SUBSYSTEM_MATRICES[f"{k}{i + 1}"] for k in "AB")
        rep = check_lmi(A, B, printed[key], printed_supplies[i], tol=1e-6)
        assert rep.holds, rep.max_eig


def test_lmi_fails_for_bad_storage(printed_supplies):
    A, B = TWO_SUBSYSTEM_MATRICES["A1"], TWO_SUBSYSTEM_MATRICES["B1"]
    assert not check_lmi(A, B, 100 * np.eye(2), printed_supplies[0]).holds


def test_audit_stable_and_unstable():
    net = two_subsystem()
    P = [StorageFn(StorageTemplate.full(2), np.array([1.7779, -0.058, 1.9546])),
         StorageFn(StorageTemplate.full(2), np.array([1.1742, -2.9434, 5.8613]))]
    rep = lyapunov_decrease_audit(net, P, rollouts=20, steps=100)
    assert rep.passed and rep.decrease_fraction == 1.0
    unstable = NetworkSpec([SubsystemSpec(0, 1, 1, LinearDynamics([[1.1]], [[0.0]]))], topology=np.zeros((1, 1)))
    rep = lyapunov_decrease_audit(unstable, [StorageFn(StorageTemplate.diagonal(1), np.array([1.0]))],
                                  rollouts=5, steps=20)
    assert rep.decrease_fraction < 1.0 and not rep.passed


def test_degenerate_storage_flagged():
    net = two_subsystem()
    zero = [StorageFn(StorageTemplate.full(2), np.zeros(3))] * 2
    rep = lyapunov_decrease_audit(net, zero, rollouts=5, steps=5)
    assert rep.degenerate and not rep.passed


def test_sample_complexity_linear_vs_exponential():
    rows = sample_complexity_table([1, 2, 10, 100], 1000)
    assert [r["compositional"] for r in rows] == [1000, 2000, 10000, 100000]
    logs = [r["log10_monolithic"] for r in rows]
    assert all(b > a for a, b in zip(logs, logs[1:]))
    assert rows[-1]["log10_monolithic"] > 100
