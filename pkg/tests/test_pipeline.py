import json

import numpy as np
import pytest

from dissipacert.config import RunConfig
from dissipacert.data import write_samples
from dissipacert.pipeline import (
    collect_sets,
    build_network,
    read_report,
    run_known,
    run_unknown,
    strip_header,
    verify_report,
    write_report,
)


def small_config(**system):
    cfg = RunConfig()
    if system:
        cfg = cfg.override("system", **system)
    cfg = cfg.override("sampling", samples=600)
    cfg = cfg.override("covering", probes=4096)
    cfg = cfg.override("lipschitz", rho=100, sigma=20, alpha=0.2)
    return cfg.override("certify", audit_rollouts=10, audit_steps=20)


@pytest.fixture(scope="module")
def unknown_run():
    return run_unknown(small_config())


def test_unknown_report_reverifies(unknown_run):
    ok, msgs = verify_report(unknown_run.report)
    assert ok, msgs
    assert unknown_run.exit_code in (0, 1)
    assert unknown_run.report["verdict"] == unknown_run.certificate.verdict


def test_report_byte_stable_under_fixed_seed(unknown_run):
    again = run_unknown(small_config())
    assert strip_header(again.report) == strip_header(unknown_run.report)


def test_tampered_report_detected(unknown_run, tmp_path):
    path = write_report(unknown_run.report, tmp_path / "r.json")
    rep = read_report(path)
    assert verify_report(rep)[0]
    rep["subsystems"][0]["mu"] = float(rep["subsystems"][0]["mu"]) - 1.0
    assert not verify_report(rep)[0]


def test_report_contents(unknown_run):
    rep = unknown_run.report
    assert rep["path"] == "unknown_topology"
    s = rep["subsystems"][0]
    for key in ("mu", "delta", "L1", "L2", "margin1", "margin2", "epsilon", "storage", "supply"):
        assert key in s
    assert len(rep["subsystems"]) == 2
    json.dumps(rep)


def test_margins_are_built_from_parts(unknown_run):
    for e in unknown_run.evidence:
        assert e.margin1 == e.scp.mu + e.L1 * e.eps


def test_sets_from_files(tmp_path):
    cfg = small_config()
    net = build_network(cfg)
    sets = collect_sets(net, cfg, "concatenation")
    for s in sets:
        write_samples(s, tmp_path / f"subsystem_{s.index:05d}.csv")
    a = run_unknown(cfg.override("system", builtin=None, data_dir=str(tmp_path)), net=None)
    b = run_unknown(cfg, sets=sets, net=net)
    assert [e.scp.mu for e in a.evidence] == [e.scp.mu for e in b.evidence]


def test_known_path_two_subsystem():
    res = run_known(small_config())
    rep = res.report
    assert rep["path"] == "known_topology"
    ok, msgs = verify_report(rep)
    assert ok, msgs
    assert "composition" in rep


def test_worker_count_does_not_change_results():
    a = run_unknown(small_config())
    b = run_unknown(small_config().override("run", workers=2))
    assert b.report["config"]["run"]["workers"] == 2

    def body(rep):
        return strip_header({k: v for k, v in rep.items() if k != "config"})

    assert body(a.report) == body(b.report)
