import json

import numpy as np
import pytest

from dissipacert.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


SMALL = ["--samples", "400", "--probes", "2048", "--rho", "80", "--sigma", "15", "--alpha", "0.25", "--no-audit"]


def test_check_lmi_builtin(capsys, printed):
    code, out, _ = run(capsys, "check-lmi", "--builtin", "two_subsystem")
    assert code == 0
    assert "subsystem 0: LMI holds" in out and "subsystem 1: LMI holds" in out
    assert "composition holds" in out
    lines = out.splitlines()
    start = lines.index("composed matrix [M; I]' X_cmp [M; I]:") + 1
    Q = np.array([[float(v) for v in row.split()] for row in lines[start:start + 4]])
    assert np.max(np.abs(Q - printed["composed"])) <= 1e-3


def test_check_lmi_matrices_file(tmp_path, capsys):
    data = {
        "topology": [[0.0]],
        "subsystems": [{"A": [[0.5]], "B": [[0.0]], "P": [[1.0]], "X11": [[0.0]], "X12": [[0.0]], "X22": [[-0.5]]}],
    }
    path = tmp_path / "m.json"
    path.write_text(json.dumps(data))
    code, out, _ = run(capsys, "check-lmi", "--matrices", str(path))
    assert code == 0
    data["subsystems"][0]["P"] = [[1.0, 0.0]]
    path.write_text(json.dumps(data))
    code, _, err = run(capsys, "check-lmi", "--matrices", str(path))
    assert code == 2 and "error" in err


def test_usage_errors(capsys):
    assert run(capsys, "certify", "--samples", "not-a-number")[0] == 2
    assert run(capsys, "nope")[0] == 2
    assert run(capsys, "certify", "--system", "unknown_system")[0] == 2


def test_simulate_and_lipschitz(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--system", "two_subsystem", "--samples", "300", "--out", str(tmp_path))
    assert code == 0
    files = sorted(tmp_path.glob("*.csv"))
    assert len(files) == 2
    code, out, _ = run(capsys, "lipschitz", "--data", str(files[0]), "--q", "1,0,1", "--rho", "50", "--sigma", "10")
    assert code == 0 and out.startswith("L1 = ")


def test_certify_report_and_verify(tmp_path, capsys):
    rep = tmp_path / "r.json"
    code, out, _ = run(capsys, "certify", "--system", "two_subsystem", *SMALL, "--report", str(rep))
    assert code in (0, 1)
    code2, out2, _ = run(capsys, "verify-report", str(rep))
    assert code2 == code and "reproduce" in out2
    code3, _, _ = run(capsys, "certify", "--from-report", str(rep), "--verify-only")
    assert code3 == code


def test_certify_known_runs(tmp_path, capsys):
    rep = tmp_path / "k.json"
    code, _, _ = run(capsys, "certify-known", "--system", "two_subsystem", *SMALL, "--report", str(rep))
    assert code in (0, 1)
    assert json.loads(rep.read_text())["path"] == "known_topology"


def test_scaling_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, _, _ = run(capsys, "scaling", "--M", "1-5", "--samples", "100", "--out", str(out))
    lines = out.read_text().splitlines()
    assert code == 0 and len(lines) == 6 and lines[1].startswith("1,100,")


def test_data_directory(tmp_path, capsys):
    run(capsys, "simulate", "--system", "two_subsystem", "--samples", "300", "--out", str(tmp_path))
    code, _, _ = run(capsys, "certify", "--data", str(tmp_path), *SMALL[2:])
    assert code in (0, 1)


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("sampling:\n  samples: 300\ncovering:\n  probes: 1024\nlipschitz:\n  rho: 50\n  sigma: 10\n  alpha: 0.3\ncertify:\n  audit: false\n")
    code, _, _ = run(capsys, "certify", "--config", str(cfg))
    assert code in (0, 1)
    cfg.write_text("sampling:\n  bogus: 1\n")
    assert run(capsys, "certify", "--config", str(cfg))[0] == 2
