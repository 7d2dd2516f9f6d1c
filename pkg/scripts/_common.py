"""Shared helpers for the example scripts."""
from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))


def print_evidence(result) -> None:
    cert = result.certificate
    print(f"verdict: {cert.verdict} ({cert.path})")
    for e in result.evidence:
        delta = "n/a" if e.scp.delta is None else f"{e.scp.delta:+.3e}"
        print(
            f"  subsystem {e.index:3d}: mu={e.scp.mu:+.3e} delta={delta} "
            f"eps={e.epsilon.epsilon:.3f} L1={e.L1:.3e} L2={e.L2:.3e} "
            f"margin1={e.margin1:+.3e}"
        )
    if cert.sum_margin2 is not None:
        print(f"  sum margin2 = {cert.sum_margin2:+.3e}")
    if cert.lmi_max_eig is not None:
        print(f"  composed form max eigenvalue = {cert.lmi_max_eig:+.3e}")
    for v in cert.violations[:10]:
        print(f"  violation: {v}")
