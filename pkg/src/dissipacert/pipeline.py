"""End-to-end certification runs and their JSON reports."""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from .admm import AdmmResult, run_admm
from .certify import (
    Certificate,
    SubsystemEvidence,
    check_known_topology,
    check_unknown_topology,
    composed_form,
    composed_max_eig,
    lyapunov_decrease_audit,
)
from .config import RunConfig, child_seed
from .data import CoveringEstimate, SampleSet, covering_radius, normalize, read_samples
from .lipschitz import LipschitzError, SlopeConfig, estimate_L1, estimate_L2, widen_alpha
from .model import ExternalOracle, NetworkSpec, SubsystemSpec, builtin_system, sample_pairs
from .scp import (
    ScpProblem,
    ScpSolution,
    StorageFn,
    StorageTemplate,
    SupplyRate,
    eval_storage,
    solve_scp,
)

__all__ = [
    "PipelineError",
    "RunResult",
    "build_network",
    "collect_sets",
    "load_sets",
    "subsystem_evidence",
    "run_unknown",
    "run_known",
    "write_report",
    "read_report",
    "verify_report",
    "strip_header",
    "dumps",
    "build_report",
    "ARTIFACT_DECISIONS",
]

ARTIFACT_DECISIONS = (
    "strict scenario inequality encoded with margin eta",
    "full-variant ties broken by minimizing mu over the optimal face",
    "covering radius inflated by the probe-set spacing bound",
    "Lipschitz pairs restricted to recorded data; alpha widened until enough pairs exist",
    "reverse Weibull shape kept >= 1; fallback location max*(1+margin)",
    "ADMM global step by eigenvalue clipping and least-norm block preimage",
    "scenario program re-solved with the ADMM supply rate frozen when its rows are violated",
)


class PipelineError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# data sources


def build_network(cfg: RunConfig) -> NetworkSpec | None:
    sc = cfg.system
    if sc.oracle:
        if not sc.dims or len(sc.dims) != 2:
            raise PipelineError("an oracle system needs dims: [n, p]")
        n, p = (int(v) for v in sc.dims)
        spec = SubsystemSpec(0, n, p, ExternalOracle(sc.oracle, n, p))
        coupling = np.zeros((p, n))
        return NetworkSpec((spec,), coupling, topology_known=False, name="oracle")
    if sc.builtin:
        try:
            return builtin_system(sc.builtin, **(sc.params or {}))
        except (TypeError, ValueError) as exc:
            raise PipelineError(f"cannot build system {sc.builtin!r}: {exc}") from exc
    return None


def collect_sets(net: NetworkSpec, cfg: RunConfig, convention: str, count: int | None = None):
    """Sample and normalize data for every subsystem with derived seeds."""
    count = count or cfg.sampling.samples
    mode = cfg.sampling.mode
    if net.name == "oracle":
        mode = "state_space"  # a lone black box has no interconnection to roll out
    sets = []
    for i in range(net.size):
        seed = child_seed(cfg.run.seed, "sample", i)
        traj = sample_pairs(
            net, i, count, seed, sampling=mode, convention=convention,
            radius=cfg.sampling.radius, horizon=cfg.sampling.horizon,
        )
        sets.append(normalize(traj))
    return sets


def load_sets(data_dir) -> list:
    d = Path(data_dir)
    if not d.is_dir():
        raise PipelineError(f"data directory {d} does not exist")
    files = sorted(d.glob("*.csv"))
    if not files:
        raise PipelineError(f"no sample files in {d}")
    sets = sorted((read_samples(f) for f in files), key=lambda s: s.index)
    idx = [s.index for s in sets]
    if idx != list(range(len(sets))):
        raise PipelineError(f"sample files must cover subsystems 0..{len(sets) - 1}, found {idx}")
    return sets


def digest(s: SampleSet) -> str:
    h = hashlib.sha256()
    for arr in (s.x_hat, s.w_hat, s.f_hat):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# per-subsystem evidence


def _scp_problem(s: SampleSet, cfg: RunConfig, variant: str, fixed_supply=None) -> ScpProblem:
    return ScpProblem(
        s,
        StorageTemplate.from_spec(s.state_dim, cfg.scp.basis),
        variant=variant,
        q_max=cfg.scp.q_max,
        x_max=cfg.scp.x_max,
        eta=cfg.scp.eta,
        supply_structure=cfg.scp.supply_structure,
        fixed_supply=fixed_supply,
        tie_break=cfg.scp.tie_break,
    )


def _lipschitz(s: SampleSet, storage: StorageFn, cfg: RunConfig, index: int):
    lc = cfg.lipschitz
    pts = s.points
    alpha, pairs = widen_alpha(pts, lc.alpha, lc.rho * lc.min_pairs_factor)
    if len(pairs) < 2:
        raise LipschitzError(f"subsystem {index}: fewer than two distinct sample pairs")
    rho = min(lc.rho, len(pairs))
    scfg = SlopeConfig(
        rho=max(2, rho), sigma=lc.sigma, alpha=alpha,
        seed=child_seed(cfg.run.seed, "lipschitz", index), fallback_margin=lc.fallback_margin,
    )
    box = cfg.scp.q_max if lc.mode == "box" else None
    L1 = estimate_L1(s, storage, scfg, box_q_max=box, pairs=pairs)
    L2 = estimate_L2(s, storage, scfg, box_q_max=box, pairs=pairs)
    cross = None
    if box is None:
        b1 = estimate_L1(s, storage, scfg, box_q_max=cfg.scp.q_max, pairs=pairs)
        b2 = estimate_L2(s, storage, scfg, box_q_max=cfg.scp.q_max, pairs=pairs)
        cross = {"L1_box": b1.value, "L2_box": b2.value}
    info = {
        "alpha": alpha,
        "pairs": int(len(pairs)),
        "rho": scfg.rho,
        "sigma": scfg.sigma,
        "seed": scfg.seed,
        "mode": lc.mode,
        "L1_fit": _fit_dict(L1),
        "L2_fit": _fit_dict(L2),
        "box_cross_check": cross,
    }
    return L1.value, L2.value, info


def _fit_dict(est) -> dict:
    f = est.fit
    return {
        "location": f.location, "scale": f.scale, "shape": f.shape,
        "converged": f.converged, "degenerate": f.degenerate, "max_slope": est.max_slope,
    }


def subsystem_evidence(s: SampleSet, cfg: RunConfig, variant: str, fixed_supply=None):
    """Covering radius, scenario program and Lipschitz constants for one subsystem."""
    t0 = time.perf_counter()
    i = s.index
    eps = covering_radius(s, cfg.covering.probes, seed=child_seed(cfg.run.seed, "covering", i))
    sol = solve_scp(_scp_problem(s, cfg, variant, fixed_supply), tol=cfg.scp.lp_tol)
    L1, L2, info = _lipschitz(s, sol.storage, cfg, i)
    ev = SubsystemEvidence(i, sol, eps, L1, L2)
    return ev, {"lipschitz": info, "digest": digest(s), "count": len(s), "seconds": time.perf_counter() - t0}


def _evidence_task(args):
    s, cfg, variant = args
    return subsystem_evidence(s, cfg, variant)


def gather(sets, cfg: RunConfig, variant: str):
    tasks = [(s, cfg, variant) for s in sets]
    if cfg.run.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.workers) as pool:
            return list(pool.map(_evidence_task, tasks))
    return [_evidence_task(t) for t in tasks]


# --------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    certificate: Certificate
    report: dict
    evidence: list
    details: list
    network: NetworkSpec | None = None
    admm: AdmmResult | None = None
    audit: object = None
    sets: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.certificate.certified else 1


def _audit(net, cert, cfg):
    if net is None or not cfg.certify.audit or net.name == "oracle":
        return None
    try:
        return lyapunov_decrease_audit(
            net, cert.lyapunov, cfg.certify.audit_rollouts, cfg.certify.audit_steps,
            seed=child_seed(cfg.run.seed, "audit", 0), floor=cfg.certify.audit_floor,
        )
    except ValueError:
        return None


def run_unknown(cfg: RunConfig, sets=None, net=None) -> RunResult:
    """Unknown-topology certification (concatenated internal inputs)."""
    timings = {}
    start = time.perf_counter()
    if sets is None:
        net = net or build_network(cfg)
        if net is None:
            sets = load_sets(cfg.system.data_dir)
    rounds = []
    count = cfg.sampling.samples
    for round_ in range(cfg.certify.auto_refine + 1):
        t = time.perf_counter()
        cur = sets if sets is not None else collect_sets(net, cfg, "concatenation", count)
        timings[f"sampling_round{round_}"] = time.perf_counter() - t
        t = time.perf_counter()
        out = gather(cur, cfg, "full")
        timings[f"evidence_round{round_}"] = time.perf_counter() - t
        evidence = [e for e, _ in out]
        details = [d for _, d in out]
        cert = check_unknown_topology(evidence, cfg.certify.eta_cert, _provenance(cfg, details))
        rounds.append({"samples_per_subsystem": len(cur[0]), "verdict": cert.verdict})
        if cert.certified or sets is not None:
            break
        count *= 2
    t = time.perf_counter()
    audit = _audit(net, cert, cfg)
    timings["audit"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - start
    report = build_report(cfg, cert, details, audit=audit, timings=timings, rounds=rounds)
    return RunResult(cert, report, evidence, details, net, None, audit, cur)


def _topology_of(cfg, net):
    if cfg.system.topology_file:
        try:
            M = np.loadtxt(cfg.system.topology_file, ndmin=2)
        except (OSError, ValueError) as exc:
            raise PipelineError(f"cannot read topology file: {exc}") from exc
        return sp.csr_matrix(M)
    if net is not None and net.topology_known:
        return net.topology
    raise PipelineError("the known-topology path needs a topology file or a system with known coupling")


def _recheck_with_supply(s, sol: ScpSolution, supply: SupplyRate, cfg, eta):
    sx = eval_storage(sol.storage, s.x_hat)
    sf = eval_storage(sol.storage, s.f_hat)
    quad = supply.evaluate(s.w_hat, s.x_hat)
    mu_new = float(max(np.max(-sx + eta), np.max(sf - sx - quad)))
    return mu_new


def run_known(cfg: RunConfig, sets=None, net=None, topology=None) -> RunResult:
    """Known-topology certification: relaxed SCP, composition LMI, ADMM fallback."""
    timings = {}
    start = time.perf_counter()
    if sets is None:
        net = net or build_network(cfg)
    if topology is None:
        topology = _topology_of(cfg, net)
    topology = sp.csr_matrix(topology) if not sp.issparse(topology) else sp.csr_matrix(topology)
    if sets is None:
        if net is None:
            sets = load_sets(cfg.system.data_dir)
        else:
            t = time.perf_counter()
            sets = collect_sets(net, cfg, "topology")
            timings["sampling"] = time.perf_counter() - t
    dims = [(s.state_dim, s.input_dim) for s in sets]
    p_tot, n_tot = sum(p for _, p in dims), sum(n for n, _ in dims)
    if topology.shape != (p_tot, n_tot):
        raise PipelineError(f"topology is {topology.shape}, data need {p_tot}x{n_tot}")
    t = time.perf_counter()
    out = gather(sets, cfg, "relaxed")
    timings["evidence"] = time.perf_counter() - t
    evidence = [e for e, _ in out]
    details = [d for _, d in out]
    Q = composed_form([e.scp.supply for e in evidence], topology)
    lam0 = composed_max_eig(Q)
    admm_res = None
    admm_info = {"ran": False, "initial_max_eig": lam0}
    if lam0 > cfg.certify.psd_tol:
        t = time.perf_counter()
        admm_res = run_admm([e.scp.supply.matrix() for e in evidence], dims, topology, cfg.admm)
        timings["admm"] = time.perf_counter() - t
        admm_info.update(
            ran=True, converged=admm_res.converged, iterations=admm_res.iterations,
            max_eig=admm_res.max_eig, message=admm_res.message,
        )
        if admm_res.converged:
            new_ev, resolved = [], []
            for s, e, X, d in zip(sets, evidence, admm_res.X, details):
                supply = SupplyRate.from_matrix(X, s.input_dim)
                mu_new = _recheck_with_supply(s, e.scp, supply, cfg, cfg.scp.eta)
                if mu_new > e.scp.mu + 1e-12 * max(1.0, abs(e.scp.mu)):
                    ev, info = subsystem_evidence(s, cfg, "relaxed", fixed_supply=supply)
                    ev = replace(ev, epsilon=e.epsilon)
                    d.update(info, resolved=True)
                    resolved.append(s.index)
                else:
                    ev = SubsystemEvidence(e.index, replace(e.scp, supply=supply, mu=mu_new), e.epsilon, e.L1, e.L2)
                new_ev.append(ev)
            evidence = new_ev
            admm_info["resolved_subsystems"] = resolved
    cert = check_known_topology(
        evidence, topology, cfg.certify.psd_tol, cfg.certify.eta_cert, _provenance(cfg, details)
    )
    t = time.perf_counter()
    audit = _audit(net, cert, cfg)
    timings["audit"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - start
    report = build_report(cfg, cert, details, audit=audit, timings=timings, admm=admm_info, topology=topology)
    return RunResult(cert, report, evidence, details, net, admm_res, audit, sets)


# --------------------------------------------------------------------------
# reports


def _provenance(cfg: RunConfig, details) -> dict:
    return {
        "master_seed": cfg.run.seed,
        "seed_scheme": "SeedSequence(master, spawn_key=(stage, subsystem))",
        "data_digests": [d["digest"] for d in details],
    }


def _mat(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _evidence_dict(e: SubsystemEvidence, d: dict, path: str) -> dict:
    sol = e.scp
    out = {
        "index": e.index,
        "samples": d["count"],
        "storage": {
            "basis": [list(m) for m in sol.storage.template.basis],
            "q": _mat(sol.storage.q),
        },
        "supply": {"x11": _mat(sol.supply.x11), "x12": _mat(sol.supply.x12), "x22": _mat(sol.supply.x22)},
        "mu": sol.mu,
        "delta": sol.delta,
        "objective": sol.objective,
        "variant": sol.variant,
        "lp_iterations": sol.lp_iterations,
        "active_constraints": sol.active_constraint_count,
        "epsilon": {
            "epsilon": e.eps, "raw": e.epsilon.raw, "probes": e.epsilon.probe_count,
            "spacing_bound": e.epsilon.probe_spacing_bound, "method": e.epsilon.method,
        },
        "L1": e.L1,
        "L2": e.L2,
        "lipschitz": d.get("lipschitz"),
        "digest": d["digest"],
        "margin1": e.margin1,
    }
    if path == "unknown_topology":
        out["margin2"] = e.margin2
    else:
        out["L"] = e.L
        out["margin"] = e.margin_known
        out["resolved"] = bool(d.get("resolved", False))
    return out


def _topology_dict(M) -> dict:
    M = sp.coo_matrix(M)
    return {
        "shape": list(M.shape),
        "rows": M.row.tolist(),
        "cols": M.col.tolist(),
        "vals": M.data.astype(float).tolist(),
    }


def build_report(cfg, cert: Certificate, details, audit=None, timings=None, rounds=None, admm=None, topology=None):
    body = {
        "path": cert.path,
        "verdict": cert.verdict,
        "eta_cert": cert.eta_cert,
        "violations": list(cert.violations),
        "hints": list(cert.hints),
        "subsystems": [_evidence_dict(e, d, cert.path) for e, d in zip(cert.per_subsystem, details)],
        "provenance": cert.provenance,
        "config": cfg.to_dict(),
        "artifact_decisions": list(ARTIFACT_DECISIONS),
    }
    if cert.sum_margin2 is not None:
        body["sum_margin2"] = cert.sum_margin2
    if cert.lmi_max_eig is not None:
        body["composition"] = {"max_eig": cert.lmi_max_eig, "tol": cert.lmi_tol}
    if topology is not None:
        body["topology"] = _topology_dict(topology)
    if admm is not None:
        body["admm"] = admm
    if rounds is not None:
        body["refinement_rounds"] = rounds
    if audit is not None:
        body["audit"] = {
            "rollouts": audit.rollouts, "steps_checked": audit.steps_checked,
            "decreasing_steps": audit.decreasing_steps, "decrease_fraction": audit.decrease_fraction,
            "worst_increase": audit.worst_increase, "diverged": audit.diverged,
            "degenerate": audit.degenerate, "floor": audit.floor, "passed": audit.passed,
        }
    header = {
        "tool": "dissipacert",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "timings": {k: round(v, 6) for k, v in (timings or {}).items()},
    }
    return {"header": header, **body}


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=1, default=_json_default) + "\n"


def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)  # JSON has no inf/nan
    return o


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(dumps(report))
    os.replace(tmp, path)
    return path


def read_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PipelineError(f"cannot read report {path}: {exc}") from exc


def strip_header(report: dict) -> str:
    """Canonical text of everything except the header (timestamps, timings)."""
    return dumps({k: v for k, v in report.items() if k != "header"})


def _num(v):
    return float(v) if not isinstance(v, str) else float(v)


def verify_report(report: dict) -> tuple[bool, list]:
    """Recompute every margin and the verdict from the stored parts."""
    msgs = []
    path = report.get("path")
    subs = report.get("subsystems", [])
    if not subs or path not in ("unknown_topology", "known_topology"):
        return False, ["report has no subsystem evidence or an unknown path"]
    eta = float(report.get("eta_cert", 0.0))
    ok_margins = True
    violations = []
    for s in subs:
        eps = _num(s["epsilon"]["epsilon"])
        mu = _num(s["mu"])
        m1 = mu + _num(s["L1"]) * eps
        if m1 != _num(s["margin1"]):
            ok_margins = False
            msgs.append(f"subsystem {s['index']}: margin1 {s['margin1']} != recomputed {m1!r}")
        if path == "unknown_topology":
            m2 = mu + _num(s["delta"]) + _num(s["L2"]) * eps
            if m2 != _num(s["margin2"]):
                ok_margins = False
                msgs.append(f"subsystem {s['index']}: margin2 {s['margin2']} != recomputed {m2!r}")
            if not m1 < -eta:
                violations.append(s["index"])
        else:
            L = max(_num(s["L1"]), _num(s["L2"]))
            m = mu + L * eps
            if m != _num(s["margin"]):
                ok_margins = False
                msgs.append(f"subsystem {s['index']}: margin {s['margin']} != recomputed {m!r}")
            if not m < -eta:
                violations.append(s["index"])
    certified = not violations
    if path == "unknown_topology":
        total = float(sum(_num(s["margin2"]) for s in subs))
        if total != _num(report["sum_margin2"]):
            ok_margins = False
            msgs.append(f"sum_margin2 {report['sum_margin2']} != recomputed {total!r}")
        certified &= total < -eta
    else:
        top = report.get("topology")
        if top is None:
            return False, msgs + ["known-topology report lacks its topology"]
        M = sp.csr_matrix((top["vals"], (top["rows"], top["cols"])), shape=tuple(top["shape"]))
        supplies = [SupplyRate(s["supply"]["x11"], s["supply"]["x12"], s["supply"]["x22"]) for s in subs]
        lam = composed_max_eig(composed_form(supplies, M))
        stored = _num(report["composition"]["max_eig"])
        if abs(lam - stored) > 1e-9 * max(1.0, abs(stored)):
            ok_margins = False
            msgs.append(f"composition max eigenvalue {stored} != recomputed {lam!r}")
        certified &= lam <= _num(report["composition"]["tol"])
    verdict = "certified_GAS" if certified else "inconclusive"
    if verdict != report.get("verdict"):
        msgs.append(f"verdict {report.get('verdict')} != recomputed {verdict}")
        return False, msgs
    if ok_margins:
        msgs.append(f"all margins and the verdict ({verdict}) reproduce")
    return ok_margins, msgs
