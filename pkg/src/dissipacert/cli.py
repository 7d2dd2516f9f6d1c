"""Command-line interface.

Exit codes: 0 certified / success, 1 inconclusive / check failed, 2 error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .certify import check_lmi, composed_form, composed_max_eig, sample_complexity_table
from .config import ConfigError, RunConfig, load_config
from .data import SampleFileError, read_samples, write_samples
from .lipschitz import LipschitzError, SlopeConfig, estimate_L1, estimate_L2, widen_alpha
from .model import TWO_SUBSYSTEM_MATRICES, sample_pairs
from .numlin import EigenError
from .pipeline import (
    PipelineError,
    build_network,
    read_report,
    run_known,
    run_unknown,
    verify_report,
    write_report,
)
from .config import child_seed
from .data import normalize
from .scp import ScpError, StorageFn, StorageTemplate, SupplyRate

__all__ = ["main", "build_parser", "TWO_SUBSYSTEM_CERTIFICATE"]

# printed model-based certificate for the built-in two-subsystem network
TWO_SUBSYSTEM_CERTIFICATE = {
    "topology": [[0, 0, -1, 0], [0, 0, 0, -1], [1, 0, 0, 0], [0, 1, 0, 0]],
    "subsystems": [
        {
            "A": TWO_SUBSYSTEM_MATRICES["A1"],
            "B": TWO_SUBSYSTEM_MATRICES["B1"],
            "P": [[1.7779, -0.0290], [-0.0290, 1.9546]],
            "X11": [[0.3372, -0.1620], [-0.1620, 0.5128]],
            "X12": [[-0.0250, -0.0486], [-0.0486, 0.0923]],
            "X22": [[-1.0748, 0.0579], [0.0579, -1.1826]],
        },
        {
            "A": TWO_SUBSYSTEM_MATRICES["A2"],
            "B": TWO_SUBSYSTEM_MATRICES["B2"],
            "P": [[1.1742, -1.4717], [-1.4717, 5.8613]],
            "X11": [[0.5509, -0.0283], [-0.0283, 0.6199]],
            "X12": [[-0.0147, -0.0256], [-0.0256, 0.1947]],
            "X22": [[-0.6036, 0.3231], [0.3231, -0.9405]],
        },
    ],
}


class CliError(Exception):
    pass


def _system_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("system")
    g.add_argument("--system", help="built-in system: two_subsystem | room_network | nonlinear_ring")
    g.add_argument("--rooms", type=int, help="room_network size")
    g.add_argument("--phi", type=float, help="room_network coupling factor")
    g.add_argument("--theta", type=float, help="room_network loss factor")
    g.add_argument("--adjacency", help="room_network adjacency: ring | complete")
    g.add_argument("--size", type=int, help="nonlinear_ring size")
    g.add_argument("--gamma", type=float, help="nonlinear_ring gamma")
    g.add_argument("--oracle", help="external command answering one (x, w) query per line")
    g.add_argument("--dims", help="n,p for --oracle")
    g.add_argument("--data", help="directory of sample files (instead of simulating)")
    g.add_argument("--samples", type=int, help="samples per subsystem")
    g.add_argument("--mode", choices=["trajectory", "state_space"], help="sampling mode")
    g.add_argument("--horizon", type=int, help="rollout horizon for trajectory sampling")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--config", help="YAML config file (default: $DISSIPACERT_CONFIG)")


def _pipeline_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("certification")
    g.add_argument("--basis", help="storage basis: full | diagonal")
    g.add_argument("--supply", dest="supply_structure", choices=["full", "diagonal"])
    g.add_argument("--q-max", type=float)
    g.add_argument("--x-max", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--eta-cert", type=float)
    g.add_argument("--probes", type=int)
    g.add_argument("--rho", type=int)
    g.add_argument("--sigma", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--lipschitz-mode", choices=["post", "box"])
    g.add_argument("--workers", type=int)
    g.add_argument("--no-audit", action="store_true")
    g.add_argument("--report", help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dissipacert", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample data and write one file per subsystem")
    _system_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--raw", action="store_true", help="write raw (unnormalized) triples")
    p.add_argument("--convention", choices=["topology", "concatenation"], default="concatenation")

    p = sub.add_parser("certify", help="unknown-topology certification")
    _system_args(p)
    _pipeline_args(p)
    p.add_argument("--auto-refine", type=int, help="rounds of doubling the data when inconclusive")
    p.add_argument("--from-report", help="existing report to re-verify")
    p.add_argument("--verify-only", action="store_true")

    p = sub.add_parser("certify-known", help="known-topology certification with ADMM fallback")
    _system_args(p)
    _pipeline_args(p)
    p.add_argument("--topology", help="plain-text coupling matrix (whitespace separated)")
    p.add_argument("--admm-max-iter", type=int)
    p.add_argument("--psd-tol", type=float)

    p = sub.add_parser("check-lmi", help="model-based dissipativity and composition check")
    p.add_argument("--matrices", help="YAML/JSON file with topology and per-subsystem A, B, P, X11, X12, X22")
    p.add_argument("--builtin", choices=["two_subsystem"], help="use a built-in certificate")
    p.add_argument("--tol", type=float, default=1e-6)

    p = sub.add_parser("lipschitz", help="standalone Lipschitz estimation on a sample file")
    p.add_argument("--data", required=True, help="sample file")
    p.add_argument("--q", required=True, help="comma-separated storage coefficients")
    p.add_argument("--basis", default="full")
    p.add_argument("--which", choices=["L1", "L2"], default="L1")
    p.add_argument("--rho", type=int, default=500)
    p.add_argument("--sigma", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("scaling", help="sample-count table, compositional versus monolithic")
    p.add_argument("--M", default="1-100", help="sizes as 'a-b' or a comma list")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("verify-report", help="recompute margins and verdict of a report")
    p.add_argument("report")
    return ap


# --------------------------------------------------------------------------


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    params = {}
    if getattr(args, "system", None):
        name = args.system
        if name == "room_network":
            params = {"rooms": args.rooms, "phi": args.phi, "theta": args.theta, "adjacency": args.adjacency}
        elif name == "nonlinear_ring":
            params = {"size": args.size, "gamma": args.gamma}
        params = {k: v for k, v in params.items() if v is not None}
        cfg = cfg.override("system", builtin=name, params=params, oracle=None, data_dir=None)
    if getattr(args, "oracle", None):
        if not args.dims:
            raise CliError("--oracle needs --dims n,p")
        dims = [int(v) for v in args.dims.split(",")]
        cfg = cfg.override("system", oracle=args.oracle, dims=dims, builtin=None)
    if getattr(args, "data", None):
        import dataclasses

        cfg = dataclasses.replace(
            cfg, system=dataclasses.replace(cfg.system, data_dir=args.data, builtin=None, oracle=None)
        )
    cfg = cfg.override("sampling", samples=args.samples, mode=args.mode, horizon=getattr(args, "horizon", None))
    cfg = cfg.override("run", seed=args.seed, workers=getattr(args, "workers", None))
    if hasattr(args, "basis") and hasattr(args, "probes"):
        cfg = cfg.override(
            "scp", basis=args.basis, supply_structure=args.supply_structure, q_max=args.q_max,
            x_max=args.x_max, eta=args.eta,
        )
        cfg = cfg.override("covering", probes=args.probes)
        cfg = cfg.override("lipschitz", rho=args.rho, sigma=args.sigma, alpha=args.alpha, mode=args.lipschitz_mode)
        cfg = cfg.override("certify", eta_cert=args.eta_cert, audit=False if args.no_audit else None)
    if getattr(args, "auto_refine", None) is not None:
        cfg = cfg.override("certify", auto_refine=args.auto_refine)
    if getattr(args, "topology", None):
        cfg = cfg.override("system", topology_file=args.topology)
    if getattr(args, "admm_max_iter", None) is not None:
        cfg = cfg.override("admm", max_iter=args.admm_max_iter)
    if getattr(args, "psd_tol", None) is not None:
        cfg = cfg.override("certify", psd_tol=args.psd_tol)
        cfg = cfg.override("admm", psd_tol=args.psd_tol)
    return cfg


def _summary(report: dict, out=sys.stdout):
    print(f"path: {report['path']}", file=out)
    for s in report["subsystems"]:
        extra = f" margin2={s['margin2']:.6g}" if "margin2" in s else f" margin={s['margin']:.6g}"
        print(
            f"  subsystem {s['index']}: mu={s['mu']:.6g} eps={s['epsilon']['epsilon']:.4g} "
            f"L1={s['L1']:.4g} L2={s['L2']:.4g} margin1={s['margin1']:.6g}{extra}",
            file=out,
        )
    if "sum_margin2" in report:
        print(f"  sum margin2 = {report['sum_margin2']:.6g}", file=out)
    if "composition" in report:
        print(f"  composition max eigenvalue = {report['composition']['max_eig']:.6g}", file=out)
    if "audit" in report:
        a = report["audit"]
        print(f"  audit: {a['decreasing_steps']}/{a['steps_checked']} decreasing steps", file=out)
    print(f"verdict: {report['verdict']}", file=out)
    for h in report.get("hints", []):
        print(f"  hint: {h}", file=out)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    net = build_network(cfg)
    if net is None:
        raise CliError("simulate needs --system or --oracle")
    out = Path(args.out)
    convention = args.convention
    if convention == "topology" and not net.topology_known:
        raise CliError(f"{net.name} has no known topology; use --convention concatenation")
    mode = cfg.sampling.mode if net.name != "oracle" else "state_space"
    for i in range(net.size):
        seed = child_seed(cfg.run.seed, "sample", i)
        traj = sample_pairs(
            net, i, cfg.sampling.samples, seed, sampling=mode, convention=convention,
            radius=cfg.sampling.radius, horizon=cfg.sampling.horizon,
        )
        obj = traj if args.raw else normalize(traj)
        write_samples(obj, out / f"subsystem_{i:05d}.csv")
    print(f"wrote {net.size} sample files with {cfg.sampling.samples} rows each to {out}")
    return 0


def cmd_certify(args) -> int:
    if args.verify_only or args.from_report:
        if not args.from_report:
            raise CliError("--verify-only needs --from-report")
        return _verify(read_report(args.from_report))
    cfg = _config(args)
    res = run_unknown(cfg)
    _summary(res.report)
    if args.report:
        write_report(res.report, args.report)
    return res.exit_code


def cmd_certify_known(args) -> int:
    cfg = _config(args)
    res = run_known(cfg)
    _summary(res.report)
    if args.report:
        write_report(res.report, args.report)
    return res.exit_code


def _load_matrices(path):
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CliError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict) or "subsystems" not in data:
        raise CliError("matrices file needs a 'subsystems' list")
    return data


def cmd_check_lmi(args) -> int:
    if args.builtin:
        data = TWO_SUBSYSTEM_CERTIFICATE
    elif args.matrices:
        data = _load_matrices(args.matrices)
    else:
        raise CliError("check-lmi needs --matrices or --builtin")
    supplies, ok = [], True
    for i, sd in enumerate(data["subsystems"]):
        try:
            P = np.asarray(sd["P"], dtype=float)
        except KeyError as exc:
            raise CliError(f"subsystem {i} lacks {exc}") from exc
        if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.array_equal(P, P.T):
            raise CliError(f"subsystem {i}: P must be a symmetric square matrix")
        supply = SupplyRate(sd["X11"], sd["X12"], sd["X22"])
        supplies.append(supply)
        rep = check_lmi(sd["A"], sd["B"], P, supply, tol=args.tol)
        status = "LMI holds" if rep.holds else "LMI fails"
        print(f"subsystem {i}: {status}, max eigenvalue of left - right = {rep.max_eig:.6g}")
        ok &= rep.holds
    if "topology" in data and data["topology"] is not None:
        M = np.asarray(data["topology"], dtype=float)
        Q = composed_form(supplies, M).toarray()
        lam = composed_max_eig(Q)
        print("composed matrix [M; I]' X_cmp [M; I]:")
        for row in Q:
            print("  " + " ".join(f"{v:9.4f}" for v in row))
        holds = lam <= args.tol
        print(f"composition {'holds' if holds else 'fails'}, max eigenvalue = {lam:.6g}")
        ok &= holds
    return 0 if ok else 1


def cmd_lipschitz(args) -> int:
    s = read_samples(args.data)
    tpl = StorageTemplate.from_spec(s.state_dim, args.basis)
    q = [float(v) for v in args.q.split(",")]
    storage = StorageFn(tpl, q)
    alpha, pairs = widen_alpha(s.points, args.alpha, args.rho)
    cfg = SlopeConfig(rho=min(args.rho, max(2, len(pairs))), sigma=args.sigma, alpha=alpha, seed=args.seed)
    est = (estimate_L1 if args.which == "L1" else estimate_L2)(s, storage, cfg, pairs=pairs)
    print(f"{args.which} = {est.value:.6g} (max slope {est.max_slope:.6g}, alpha {alpha:g}, "
          f"{est.pair_count} pairs, converged {est.fit.converged})")
    return 0


def _parse_sizes(text: str) -> list:
    if "-" in text and "," not in text:
        a, b = (int(v) for v in text.split("-"))
        return list(range(a, b + 1))
    return [int(v) for v in text.split(",")]


def cmd_scaling(args) -> int:
    rows = sample_complexity_table(_parse_sizes(args.M), args.samples, args.n, args.p)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["M", "compositional", "monolithic", "log10_monolithic", "epsilon"])
    for r in rows:
        w.writerow([r["M"], r["compositional"], repr(r["monolithic"]), repr(r["log10_monolithic"]), repr(r["epsilon"])])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def _verify(report) -> int:
    ok, msgs = verify_report(report)
    for m in msgs:
        print(m)
    if not ok:
        return 2
    return 0 if report["verdict"] == "certified_GAS" else 1


def cmd_verify_report(args) -> int:
    return _verify(read_report(args.report))


COMMANDS = {
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "certify-known": cmd_certify_known,
    "check-lmi": cmd_check_lmi,
    "lipschitz": cmd_lipschitz,
    "scaling": cmd_scaling,
    "verify-report": cmd_verify_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return COMMANDS[args.command](args)
    except (CliError, ConfigError, PipelineError, SampleFileError, ScpError, LipschitzError,
            EigenError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
