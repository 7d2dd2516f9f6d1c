"""Unknown-topology certification of a ring of rooms with diagonal templates.

Every room has one state, so ``N`` samples per room cover the 2-sphere; the
total sample budget grows linearly with the number of rooms.
"""
from __future__ import annotations

import argparse
import time

import _common  # noqa: F401
from _common import print_evidence

from dissipacert.config import RunConfig
from dissipacert.pipeline import run_unknown, write_report


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rooms", type=int, default=20)
    ap.add_argument("--samples", type=int, default=1000, help="per room")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--report")
    args = ap.parse_args()

    cfg = (
        RunConfig()
        .override("system", builtin="room_network", params={"rooms": args.rooms})
        .override("scp", basis="diagonal", supply_structure="diagonal")
        .override("sampling", samples=args.samples)
        .override("certify", audit=False)
        .override("run", workers=args.workers)
    )
    t = time.perf_counter()
    out = run_unknown(cfg)
    wall = time.perf_counter() - t
    total = sum(len(s) for s in out.sets)
    print(f"{args.rooms} rooms, {total} samples in total, {wall:.1f} s")
    print_evidence(out)
    if args.report:
        write_report(out.report, args.report)


if __name__ == "__main__":
    main()
