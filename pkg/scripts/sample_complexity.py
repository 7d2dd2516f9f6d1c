"""Sample counts needed compositionally versus for the whole network."""
from __future__ import annotations

import argparse

import _common  # noqa: F401

from dissipacert.certify import sample_complexity_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-M", type=int, default=100)
    ap.add_argument("--samples", type=int, default=1000)
    args = ap.parse_args()
    rows = sample_complexity_table(range(1, args.max_M + 1), args.samples)
    keys = list(rows[0])
    print(",".join(keys))
    for r in rows:
        print(",".join(f"{r[k]:.6g}" if isinstance(r[k], float) else str(r[k]) for k in keys))


if __name__ == "__main__":
    main()
