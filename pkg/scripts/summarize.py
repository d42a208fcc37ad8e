"""Print a results CSV as RMSE and CRB in dB, one line per cell.

Usage::

    python scripts/summarize.py results/snr.csv
    python scripts/summarize.py results/ris.csv      # adds the per-cell RIS gain

Values are ``20 log10`` of degrees, the scale used by the RMSE figures.
"""

import math
import sys
from collections import defaultdict

from emvs_ris.harness import read_results


def db(x):
    return 20 * math.log10(x) if x and x > 0 and math.isfinite(x) else float("nan")


def main(paths):
    if not paths:
        print(__doc__)
        return 1
    for path in paths:
        table = read_results(path)
        print(f"== {path}")
        print(f"{'value':>8} {'arm':>10} {'variant':>12} {'group':>10} "
              f"{'RMSE dB':>8} {'CRB dB':>8} {'ok':>5} {'fail':>5}")
        for r in table.rows:
            print(f"{r.sweep_value:8.1f} {r.arm:>10} {r.variant:>12} {r.group:>10} "
                  f"{db(r.rmse_deg):8.2f} {db(r.crb_deg):8.2f} {r.trials:5d} {r.failures:5d}")
        arms = defaultdict(dict)
        for r in table.rows:
            arms[(r.sweep_value, r.variant, r.group)][r.arm] = r.rmse_deg
        gains = {k: db(v["random"]) - db(v["optimized"]) for k, v in arms.items()
                 if {"random", "optimized"} <= v.keys()}
        if gains:
            print("RIS gain (random minus optimized, dB):")
            for (value, variant, group), g in sorted(gains.items()):
                print(f"{value:8.1f} {variant:>12} {group:>10} {g:8.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
