"""Run the Monte Carlo experiments and write one CSV (plus JSON sidecar) each.

Usage::

    python scripts/run_experiments.py --out-dir results --trials 500
    python scripts/run_experiments.py --only snr,ris --trials 50

The experiments are the SNR sweep, the snapshot sweep, the target-count
sweep, the K = N scatter run, both RIS comparison variants and a CRB table.
A full run at 500 trials takes hours on one core; ``--threads`` spreads
trials over worker threads.
"""

import argparse
import sys
import time
from pathlib import Path

from emvs_ris.cli import main as cli

EXPERIMENTS = {
    "snr": ["snr-sweep"],
    "snr-crippled": ["snr-sweep", "--crippled"],
    "snapshots": ["snapshot-sweep", "--values", "125,250,500,1000"],
    "targets": ["target-sweep"],
    "max-targets": ["max-targets"],
    "ris": ["ris-compare", "--variant", "verbatim"],
    "ris-corrected": ["ris-compare", "--variant", "corrected"],
    "crb": ["crb"],
}

# a K = 12 trial costs several seconds; 100 trials already give 1200 points
TRIAL_CAP = {"max-targets": 100}


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", type=Path, default=Path("results"))
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", default="", help="comma-separated subset of " + ", ".join(EXPERIMENTS))
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    names = [n for n in args.only.split(",") if n] or list(EXPERIMENTS)
    unknown = set(names) - set(EXPERIMENTS)
    if unknown:
        print(f"unknown experiments: {sorted(unknown)}", file=sys.stderr)
        return 1
    args.out_dir.mkdir(parents=True, exist_ok=True)
    status = 0
    for name in names:
        trials = min(args.trials, TRIAL_CAP.get(name, args.trials))
        argv = EXPERIMENTS[name] + ["--out", str(args.out_dir / f"{name}.csv"),
                                    "--seed", str(args.seed)]
        if name != "crb":
            argv += ["--trials", str(trials), "--threads", str(args.threads)]
        t0 = time.time()
        code = cli(argv)
        print(f"{name}: exit {code} after {time.time() - t0:.0f} s", flush=True)
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
