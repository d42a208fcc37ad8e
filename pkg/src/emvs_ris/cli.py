"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .harness import CSV_HEADER, ExperimentSpec, TrialOptions, run_experiment
from .scenes import (paper_targets, ris_comparison_geometry, table1_scene,
                     uniform_targets)
from .signal_model import SceneConfig

DEFAULT_VALUES = {
    "snr-sweep": [0, 5, 10, 15, 20],
    "snapshot-sweep": [100, 250, 500, 750, 1000],
    "target-sweep": list(range(2, 13)),
    "max-targets": [12],
    "ris-compare": [0, 5, 10, 15, 20],
    "crb": [0, 5, 10, 15, 20],
}

KIND = {
    "snr-sweep": "snr_sweep",
    "snapshot-sweep": "snapshot_sweep",
    "target-sweep": "target_sweep",
    "max-targets": "max_targets_scatter",
    "ris-compare": "ris_comparison",
}


def _values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors: exit status 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--scene", type=Path, help="TOML scene file used as the template")
    common.add_argument("--seed", type=int, default=0, help="base seed for trial seeding")
    common.add_argument("--trials", type=int, default=500)
    common.add_argument("--out", type=Path, help="CSV output path (JSON sidecar alongside)")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--values", type=_values, help="comma-separated sweep values")

    p = _Parser(prog="emvs-ris", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("snr-sweep", "RMSE and CRB versus SNR (dB)"),
                        ("snapshot-sweep", "RMSE and CRB versus snapshot count"),
                        ("target-sweep", "RMSE and CRB versus number of targets"),
                        ("max-targets", "K = N scatter experiment"),
                        ("ris-compare", "random versus designed RIS phases"),
                        ("crb", "CRB table versus SNR for one scene"),
                        ("selftest", "fast internal consistency checks")):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        if name == "ris-compare":
            sp.add_argument("--variant", choices=("verbatim", "corrected"), default="verbatim")
        if name == "snapshot-sweep":
            sp.add_argument("--snr", type=float, default=10.0)
        if name in ("target-sweep", "max-targets"):
            sp.add_argument("--snr", type=float, default=None)
            sp.add_argument("--snapshots", type=int, default=1000)
        if name == "snr-sweep":
            sp.add_argument("--crippled", action="store_true",
                            help="skip the phase-wrap correction (diagnostic)")
    return p


def _template(args) -> SceneConfig:
    import dataclasses

    if args.scene is not None:
        from .fileio import load_scene
        return load_scene(args.scene)
    cmd = args.command
    if cmd == "ris-compare":
        geo = ris_comparison_geometry(variant=args.variant)
        return SceneConfig(geometry=geo, targets=paper_targets(),
                           ris_phases=np.ones(geo.Q, dtype=complex), snapshots=500)
    if cmd == "snapshot-sweep":
        return table1_scene(snr_db=args.snr)
    if cmd in ("target-sweep", "max-targets"):
        snr = args.snr if args.snr is not None else (20.0 if cmd == "target-sweep" else 50.0)
        sc = table1_scene(snr_db=snr, snapshots=args.snapshots)
        return dataclasses.replace(sc, targets=uniform_targets(3))
    return table1_scene()


def _crb_table(scene, values, out):
    import dataclasses

    from .crb import compute_crb
    from .signal_model import synthesize

    rows = []
    for snr in values:
        sc = dataclasses.replace(scene, snr_db=float(snr))
        Z, U = synthesize(sc)
        res = compute_crb(sc, Z.noise_var, U=U)
        for g, vals in res.per_parameter_bounds.items():
            for k, v in enumerate(vals):
                rows.append((float(snr), g, k, math.degrees(math.sqrt(v))))
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("snr_db", "parameter", "target", "crb_deg"))
        for r in rows:
            w.writerow([repr(r[0]), r[1], r[2], repr(r[3])])
    finally:
        if out:
            fh.close()


def _selftest():
    from .estimation import estimate_targets, match_to_truth
    from .parafac import TalsOptions, tals
    from .ris_opt import QuadraticForm, build_phi, received_power, solve_sdp
    from .signal_model import ris_channel, scene_factors, synthesize

    sc = table1_scene()
    Z, U = synthesize(sc)
    est = tals(Z, sc.K, TalsOptions(init_mode="gevd", restarts=1), rng=0)
    tg, _ = estimate_targets(est, ris_channel(sc.geometry), sc.ris_phases, sc.geometry)
    perm = match_to_truth(tg, sc.targets)
    err = max(abs(math.degrees(tg[p].doa_refined.azimuth - t.doa.azimuth))
              for p, t in zip(perm, sc.targets))
    checks = [("noiseless end-to-end", err < 1e-6)]
    f = scene_factors(sc)
    form = build_phi(U.T, f["Cr"], f["G"], f["At"])
    w = np.exp(1j * np.random.default_rng(0).uniform(0, 2 * np.pi, sc.geometry.Q))
    p = received_power(w, U.T, f["Cr"], f["G"], f["At"])
    checks.append(("power identity", abs(form.value(w) - p) < 1e-8 * p))
    s = solve_sdp(QuadraticForm(np.eye(4)))
    checks.append(("sdp identity", abs(s.objective - 4) < 1e-6))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return all(ok for _, ok in checks)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    spec = None
    try:
        if args.trials < 1 or args.threads < 1:
            raise ConfigError("--trials and --threads must be positive")
        if args.command != "selftest":
            scene = _template(args)
            values = args.values or DEFAULT_VALUES[args.command]
        if args.command in KIND:
            opts = TrialOptions(disambiguate=not getattr(args, "crippled", False))
            spec = ExperimentSpec(kind=KIND[args.command], scene=scene, values=values,
                                  trials=args.trials,
                                  out=str(args.out) if args.out else None,
                                  seed=args.seed, threads=args.threads, trial_options=opts)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if args.command == "selftest":
                return 0 if _selftest() else 2
            if args.command == "crb":
                _crb_table(scene, values, args.out)
                return 0
            table = run_experiment(spec)
    except Exception as exc:  # scripted runs want an exit code, not a traceback
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if not args.out:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in table.rows:
            w.writerow([getattr(r, c) for c in CSV_HEADER])
    return 0


if __name__ == "__main__":
    sys.exit(main())
