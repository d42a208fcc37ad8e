"""Monte Carlo experiments: trials, sweeps, RMSE/CRB tables and their files.

Seed splitting
--------------
Trial ``t`` of sweep cell ``c`` in an experiment with base seed ``s`` uses

* scene seed (reflections and noise): ``SeedSequence([s, c, t])`` -> one uint64,
* TALS generator: ``SeedSequence([s, c, t, 1])``,
* random RIS phases (RIS comparison only): ``SeedSequence([s, c, t, 2])``,
* Gaussian randomization (RIS comparison only): ``SeedSequence([s, c, t, 3])``.

Every trial is therefore a pure function of ``(s, c, t)`` and the thread
count never changes a result.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .crb import compute_crb
from .errors import EmvsRisError
from .estimation import (ROUNDING_MARGIN, estimate_targets, match_to_truth, wrap_angle)
from .parafac import TalsOptions, tals
from .ris_opt import SdpOptions, optimize_phases
from .scenes import random_unit_phases, uniform_targets
from .signal_model import SceneConfig, ris_channel, synthesize

__all__ = ["KINDS", "CSV_HEADER", "ExperimentSpec", "TrialOptions", "TrialResult",
           "ResultRow", "ResultTable", "run_trial", "run_experiment",
           "emit_results", "read_results", "trial_seed", "harness_tals_options"]

KINDS = ("snr_sweep", "snapshot_sweep", "target_sweep", "max_targets_scatter",
         "ris_comparison")

CSV_HEADER = ("sweep_value", "arm", "variant", "group", "rmse_deg", "crb_deg",
              "mse_stderr_deg2", "trials", "failures")

# (variant, group) -> CRB parameter block
CELLS = (
    ("dod", "azimuth", "theta_t"),
    ("dod", "elevation", "phi_t"),
    ("doa_coarse", "azimuth", "theta_r"),
    ("doa_coarse", "elevation", "phi_r"),
    ("doa_refined", "azimuth", "theta_r"),
    ("doa_refined", "elevation", "phi_r"),
    ("pol", "zeta", "zeta"),
    ("pol", "rho", "rho"),
)


# Above this many targets the compressed fit gets extra GEVD restarts.
CROWDED_K = 8


def harness_tals_options(K=1):
    """TALS settings used for Monte Carlo work.

    GEVD-initialized runs, warm-started on the compressed tensor, where a
    short ALS phase is finished by Levenberg-Marquardt steps, then
    accelerated by the monotone line search.  The final iterations always
    run on the full tensor under the usual stopping rule.  Crowded scenes
    (``K > CROWDED_K``) get three restarts because the compressed fit has
    local minima there.
    """
    return TalsOptions(init_mode="gevd", restarts=1 if K <= CROWDED_K else 3,
                       line_search=True, compressed_warm_start=True,
                       warm_start_iters=300, lm_polish=True, check_kruskal=False)


@dataclass
class TrialOptions:
    # None selects harness_tals_options(K) for the scene being run
    tals: TalsOptions | None = None
    disambiguate: bool = True
    with_crb: bool = True


@dataclass
class TrialResult:
    failed: bool
    error: str = ""
    estimates: list | None = None
    perm: list | None = None
    # (variant, group) -> length-K signed errors in degrees, truth order
    errors_deg: dict = field(default_factory=dict)
    # (variant, group) -> length-K CRB diagonal in rad^2
    crb_rad2: dict = field(default_factory=dict)
    fit: float = float("nan")
    converged: bool = False
    rounding_instabilities: int = 0
    misassociations: int = 0
    noise_var: float = 0.0
    factors: object = None


def trial_seed(base, cell, trial, stream=None):
    key = [int(base), int(cell), int(trial)] + ([] if stream is None else [int(stream)])
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])


def _signed_errors(estimates, perm, truth):
    ests = [estimates[p] for p in perm]
    out = {}
    for variant, attr in (("dod", "dod"), ("doa_coarse", "doa_coarse"),
                          ("doa_refined", "doa_refined")):
        t_attr = "dod" if variant == "dod" else "doa"
        az = [wrap_angle(getattr(e, attr).azimuth - getattr(t, t_attr).azimuth)
              for e, t in zip(ests, truth)]
        el = [getattr(e, attr).elevation - getattr(t, t_attr).elevation
              for e, t in zip(ests, truth)]
        out[(variant, "azimuth")] = np.degrees(np.array(az, dtype=float))
        out[(variant, "elevation")] = np.degrees(np.array(el, dtype=float))
    out[("pol", "zeta")] = np.degrees(np.array([e.pol.aux - t.pol.aux
                                                for e, t in zip(ests, truth)]))
    out[("pol", "rho")] = np.degrees(np.array([wrap_angle(e.pol.phase - t.pol.phase)
                                               for e, t in zip(ests, truth)], dtype=float))
    return out


def _misassociations(estimates, truth):
    """Targets whose DOD-only and DOA-only assignments disagree."""
    def assign(cost):
        _, cols = linear_sum_assignment(np.asarray(cost))
        return cols

    dod = assign([[wrap_angle(e.dod.azimuth - t.dod.azimuth) ** 2
                   + (e.dod.elevation - t.dod.elevation) ** 2 for e in estimates]
                  for t in truth])
    doa = assign([[wrap_angle(e.doa_refined.azimuth - t.doa.azimuth) ** 2
                   + (e.doa_refined.elevation - t.doa.elevation) ** 2 for e in estimates]
                  for t in truth])
    return int(np.sum(dod != doa))


def run_trial(scene: SceneConfig, opts: TrialOptions | None = None, rng=None):
    """Synthesize, decompose, estimate and score one realization of ``scene``.

    Any package error, linear-algebra failure or TALS non-convergence marks
    the trial as failed; it is never raised.
    """
    opts = opts or TrialOptions()
    try:
        Z, U = synthesize(scene)
        est = tals(Z, scene.K, opts.tals or harness_tals_options(scene.K), rng=rng)
        if not est.converged:
            return TrialResult(failed=True, error="ConvergenceFailure", fit=est.fit,
                               noise_var=Z.noise_var)
        G = ris_channel(scene.geometry)
        estimates, phases = estimate_targets(est, G, scene.ris_phases, scene.geometry,
                                             opts.disambiguate)
        perm = match_to_truth(estimates, scene.targets)
        frac = (phases.T_hat - phases.T_hat_prime) / (2 * np.pi)
        unstable = int(np.sum(np.abs(frac - np.rint(frac)) > ROUNDING_MARGIN))
        res = TrialResult(failed=False, estimates=estimates, perm=perm,
                          errors_deg=_signed_errors(estimates, perm, scene.targets),
                          fit=est.fit, converged=True, rounding_instabilities=unstable,
                          misassociations=_misassociations(estimates, scene.targets),
                          noise_var=Z.noise_var, factors=est)
        if opts.with_crb and Z.noise_var > 0:
            bounds = compute_crb(scene, Z.noise_var, U=U).per_parameter_bounds
            res.crb_rad2 = {(v, g): bounds[b] for v, g, b in CELLS}
        return res
    except (EmvsRisError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        return TrialResult(failed=True, error=type(exc).__name__)


def design_factors(est, G, w):
    """``(U, C, A_t)`` with consistent scaling for RIS phase design.

    The transmit factor is split as ``V_t = G diag(w) A_t Lambda`` with
    ``A_t`` normalized to a unit first entry; ``Lambda`` is moved onto ``U``
    so that ``V_t kr C_r kr U`` is unchanged.
    """
    GW = G * w[None, :]
    raw = np.linalg.lstsq(GW, est.Vt_hat, rcond=None)[0]
    lam = raw[0, :]
    return est.U_hat * lam[None, :], est.Cr_hat, raw / lam


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentSpec:
    kind: str
    scene: SceneConfig
    values: list
    trials: int = 500
    out: str | None = None
    seed: int = 0
    threads: int = 1
    trial_options: TrialOptions = field(default_factory=TrialOptions)
    sdp_options: SdpOptions = field(default_factory=SdpOptions)
    keep_points: bool | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        self.values = list(self.values)
        if not self.values:
            raise ValueError("at least one sweep value is required")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if int(self.trials) < 1:
            raise ValueError("trials must be >= 1")
        if int(self.threads) < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class ResultRow:
    sweep_value: float
    arm: str
    variant: str
    group: str
    rmse_deg: float
    crb_deg: float
    mse_stderr_deg2: float
    trials: int
    failures: int


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    # per (sweep value, arm): fit, instability, association and failure details
    diagnostics: list = field(default_factory=list)
    # scatter points: (sweep_value, arm, trial, target, variant, group, est, truth)
    points: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def get(self, sweep_value, variant, group, arm="main"):
        for r in self.rows:
            if (r.sweep_value == sweep_value and r.variant == variant
                    and r.group == group and r.arm == arm):
                return r
        raise KeyError((sweep_value, arm, variant, group))


def _cell_scene(spec: ExperimentSpec, value):
    s = spec.scene
    if spec.kind in ("snr_sweep", "ris_comparison"):
        return dataclasses.replace(s, snr_db=float(value))
    if spec.kind == "snapshot_sweep":
        return dataclasses.replace(s, snapshots=int(value))
    K = int(value)
    targets = s.targets if len(s.targets) == K else uniform_targets(K)
    return dataclasses.replace(s, targets=targets)


def _plain_trial(scene, opts, base, cell, t):
    sc = dataclasses.replace(scene, rng_seed=trial_seed(base, cell, t))
    rng = np.random.default_rng(np.random.SeedSequence([base, cell, t, 1]))
    return {"main": run_trial(sc, opts, rng)}


def _ris_trial(scene, opts, sdp_opts, base, cell, t):
    """Random phases, then phases designed from that pass's estimates.

    Both arms share the reflection and noise draws, and the noise variance
    is fixed by the random-phase arm, so the designed phases can only help
    through a stronger received signal.
    """
    seed = trial_seed(base, cell, t)
    w_rand = random_unit_phases(scene.geometry.Q,
                                np.random.default_rng(np.random.SeedSequence([base, cell, t, 2])))
    sc_r = dataclasses.replace(scene, ris_phases=w_rand, rng_seed=seed, noise_var=None)
    rng = np.random.default_rng(np.random.SeedSequence([base, cell, t, 1]))
    r = run_trial(sc_r, opts, rng)
    if r.failed:
        return {"random": r, "optimized": TrialResult(failed=True, error="no first pass")}
    G = ris_channel(scene.geometry)
    try:
        U, C, At = design_factors(r.factors, G, w_rand)
        w_opt, _ = optimize_phases(U, C, G, At, w_init=w_rand, opts=sdp_opts,
                                   rng=np.random.default_rng(
                                       np.random.SeedSequence([base, cell, t, 3])))
    except (EmvsRisError, np.linalg.LinAlgError, ValueError) as exc:
        return {"random": r, "optimized": TrialResult(failed=True, error=type(exc).__name__)}
    sc_o = dataclasses.replace(sc_r, ris_phases=w_opt, noise_var=r.noise_var)
    rng = np.random.default_rng(np.random.SeedSequence([base, cell, t, 1]))
    return {"random": r, "optimized": run_trial(sc_o, opts, rng)}


def _aggregate(value, arm, results, scene, table, keep_points):
    ok = [r for r in results if not r.failed]
    fails = len(results) - len(ok)
    for variant, group, _ in CELLS:
        if ok:
            e = np.concatenate([r.errors_deg[(variant, group)] for r in ok])
            sq = e ** 2
            rmse = float(np.sqrt(sq.mean()))
            se = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else float("nan")
            crbs = [r.crb_rad2[(variant, group)] for r in ok if r.crb_rad2]
            crb = (float(np.degrees(np.sqrt(np.mean(np.concatenate(crbs)))))
                   if crbs else float("nan"))
        else:
            rmse = se = crb = float("nan")
        table.rows.append(ResultRow(float(value), arm, variant, group, rmse, crb, se,
                                    len(ok), fails))
    errors = {}
    for r in results:
        if r.failed:
            errors[r.error] = errors.get(r.error, 0) + 1
    max_err = max((float(np.max(np.abs(v))) for r in ok for k, v in r.errors_deg.items()
                   if k[0] != "doa_coarse"), default=float("nan"))
    table.diagnostics.append({
        "sweep_value": float(value), "arm": arm, "trials": len(results),
        "failures": fails, "failure_kinds": errors,
        "mean_fit": float(np.mean([r.fit for r in ok])) if ok else None,
        "rounding_instabilities": int(sum(r.rounding_instabilities for r in ok)),
        "misassociations": int(sum(r.misassociations for r in ok)),
        "max_abs_error_deg": max_err,
    })
    if keep_points:
        truth = scene.targets
        for t, r in enumerate(results):
            if r.failed:
                continue
            ests = [r.estimates[p] for p in r.perm]
            for k, (e, tr) in enumerate(zip(ests, truth)):
                for variant, est_a, tru_a in (("dod", e.dod, tr.dod),
                                               ("doa_refined", e.doa_refined, tr.doa)):
                    for group, i in (("azimuth", 0), ("elevation", 1)):
                        table.points.append((float(value), arm, t, k, variant, group,
                                             est_a.degrees()[i], tru_a.degrees()[i]))
                for group, i in (("zeta", 0), ("rho", 1)):
                    table.points.append((float(value), arm, t, k, "pol", group,
                                         e.pol.degrees()[i], tr.pol.degrees()[i]))


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Run every sweep cell of ``spec`` and aggregate RMSE against the CRB.

    RMSE is the square root of the mean squared error over all successful
    trials and all targets (after matching), in degrees.  The CRB column is
    the square root of the trial-averaged CRB diagonal.  Written to
    ``spec.out`` when set.
    """
    table = ResultTable(config=experiment_config(spec))
    keep = spec.kind == "max_targets_scatter" if spec.keep_points is None else spec.keep_points
    with ThreadPoolExecutor(max_workers=int(spec.threads)) as pool:
        for cell, value in enumerate(spec.values):
            scene = _cell_scene(spec, value)
            if spec.kind == "ris_comparison":
                jobs = [pool.submit(_ris_trial, scene, spec.trial_options, spec.sdp_options,
                                    spec.seed, cell, t) for t in range(spec.trials)]
            else:
                jobs = [pool.submit(_plain_trial, scene, spec.trial_options,
                                    spec.seed, cell, t) for t in range(spec.trials)]
            outs = [j.result() for j in jobs]
            for arm in outs[0]:
                _aggregate(value, arm, [o[arm] for o in outs], scene, table, keep)
    if spec.out:
        emit_results(table, spec.out)
    return table


# ---------------------------------------------------------------------------
# output


def _version():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return __version__


def _scene_echo(scene: SceneConfig):
    g = scene.geometry
    return {
        "wavelength": g.wavelength, "tx": g.tx.tolist(), "rx": g.rx.tolist(),
        "ris": g.ris.tolist(),
        "ris_phases_rad": np.angle(scene.ris_phases).tolist(),
        "targets_deg": [{"dod": t.dod.degrees(), "doa": t.doa.degrees(),
                         "pol": t.pol.degrees()} for t in scene.targets],
        "snapshots": scene.snapshots,
        "snr_db": scene.snr_db if math.isfinite(scene.snr_db) else str(scene.snr_db),
        "seed": scene.rng_seed,
    }


def experiment_config(spec: ExperimentSpec):
    return {
        "kind": spec.kind, "values": [float(v) for v in spec.values],
        "trials": int(spec.trials), "seed": int(spec.seed), "threads": int(spec.threads),
        "scene": _scene_echo(spec.scene),
        "tals": (dataclasses.asdict(spec.trial_options.tals) if spec.trial_options.tals
                 else {"harness_default": True, "crowded_k": CROWDED_K,
                       **dataclasses.asdict(harness_tals_options())}),
        "disambiguate": spec.trial_options.disambiguate,
        "sdp": dataclasses.asdict(spec.sdp_options),
    }


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def emit_results(table: ResultTable, path):
    """CSV with :data:`CSV_HEADER` plus a JSON sidecar (``.json`` suffix).

    Scatter points, when present, go to ``<stem>_points.csv``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in table.rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_HEADER])
    if table.points:
        with open(path.with_name(path.stem + "_points.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("sweep_value", "arm", "trial", "target", "variant", "group",
                        "estimate_deg", "truth_deg"))
            for p in table.points:
                w.writerow([_fmt(v) for v in p])
    side = {"version": _version(), "config": table.config, "header": list(CSV_HEADER),
            "diagnostics": table.diagnostics}
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, default=str) + "\n")


def read_results(path) -> ResultTable:
    """Parse a CSV written by :func:`emit_results` (rows only)."""
    table = ResultTable()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        for rec in reader:
            d = dict(zip(header, rec))
            table.rows.append(ResultRow(
                float(d["sweep_value"]), d["arm"], d["variant"], d["group"],
                float(d["rmse_deg"]), float(d["crb_deg"]), float(d["mse_stderr_deg2"]),
                int(d["trials"]), int(d["failures"])))
    return table
