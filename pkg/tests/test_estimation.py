import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emvs_ris.errors import DegeneratePolarization, RankDeficiency
from emvs_ris.estimation import (coarse_doa, estimate_dod, estimate_polarization,
                                 estimate_targets, match_to_truth,
                                 normalize_receive_factor, refine_doa, wrap_angle)
from emvs_ris.parafac import FactorEstimate, TalsOptions, tals
from emvs_ris.scenes import (compact_geometry, paper_targets, table1_scene,
                             wide_spacing_geometry)
from emvs_ris.signal_model import (Angles, Polarization, Target, ris_channel,
                                   scene_factors, synthesize)

from conftest import complex_normal

TOL_RAD = 1e-9


def exact_estimate(scene, scale=None):
    """FactorEstimate built from the true factors, optionally rescaled per column."""
    f = scene_factors(scene)
    Vt, Cr = f["Vt"].copy(), f["Cr"].copy()
    if scale is not None:
        Vt = Vt * scale[0]
        Cr = Cr * scale[1]
    U = np.ones((scene.snapshots, scene.K), dtype=complex)
    return FactorEstimate(Vt, Cr, U, [0.0], True)


def assert_angles(est, truth, tol=TOL_RAD):
    for a, b in zip(est, truth):
        assert abs(wrap_angle(a.azimuth - b.azimuth)) < tol
        assert abs(a.elevation - b.elevation) < tol


def test_normalization_reference_entry_and_scale_invariance(rng):
    sc = table1_scene(snapshots=4)
    f = scene_factors(sc)
    Cn = normalize_receive_factor(f["Cr"])
    np.testing.assert_allclose(Cn[5], 1.0)
    # element 1 sits at the origin, so its block is b / b(6)
    np.testing.assert_allclose(Cn[:6], f["B"] / f["B"][5], atol=1e-14)
    s = complex_normal(rng, 3)
    np.testing.assert_allclose(normalize_receive_factor(f["Cr"] * s), Cn, atol=1e-13)


def test_normalization_rejects_vanishing_reference():
    t = Target(Angles(0.3, 0.4), Angles(0.5, 0.6), Polarization(math.pi / 2, 0.0))
    f = scene_factors(table1_scene(snapshots=2, targets=[t]))
    with pytest.raises(DegeneratePolarization):
        normalize_receive_factor(f["Cr"])


def test_normalization_noisy_20db():
    sc = table1_scene(snr_db=20.0)
    Z, U = synthesize(sc)
    est = tals(Z, 3, TalsOptions(init_mode="gevd", restarts=1), rng=0)
    truth = normalize_receive_factor(scene_factors(sc)["Cr"])
    Cn = normalize_receive_factor(est.Cr_hat)
    perm = [int(np.argmin([np.linalg.norm(Cn[:, j] - truth[:, k]) for j in range(3)]))
            for k in range(3)]
    for k, j in enumerate(perm):
        assert np.linalg.norm(Cn[:, j] - truth[:, k]) / np.linalg.norm(truth[:, k]) < 5e-2


def test_dod_exact_and_scale_invariant():
    sc = table1_scene(snapshots=2)
    G = ris_channel(sc.geometry)
    est = exact_estimate(sc)
    dods = estimate_dod(est.Vt_hat, G, sc.ris_phases, sc.geometry)
    assert_angles(dods, [t.dod for t in sc.targets])
    rot = exact_estimate(sc, scale=(np.exp(1j * math.pi / 3) * np.ones(3), np.ones(3)))
    again = estimate_dod(rot.Vt_hat, G, sc.ris_phases, sc.geometry)
    for a, b in zip(dods, again):
        assert abs(a.azimuth - b.azimuth) < 1e-12 and abs(a.elevation - b.elevation) < 1e-12


def test_dod_rejects_wide_ris_channel():
    sc = table1_scene(snapshots=2)
    G = ris_channel(sc.geometry)
    with pytest.raises(RankDeficiency):
        estimate_dod(np.ones((2, 3)), G[:2], sc.ris_phases, sc.geometry)


def test_coarse_doa_exact_and_scale_invariant(rng):
    sc = table1_scene(snapshots=2)
    Cr = scene_factors(sc)["Cr"]
    doas, Qr = coarse_doa(normalize_receive_factor(Cr))
    assert_angles(doas, [t.doa for t in sc.targets])
    doas2, _ = coarse_doa(Cr * complex_normal(rng, 3))
    assert_angles(doas2, [t.doa for t in sc.targets])


def test_refine_doa_compact_array_needs_no_wrapping():
    sc = table1_scene(snapshots=2, geometry=compact_geometry())
    Cn = normalize_receive_factor(scene_factors(sc)["Cr"])
    coarse, Qc = coarse_doa(Cn)
    refined, phases, _ = refine_doa(Cn, Qc, sc.geometry)
    np.testing.assert_array_equal(phases.R_hat, 0)
    assert_angles(refined, coarse)
    raw, _, _ = refine_doa(Cn, Qc, sc.geometry, disambiguate=False)
    assert_angles(raw, refined, tol=1e-12)


def test_refine_doa_wide_array_unwraps():
    sc = table1_scene(snapshots=2, geometry=wide_spacing_geometry())
    Cn = normalize_receive_factor(scene_factors(sc)["Cr"])
    _, Qc = coarse_doa(Cn)
    refined, phases, _ = refine_doa(Cn, Qc, sc.geometry)
    assert_angles(refined, [t.doa for t in sc.targets])
    assert np.any(phases.R_hat != 0)
    assert np.all(phases.T_hat_prime > -math.pi) and np.all(phases.T_hat_prime <= math.pi)
    np.testing.assert_array_equal(phases.T_bar - phases.T_hat_prime, 2 * np.pi * phases.R_hat)
    assert np.all(np.abs(phases.T_bar - phases.T_hat) <= math.pi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        crippled, _, _ = refine_doa(Cn, Qc, sc.geometry, disambiguate=False)
    err = max(abs(math.degrees(wrap_angle(c.azimuth - t.doa.azimuth)))
              + abs(math.degrees(c.elevation - t.doa.elevation))
              for c, t in zip(crippled, sc.targets))
    assert err > 1.0


def test_polarization_exact():
    sc = table1_scene(snapshots=2)
    Cn = normalize_receive_factor(scene_factors(sc)["Cr"])
    pols, defined = estimate_polarization(Cn, [t.doa for t in sc.targets], sc.geometry)
    assert all(defined)
    for p, t in zip(pols, sc.targets):
        assert abs(p.aux - t.pol.aux) < 1e-8 and abs(p.phase - t.pol.phase) < 1e-8


def test_polarization_zeta_zero_flags_phase():
    t = Target(Angles(0.3, 0.4), Angles(0.5, 0.6), Polarization(0.0, 1.0))
    sc = table1_scene(snapshots=2, targets=[t])
    Cn = normalize_receive_factor(scene_factors(sc)["Cr"])
    pols, defined = estimate_polarization(Cn, [t.doa], sc.geometry)
    assert pols[0].aux == pytest.approx(0.0, abs=1e-12)
    assert pols[0].phase == 0.0 and defined == [False]


def test_noiseless_end_to_end_wide_array():
    sc = table1_scene(geometry=wide_spacing_geometry(), snapshots=100)
    Z, _ = synthesize(sc)
    est = tals(Z, 3, TalsOptions(init_mode="gevd", restarts=1), rng=0)
    tg, _ = estimate_targets(est, ris_channel(sc.geometry), sc.ris_phases, sc.geometry)
    perm = match_to_truth(tg, sc.targets)
    tol = math.radians(1e-6)
    for p, t in zip(perm, sc.targets):
        e = tg[p]
        assert_angles([e.dod, e.doa_refined], [t.dod, t.doa], tol)
        assert abs(e.pol.aux - t.pol.aux) < tol and abs(e.pol.phase - t.pol.phase) < tol
        assert e.column_index == p


def test_estimates_are_scale_invariant(rng):
    sc = table1_scene(snapshots=2, geometry=wide_spacing_geometry())
    G = ris_channel(sc.geometry)
    a, _ = estimate_targets(exact_estimate(sc), G, sc.ris_phases, sc.geometry)
    scale = (complex_normal(rng, 3), complex_normal(rng, 3))
    b, _ = estimate_targets(exact_estimate(sc, scale), G, sc.ris_phases, sc.geometry)
    for x, y in zip(a, b):
        for f in ("dod", "doa_coarse", "doa_refined"):
            u, v = getattr(x, f), getattr(y, f)
            assert abs(u.azimuth - v.azimuth) < 1e-10 and abs(u.elevation - v.elevation) < 1e-10


def test_match_to_truth_examples(rng):
    truth = paper_targets()
    ests, _ = estimate_targets(exact_estimate(table1_scene(snapshots=2)),
                               ris_channel(table1_scene().geometry),
                               np.ones(5), table1_scene().geometry)
    shuffled = [ests[2], ests[0], ests[1]]
    assert match_to_truth(shuffled, truth) == [1, 2, 0]
    assert match_to_truth(ests[:1], truth[:1]) == [0]


def _fake(targets, noise, rng):
    from emvs_ris.estimation import TargetEstimate

    out = []
    for t in targets:
        d = rng.normal(0, noise, 4)
        out.append(TargetEstimate(
            Angles(float(wrap_angle(t.dod.azimuth + d[0])), t.dod.elevation + d[1]),
            t.doa, Angles(float(wrap_angle(t.doa.azimuth + d[2])), t.doa.elevation + d[3]),
            t.pol, 0))
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_match_exhaustive_and_assignment_agree(seed):
    rng = np.random.default_rng(seed)
    truth = [Target(Angles(rng.uniform(-3, 3), rng.uniform(0.3, 2.8)),
                    Angles(rng.uniform(-3, 3), rng.uniform(0.3, 2.8)),
                    Polarization(0.5, 0.5)) for _ in range(5)]
    ests = _fake(truth, 0.01, rng)
    order = rng.permutation(5)
    ests = [ests[i] for i in order]
    a = match_to_truth(ests, truth)
    b = match_to_truth(ests, truth, exhaustive_limit=0)
    assert a == b == [int(np.flatnonzero(order == k)[0]) for k in range(5)]


def test_wrap_angle_range():
    x = np.linspace(-20, 20, 1001)
    w = wrap_angle(x)
    assert np.all(w > -math.pi) and np.all(w <= math.pi)
    np.testing.assert_allclose(np.exp(1j * w), np.exp(1j * x), atol=1e-12)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
