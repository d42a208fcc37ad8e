import csv
import math
import warnings

import numpy as np
import pytest

from emvs_ris.errors import ConvergenceFailure, IllConditioned
from emvs_ris.parafac import (TalsOptions, _gn_system, _kr_update, _lm_refine,
                              _ls_update, align_factors, congruence, hosvd_compress,
                              kruskal_rank, tals)
from emvs_ris.scenes import table1_scene
from emvs_ris.signal_model import Target, scene_factors, synthesize
from emvs_ris.tensor import cp_to_tensor, khatri_rao, unfold

from conftest import complex_normal


def _truth(scene, U):
    f = scene_factors(scene)
    return f["Vt"], f["Cr"], U.T


def test_options_validation():
    with pytest.raises(ValueError):
        TalsOptions(restarts=0)
    with pytest.raises(ValueError):
        TalsOptions(rel_fit_tol=0.0)
    with pytest.raises(ValueError):
        TalsOptions(init_mode="magic")


def test_rank_one_converges_fast():
    sc = table1_scene(targets=[Target.from_degrees((45, 25), (50, 21), (30, 20))])
    Z, _ = synthesize(sc)
    est = tals(Z, 1, TalsOptions(restarts=1), rng=0)
    assert est.iterations <= 3
    assert est.fit < 1e-10


@pytest.mark.parametrize("mode", ["random", "svd_slices", "gevd"])
def test_noiseless_table1_recovers_factors(noiseless_scene, mode):
    Z, U = synthesize(noiseless_scene)
    est = tals(Z, 3, TalsOptions(init_mode=mode, restarts=2, max_iters=3000), rng=1)
    assert est.fit < 1e-8
    _, _, congs = align_factors((est.Vt_hat, est.Cr_hat, est.U_hat),
                                _truth(noiseless_scene, U))
    assert np.all(congs > 0.999)


def test_noisy_fit_near_noise_floor():
    sc = table1_scene(snr_db=20.0)
    Z, _ = synthesize(sc)
    est = tals(Z, 3, TalsOptions(init_mode="gevd", restarts=1, max_iters=2000), rng=2)
    floor = math.sqrt(Z.noise_var * Z.data.size) / np.linalg.norm(Z.data)
    assert abs(est.fit / floor - 1) < 0.1


def test_fit_history_monotone_and_consistent():
    sc = table1_scene(snr_db=5.0, snapshots=200)
    Z, _ = synthesize(sc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceFailure)
        est = tals(Z, 3, TalsOptions(restarts=1, max_iters=300), rng=3)
    h = np.array(est.fit_history)
    assert np.all(np.diff(h) <= 1e-12)
    # the reported fit is the reconstruction error in every unfolding
    R = cp_to_tensor(est.Vt_hat, est.Cr_hat, est.U_hat)
    for n in (1, 2, 3):
        r = np.linalg.norm(unfold(Z.data, n) - unfold(R, n)) / np.linalg.norm(Z.data)
        assert abs(r - est.fit) < 1e-10


def test_line_search_keeps_monotone_and_matches():
    sc = table1_scene(snr_db=10.0, snapshots=200)
    Z, _ = synthesize(sc)
    plain = tals(Z, 3, TalsOptions(init_mode="gevd", restarts=1, max_iters=3000), rng=4)
    fast = tals(Z, 3, TalsOptions(init_mode="gevd", restarts=1, max_iters=3000,
                                  line_search=True, compressed_warm_start=True), rng=4)
    assert np.all(np.diff(fast.fit_history) <= 1e-12)
    assert abs(fast.fit - plain.fit) < 1e-8 * plain.fit
    _, _, congs = align_factors((fast.Vt_hat, fast.Cr_hat, fast.U_hat),
                                (plain.Vt_hat, plain.Cr_hat, plain.U_hat))
    assert np.all(congs > 1 - 1e-6)


@pytest.mark.parametrize("shape", [(7, 9, 3), (2, 30, 4), (5, 5, 5)])
def test_structured_update_matches_direct_svd_solve(rng, shape):
    Ia, Ib, K = shape
    A, B = complex_normal(rng, (Ia, K)), complex_normal(rng, (Ib, K))
    Zn = complex_normal(rng, (Ia * Ib, 6))
    X = _kr_update(A, B, Zn, 1e12)
    ref = np.linalg.lstsq(khatri_rao(A, B), Zn, rcond=None)[0].T
    np.testing.assert_allclose(X, ref, atol=1e-10)
    B[:, 1] = B[:, 0]
    A[:, 1] = A[:, 0]
    with pytest.raises(IllConditioned):
        _kr_update(A, B, Zn, 1e12)
    with pytest.raises(IllConditioned):
        _ls_update(khatri_rao(A, B), Zn, 1e12)


def test_gauss_newton_system_matches_explicit_jacobian(rng):
    M, I, L, K = 3, 4, 5, 2
    T = complex_normal(rng, (M, I, L))
    V, C, U = complex_normal(rng, (M, K)), complex_normal(rng, (I, K)), complex_normal(rng, (L, K))
    n = M * I * L
    J = np.hstack([
        np.einsum("ab,ik,lk->ailbk", np.eye(M), C, U).reshape(n, -1),
        np.einsum("mk,ab,lk->malbk", V, np.eye(I), U).reshape(n, -1),
        np.einsum("mk,ik,ab->miabk", V, C, np.eye(L)).reshape(n, -1),
    ])
    r = (T - cp_to_tensor(V, C, U)).ravel()
    H, g, f = _gn_system(T, V, C, U)
    np.testing.assert_allclose(H, J.conj().T @ J, atol=1e-12)
    np.testing.assert_allclose(g, J.conj().T @ r, atol=1e-12)
    assert f == pytest.approx(np.vdot(r, r).real, rel=1e-12)


def test_lm_polish_reaches_exact_fit_and_never_worsens(rng):
    M, I, L, K = 4, 6, 6, 3
    V, C, U = complex_normal(rng, (M, K)), complex_normal(rng, (I, K)), complex_normal(rng, (L, K))
    T = cp_to_tensor(V, C, U)
    start = [X + 0.1 * complex_normal(rng, X.shape) for X in (V, C, U)]
    before = np.linalg.norm(T - cp_to_tensor(*start))
    out = _lm_refine(T, *start)
    assert np.linalg.norm(T - cp_to_tensor(*out)) < 1e-9 * np.linalg.norm(T) < before
    # noisy data: the polish may only lower the residual
    Tn = T + 0.05 * complex_normal(rng, T.shape)
    out = _lm_refine(Tn, *start)
    assert np.linalg.norm(Tn - cp_to_tensor(*out)) <= np.linalg.norm(Tn - cp_to_tensor(*start))


def test_hosvd_compress_is_lossless_at_full_rank(rng):
    A, B, C = complex_normal(rng, (6, 2)), complex_normal(rng, (9, 2)), complex_normal(rng, (7, 2))
    Z = cp_to_tensor(A, B, C)
    core, (W1, W2, W3) = hosvd_compress(Z, (2, 2, 2))
    back = np.einsum("abc,ia,jb,kc->ijk", core, W1, W2, W3)
    assert np.linalg.norm(back - Z) < 1e-12 * np.linalg.norm(Z)


def test_uniqueness_two_restarts(rng):
    M, I, L, K = 4, 24, 8, 2
    for trial in range(5):
        V, C, U = (complex_normal(rng, (n, K)) for n in (M, I, L))
        Z = cp_to_tensor(V, C, U)
        a = tals(Z, K, TalsOptions(restarts=1, max_iters=2000), rng=10 * trial)
        b = tals(Z, K, TalsOptions(restarts=1, max_iters=2000), rng=10 * trial + 1)
        perm, lams, congs = align_factors((b.Vt_hat, b.Cr_hat, b.U_hat),
                                          (a.Vt_hat, a.Cr_hat, a.U_hat))
        assert np.all(congs > 0.999)
        np.testing.assert_allclose(lams[0] * lams[1] * lams[2], 1.0, atol=1e-6)


def test_ill_conditioned_raises(rng):
    V, C, U = complex_normal(rng, (5, 2)), complex_normal(rng, (12, 2)), complex_normal(rng, (10, 2))
    Z = cp_to_tensor(V, C, U)

    def collinear_init(Z, K, rng):
        # identical columns in both factors make V kr C exactly rank one
        return np.repeat(V[:, :1], 2, axis=1), np.repeat(C[:, :1], 2, axis=1)

    from emvs_ris import parafac
    orig = parafac._INITS["random"]
    parafac._INITS["random"] = collinear_init
    try:
        with pytest.raises(IllConditioned):
            tals(Z, 2, TalsOptions(restarts=1), rng=0)
    finally:
        parafac._INITS["random"] = orig


def test_convergence_failure_is_a_warning():
    Z, _ = synthesize(table1_scene(snr_db=0.0, snapshots=100))
    with pytest.warns(ConvergenceFailure):
        est = tals(Z, 3, TalsOptions(restarts=1, max_iters=2, rel_fit_tol=1e-15), rng=0)
    assert not est.converged and est.iterations == 2


def test_trace_csv(tmp_path):
    Z, _ = synthesize(table1_scene(snapshots=50))
    path = tmp_path / "trace.csv"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = tals(Z, 3, TalsOptions(restarts=1, max_iters=20, trace_path=str(path)), rng=0)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "fit"]
    assert [float(r[1]) for r in rows[1:]] == est.fit_history


def test_kruskal_rank_and_congruence(rng):
    A = complex_normal(rng, (4, 3))
    assert kruskal_rank(A) == 3
    assert kruskal_rank(np.hstack([A, A[:, :1]])) == 1
    np.testing.assert_allclose(np.diag(congruence(A, 2j * A)), 1.0)


def test_rejects_k_larger_than_dimensions():
    Z, _ = synthesize(table1_scene(snapshots=2))
    with pytest.raises(ValueError):
        tals(Z, 3)
