"""Trilinear alternating least squares for the M x 6N x L PARAFAC model.

The model is ``Z[m, i, l] = sum_k Vt[m, k] Cr[i, k] U[l, k]``.  Each sweep
updates ``Vt``, ``Cr`` and ``U`` in that order; every update is the exact
least-squares solution obtained from thin QR factors of the two fixed
factors and an SVD of the small remaining Khatri-Rao product (normal
equations are never formed).
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, IllConditioned, KruskalWarning
from .signal_model import SnapshotTensor
from .tensor import cp_to_tensor, fold, khatri_rao, unfold

__all__ = ["TalsOptions", "FactorEstimate", "khatri_rao", "unfold", "fold",
           "tals", "hosvd_compress", "kruskal_rank", "congruence", "align_factors"]

_FAST_RESIDUAL_MIN = 1e-2
INIT_MODES = ("random", "svd_slices", "gevd")


@dataclass
class TalsOptions:
    max_iters: int = 500
    rel_fit_tol: float = 1e-10
    restarts: int = 5
    init_mode: str = "random"
    # stop outright once the relative residual is this small (noiseless data)
    abs_fit_tol: float = 1e-14
    cond_limit: float = 1e12
    check_kruskal: bool = True
    trace_path: str | None = None
    # Extrapolate (V, C) along the last sweep direction and keep the jump
    # only when it lowers the fit, so the fit history stays monotone.
    line_search: bool = False
    # Fit the model first on an HOSVD-compressed core (ranks up to 2K) and use
    # the expanded result as the starting point of the full-data iterations.
    compressed_warm_start: bool = False
    warm_start_iters: int = 5000
    # Finish the compressed fit with Levenberg-Marquardt steps (needs the
    # warm start); this is what gets K close to the receiver count through.
    lm_polish: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.rel_fit_tol > 0:
            raise ValueError("rel_fit_tol must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.warm_start_iters < 1:
            raise ValueError("warm_start_iters must be positive")


@dataclass
class FactorEstimate:
    Vt_hat: np.ndarray
    Cr_hat: np.ndarray
    U_hat: np.ndarray
    fit_history: list = field(default_factory=list)
    converged: bool = False
    restart: int = 0

    @property
    def fit(self):
        return self.fit_history[-1] if self.fit_history else float("nan")

    @property
    def iterations(self):
        return len(self.fit_history)

    def reconstruct(self):
        return cp_to_tensor(self.Vt_hat, self.Cr_hat, self.U_hat)


def _ls_update(KR, Zn, cond_limit):
    """Solve ``KR @ X^T = Zn`` for X through the economy SVD of ``KR``.

    The singular values give the exact condition number.  Applying the SVD
    by hand is much cheaper than LAPACK's driver when ``Zn`` has many
    columns, which is the common case here.
    """
    W, s, Vh = np.linalg.svd(KR, full_matrices=False)
    if s[-1] == 0 or s[0] / s[-1] > cond_limit:
        cond = np.inf if s[-1] == 0 else s[0] / s[-1]
        raise IllConditioned(f"Khatri-Rao condition number {cond:.3g}")
    Xt = Vh.conj().T @ ((W.conj().T @ Zn) / s[:, None])
    return Xt.T


def _kr_update(A, B, Zn, cond_limit):
    """Solve ``khatri_rao(A, B) @ X^T = Zn`` without forming the tall product.

    With thin QR factors ``A = Qa Ra`` and ``B = Qb Rb`` the Khatri-Rao
    product equals ``kron(Qa, Qb) @ khatri_rao(Ra, Rb)``.  The Kronecker
    factor has orthonormal columns, so projecting ``Zn`` onto it leaves the
    least-squares solution and the condition number unchanged while the
    remaining SVD is only ``rank(A) rank(B) x K``.
    """
    Qa, Ra = np.linalg.qr(A)
    Qb, Rb = np.linalg.qr(B)
    P = Zn.shape[1]
    Zr = Zn.reshape(A.shape[0], B.shape[0], P)
    T = np.tensordot(Qb.conj(), Zr, axes=(0, 1))           # rb x Ia x P
    T = np.tensordot(Qa.conj(), T, axes=(0, 1))            # ra x rb x P
    return _ls_update(khatri_rao(Ra, Rb), T.reshape(-1, P), cond_limit)


def _complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _dominant_left(A, K):
    if A.shape[0] <= A.shape[1]:
        # eigenvectors of the (small) Gram matrix, largest first
        _, E = np.linalg.eigh(A @ A.conj().T)
        return E[:, ::-1][:, :K]
    Uw, _, _ = np.linalg.svd(A, full_matrices=False)
    return Uw[:, :K]


def _init_random(Z, K, rng):
    M, I, L = Z.shape
    return _complex_normal(rng, (M, K)), _complex_normal(rng, (I, K))


def _init_svd_slices(Z, K, rng):
    M, I, L = Z.shape
    V = _dominant_left(Z.reshape(M, I * L), K)
    C = _dominant_left(np.transpose(Z, (1, 0, 2)).reshape(I, M * L), K)
    # pad when a mode is shorter than K
    if V.shape[1] < K:
        V = np.hstack([V, _complex_normal(rng, (M, K - V.shape[1]))])
    if C.shape[1] < K:
        C = np.hstack([C, _complex_normal(rng, (I, K - C.shape[1]))])
    return V, C


def _init_gevd(Z, K, rng):
    """Direct trilinear decomposition from two random mixtures of the M slices."""
    M, I, L = Z.shape
    if M < 2 or I < K or L < K:
        return _init_random(Z, K, rng)
    Wc = _dominant_left(np.transpose(Z, (1, 0, 2)).reshape(I, M * L), K)
    Wu = _dominant_left(np.transpose(Z, (2, 0, 1)).reshape(L, M * I), K)
    a = _complex_normal(rng, M)
    b = _complex_normal(rng, M)
    S1 = np.tensordot(a, Z, axes=(0, 0))
    S2 = np.tensordot(b, Z, axes=(0, 0))
    T1 = Wc.conj().T @ S1 @ Wu.conj()
    T2 = Wc.conj().T @ S2 @ Wu.conj()
    try:
        _, E = np.linalg.eig(np.linalg.solve(T1.T, T2.T).T)
    except np.linalg.LinAlgError:
        return _init_random(Z, K, rng)
    C = Wc @ E
    if not np.all(np.isfinite(C)):
        return _init_random(Z, K, rng)
    # C^+ Z[m] = diag(V[m]) U^T, so W[:, k, :] is the rank-one V[:, k] U[:, k]^T
    W = np.einsum("ki,mil->kml", np.linalg.pinv(C), Z)
    Uw, s, _ = np.linalg.svd(W, full_matrices=False)
    V = (Uw[:, :, 0] * s[:, :1]).T
    return V, C


_INITS = {"random": _init_random, "svd_slices": _init_svd_slices, "gevd": _init_gevd}


def _als(Z, V, C, opts, max_iters, rel_tol):
    Z1, Z2, Z3 = unfold(Z, 1), unfold(Z, 2), unfold(Z, 3)
    normZ = np.linalg.norm(Z3)
    if normZ == 0:
        raise ValueError("tensor is identically zero")
    cl = opts.cond_limit

    def residual(V, C, U):
        # Expanding |Z - Zhat|^2 through Gram matrices avoids forming Zhat;
        # it cancels badly for small residuals, so those are computed directly.
        KR = khatri_rao(V, C)
        cross = np.real(np.sum((KR.conj().T @ Z3) * U.T.conj()))
        model = np.real(np.sum(((V.conj().T @ V) * (C.conj().T @ C)) * (U.conj().T @ U)))
        r2 = (normZ ** 2 - 2 * cross + model) / normZ ** 2
        if r2 > _FAST_RESIDUAL_MIN ** 2:
            return float(np.sqrt(r2))
        return float(np.linalg.norm(Z3 - KR @ U.T) / normZ)

    U = _kr_update(V, C, Z3, cl)
    history = []
    converged = False
    for it in range(1, max_iters + 1):
        V_old, C_old = V, C
        V = _kr_update(C, U, Z1, cl)
        C = _kr_update(U, V, Z2, cl)
        U = _kr_update(V, C, Z3, cl)
        fit = residual(V, C, U)
        if opts.line_search and it > 2:
            step = it ** (1 / 3)
            Vx = V_old + step * (V - V_old)
            Cx = C_old + step * (C - C_old)
            try:
                Ux = _kr_update(Vx, Cx, Z3, cl)
            except IllConditioned:
                Ux = None
            if Ux is not None:
                fx = residual(Vx, Cx, Ux)
                if fx < fit:
                    V, C, U, fit = Vx, Cx, Ux, fx
        history.append(fit)
        if fit < opts.abs_fit_tol:
            converged = True
            break
        if len(history) > 1:
            prev = history[-2]
            if prev > 0 and abs(prev - fit) / prev < rel_tol:
                converged = True
                break
    return V, C, U, history, converged


def hosvd_compress(Z, ranks):
    """Sequentially truncated HOSVD: bases ``(W1, W2, W3)`` and the core.

    The core is ``Z x1 W1^H x2 W2^H x3 W3^H``; each basis is computed from
    the tensor already projected onto the previous ones.
    """
    M, I, L = Z.shape
    W1 = _dominant_left(Z.reshape(M, I * L), ranks[0])
    T = np.tensordot(W1.conj(), Z, axes=(0, 0))                  # r1 x I x L
    W2 = _dominant_left(np.transpose(T, (1, 0, 2)).reshape(I, -1), ranks[1])
    T = np.tensordot(W2.conj(), T, axes=(0, 1))                  # r2 x r1 x L
    W3 = _dominant_left(T.reshape(-1, L).T, ranks[2])
    core = np.tensordot(T, W3.conj(), axes=(2, 0))               # r2 x r1 x r3
    return np.transpose(core, (1, 0, 2)), (W1, W2, W3)


def _gn_system(T, V, C, U):
    """Gauss-Newton matrix ``J^H J`` and gradient ``J^H r`` of the CP residual.

    The model is holomorphic in the stacked unknowns ``[vec V; vec C; vec U]``
    (row-major), so the complex normal matrix follows from the factor Gram
    matrices without building the Jacobian.
    """
    M, I, L = T.shape
    GV, GC, GU = V.conj().T @ V, C.conj().T @ C, U.conj().T @ U
    R = T - np.einsum("mk,ik,lk->mil", V, C, U)

    def diag_block(n, G):
        return np.kron(np.eye(n), G)

    def cross(A, B, G):
        # H[(a,k),(b,q)] = A[a,q] conj(B[b,k]) G[k,q]
        return np.einsum("aq,bk,kq->akbq", A, B.conj(), G).reshape(
            A.shape[0] * A.shape[1], B.shape[0] * B.shape[1])

    HVC = cross(V, C, GU)
    HVU = cross(V, U, GC)
    HCU = cross(C, U, GV)
    H = np.block([
        [diag_block(M, GC * GU), HVC, HVU],
        [HVC.conj().T, diag_block(I, GV * GU), HCU],
        [HVU.conj().T, HCU.conj().T, diag_block(L, GV * GC)],
    ])
    g = np.concatenate([
        np.einsum("mil,ik,lk->mk", R, C.conj(), U.conj()).ravel(),
        np.einsum("mil,mk,lk->ik", R, V.conj(), U.conj()).ravel(),
        np.einsum("mil,mk,ik->lk", R, V.conj(), C.conj()).ravel(),
    ])
    return H, g, float(np.vdot(R, R).real)


def _lm_refine(T, V, C, U, max_iters=300, rel_tol=1e-14):
    """Levenberg-Marquardt polish of a CP fit on a small tensor.

    ALS can crawl for thousands of sweeps when factor columns are nearly
    collinear; the damped Gauss-Newton step handles those directions jointly.
    Steps are accepted only when they lower the residual, so the result is
    never worse than the input.
    """
    M, I, L = T.shape
    K = V.shape[1]
    splits = np.cumsum([M * K, I * K])

    def unpack(x):
        a, b, c = np.split(x, splits)
        return a.reshape(M, K), b.reshape(I, K), c.reshape(L, K)

    x = np.concatenate([V.ravel(), C.ravel(), U.ravel()])
    H, g, f = _gn_system(T, V, C, U)
    floor = (1e-15 * np.linalg.norm(T)) ** 2
    lam = 1e-3 * float(np.max(np.real(np.diag(H))))
    nu = 2.0
    for _ in range(max_iters):
        if f <= floor:
            break
        A = H + lam * np.eye(H.shape[0])
        try:
            # H is Hermitian PSD and the damping makes A positive definite
            cf = scipy.linalg.cho_factor(A)
        except np.linalg.LinAlgError:
            lam *= nu
            nu *= 2
            continue
        step = scipy.linalg.cho_solve(cf, g)
        xn = x + step
        Hn, gn, fn = _gn_system(T, *unpack(xn))
        predicted = float(np.real(np.vdot(step, g)) + lam * np.vdot(step, step).real)
        if predicted <= rel_tol * f:
            break                  # the local model promises nothing more
        rho = (f - fn) / predicted
        if rho > 0:
            done = (f - fn) <= rel_tol * f
            x, H, g, f = xn, Hn, gn, fn
            lam *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
            nu = 2.0
            if done:
                break
        else:
            lam *= nu
            nu *= 2
    return unpack(x)


def _warm_start(Z, K, init, rng, opts):
    """Initial (V, C) from a converged fit on the compressed core."""
    M, I, L = Z.shape
    ranks = [min(n, 2 * K) for n in (M, I, L)]
    core, (W1, W2, _) = hosvd_compress(Z, ranks)
    V0, C0 = init(core, K, rng)
    V, C, U, _, _ = _als(core, V0, C0, opts, opts.warm_start_iters,
                         min(opts.rel_fit_tol, 1e-13))
    if opts.lm_polish:
        V, C, _ = _lm_refine(core, V, C, U)
    return W1 @ V, W2 @ C


def tals(Z, K, opts=None, rng=None):
    """Fit a K-component PARAFAC model to ``Z`` (SnapshotTensor or ndarray).

    Runs ``opts.restarts`` independent initializations and returns the one
    with the lowest final relative residual ``|Z - Zhat|_F / |Z|_F``.
    Non-convergence is reported through ``converged=False`` and a
    :class:`ConvergenceFailure` warning; it is not an error.
    """
    opts = opts or TalsOptions()
    rng = np.random.default_rng(rng)
    data = Z.data if isinstance(Z, SnapshotTensor) else np.asarray(Z, dtype=complex)
    M, I, L = data.shape
    if K < 1:
        raise ValueError("K must be positive")
    if K > I or K > L:
        raise ValueError(f"K={K} exceeds a factor dimension (6N={I}, L={L})")
    best = None
    last_err = None
    for r in range(opts.restarts):
        mode = opts.init_mode
        if r > 0 and mode == "svd_slices":
            mode = "random"
        try:
            if opts.compressed_warm_start:
                V0, C0 = _warm_start(data, K, _INITS[mode], rng, opts)
            else:
                V0, C0 = _INITS[mode](data, K, rng)
            V, C, U, hist, conv = _als(data, V0, C0, opts, opts.max_iters,
                                       opts.rel_fit_tol)
        except IllConditioned as exc:
            last_err = exc
            continue
        if best is None or hist[-1] < best.fit:
            best = FactorEstimate(V, C, U, hist, conv, r)
        if hist[-1] < opts.abs_fit_tol:
            break
    if best is None:
        raise last_err
    if opts.trace_path:
        with open(opts.trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "fit"])
            for i, f in enumerate(best.fit_history, 1):
                w.writerow([i, repr(f)])
    if not best.converged:
        warnings.warn(f"TALS stopped after {opts.max_iters} iterations "
                      f"(fit {best.fit:.3g})", ConvergenceFailure, stacklevel=2)
    if opts.check_kruskal and K > 1:   # a rank-one model is always unique
        kr = (kruskal_rank(best.Vt_hat) + kruskal_rank(best.Cr_hat)
              + kruskal_rank(best.U_hat))
        if kr < 2 * K + 2:
            warnings.warn(f"Kruskal condition violated: {kr} < {2 * K + 2}",
                          KruskalWarning, stacklevel=2)
    return best


def kruskal_rank(A, tol=1e-8):
    """Largest r such that every r columns of A are linearly independent.

    Exhaustive over column subsets; intended for K up to a dozen or so.
    """
    A = np.asarray(A)
    A = A / np.maximum(np.linalg.norm(A, axis=0), 1e-300)
    n_rows, K = A.shape
    for r in range(min(n_rows, K), 0, -1):
        subsets = np.array(list(itertools.combinations(range(K), r)))
        blocks = np.transpose(A[:, subsets], (1, 0, 2))
        s = np.linalg.svd(blocks, compute_uv=False)
        if np.all(s[:, -1] > tol * s[:, 0]):
            return r
    return 0


def congruence(A, B):
    """Matrix of |<a_i, b_j>| / (|a_i| |b_j|) between the columns of A and B."""
    An = A / np.linalg.norm(A, axis=0)
    Bn = B / np.linalg.norm(B, axis=0)
    return np.abs(An.conj().T @ Bn)


def align_factors(est, truth):
    """Resolve permutation and scaling of an estimate against reference factors.

    ``est`` and ``truth`` are (V, C, U) triples.  Returns the column
    permutation ``perm`` (estimate column ``perm[k]`` matches truth column
    ``k``), per-factor scalings ``lams`` (three length-K arrays with
    ``est[:, perm] = truth * lam``) and the per-column minimum congruence.
    """
    from scipy.optimize import linear_sum_assignment

    score = np.ones((truth[0].shape[1], est[0].shape[1]))
    for e, t in zip(est, truth):
        score = score * congruence(t, e)
    _, perm = linear_sum_assignment(-score)
    lams, congs = [], []
    for e, t in zip(est, truth):
        ep = e[:, perm]
        lam = np.sum(t.conj() * ep, axis=0) / np.sum(np.abs(t) ** 2, axis=0)
        lams.append(lam)
        congs.append(np.diag(congruence(t, ep)))
    return perm, lams, np.min(congs, axis=0)
