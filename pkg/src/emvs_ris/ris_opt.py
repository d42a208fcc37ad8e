"""RIS phase design by semidefinite relaxation.

The received signal power for RIS phases ``w`` is the quadratic form
``w^H Phi w = ||[G diag(w) A_t kr C] U^T||_F^2``.  Maximizing it over
unit-modulus ``w`` is relaxed to

    maximize tr(Phi X)  subject to  diag(X) = 1,  X >= 0,

which is solved by a primal-dual interior-point method written for this
constraint structure.  A unit-modulus vector is then pulled out of ``X`` by
Gaussian randomization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import SolverStall

__all__ = ["QuadraticForm", "SdpOptions", "SdpSolution", "build_phi",
           "solve_sdp", "randomize", "optimize_phases", "received_power"]


@dataclass(frozen=True)
class QuadraticForm:
    Phi: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.Phi, dtype=complex)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("Phi must be square")
        scale = max(np.abs(P).max(), 1e-300)
        if np.abs(P - P.conj().T).max() > 1e-12 * max(scale, 1.0):
            raise ValueError("Phi is not Hermitian")
        if np.linalg.eigvalsh(0.5 * (P + P.conj().T))[0] < -1e-10 * np.linalg.norm(P, 2):
            raise ValueError("Phi is not positive semidefinite")
        object.__setattr__(self, "Phi", P)

    @property
    def Q(self):
        return self.Phi.shape[0]

    def value(self, w):
        """``w^H Phi w`` for one vector or for each column of a Q x n array."""
        w = np.asarray(w, dtype=complex)
        return np.real(np.sum(w.conj() * (self.Phi @ w), axis=0))


@dataclass
class SdpOptions:
    gap_tol: float = 1e-9
    max_iters: int = 200
    stall_window: int = 50
    draws: int = 200
    step_fraction: float = 0.95


@dataclass
class SdpSolution:
    X: np.ndarray
    objective: float
    dual_objective: float
    iterations: int
    converged: bool
    rank_numeric: int = 0
    w_extracted: np.ndarray | None = None
    extracted_objective: float = float("nan")
    randomization_draws: int = 0

    @property
    def gap(self):
        return self.dual_objective - self.objective


def build_phi(U, C, G, At, *, gram=False):
    """Quadratic form of the received power in the RIS phases.

    Parameters
    ----------
    U : ndarray
        Reflection-coefficient factor, L x K (as returned by the PARAFAC
        fit), or its K x K Gram ``U^H U`` when ``gram=True``.
    C : ndarray
        Receive factor ``A_r kr B``, 6N x K.
    G : ndarray
        Transmit-to-RIS channel, M x Q.
    At : ndarray
        RIS steering matrix, Q x K.

    Returns
    -------
    QuadraticForm
        ``Phi = sum_ij [U^H U]_ij [C^H C]_ij (G^H G o conj(a_i) a_j^T)``,
        assembled as ``(G^H G) o (conj(At) W At^T)`` with
        ``W = (U^H U) o (C^H C)``.
    """
    U = np.asarray(U, dtype=complex)
    C = np.asarray(C, dtype=complex)
    G = np.asarray(G, dtype=complex)
    At = np.asarray(At, dtype=complex)
    K = C.shape[1]
    RU = U if gram else U.conj().T @ U
    if RU.shape != (K, K):
        raise ValueError(f"U gives a {RU.shape} Gram, expected {(K, K)}")
    if At.shape != (G.shape[1], K):
        raise ValueError(f"At must be {G.shape[1]}x{K}, got {At.shape}")
    W = RU * (C.conj().T @ C)
    Phi = (G.conj().T @ G) * (At.conj() @ W @ At.T)
    return QuadraticForm(0.5 * (Phi + Phi.conj().T))


def received_power(w, U, C, G, At):
    """Direct evaluation of ``||[G diag(w) At kr C] U^T||_F^2``."""
    from .tensor import khatri_rao

    Vt = (np.asarray(G) * np.asarray(w)[None, :]) @ np.asarray(At)
    return float(np.linalg.norm(khatri_rao(Vt, C) @ np.asarray(U).T) ** 2)


def _max_step(S, dS, frac):
    """Largest ``a <= 1`` keeping ``S + a dS`` positive definite, damped by ``frac``."""
    L = np.linalg.cholesky(S)
    Li = np.linalg.inv(L)
    M = Li @ dS @ Li.conj().T
    lmin = np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0]
    if lmin >= 0:
        return 1.0
    return min(1.0, -frac / lmin)


def solve_sdp(phi, opts=None):
    """Solve ``max tr(Phi X) s.t. diag(X) = 1, X psd``.

    Primal-dual path following on the pair ``X`` and ``Z = Diag(y) - Phi``.
    Each Newton step reduces to a Q x Q real system
    ``Re(X o conj(Z^-1)) dy = mu Re diag(Z^-1) - 1``.  The duality gap
    ``1^T y - tr(Phi X) = tr(X Z)`` is the stopping measure.

    Returns an :class:`SdpSolution` without extraction fields.  A stall
    (no gap reduction over ``opts.stall_window`` iterations) or running out
    of iterations emits :class:`SolverStall` and returns the best iterate.
    """
    opts = opts or SdpOptions()
    Phi = phi.Phi if isinstance(phi, QuadraticForm) else np.asarray(phi, dtype=complex)
    Q = Phi.shape[0]
    scale = max(np.linalg.norm(Phi), 1e-300)
    # strictly feasible start: X = I and a diagonally dominant Z
    X = np.eye(Q, dtype=complex)
    y = np.sum(np.abs(Phi), axis=1) + scale / Q
    one = np.ones(Q)

    def primal(X):
        return float(np.real(np.sum(Phi.conj() * X)))

    best = None
    best_gap = np.inf
    last_improve = 0
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        Z = np.diag(y).astype(complex) - Phi
        gap = float(np.real(np.sum(X.conj() * Z)))
        obj = primal(X)
        if gap < best_gap * (1 - 1e-3):
            last_improve = it
        if gap < best_gap:
            best_gap = gap
            best = (X.copy(), y.copy())
        if gap <= opts.gap_tol * (1 + abs(obj)):
            converged = True
            break
        if it - last_improve > opts.stall_window:
            break
        mu = gap / Q
        for sigma in (0.1, 0.5):
            Zi = np.linalg.inv(Z)
            Zi = 0.5 * (Zi + Zi.conj().T)
            H = np.real(X * Zi.conj())
            rhs = sigma * mu * np.real(np.diag(Zi)) - one
            try:
                dy = np.linalg.solve(H, rhs)
            except np.linalg.LinAlgError:
                continue
            dX = sigma * mu * Zi - X - Zi @ (dy[:, None] * X)
            dX = 0.5 * (dX + dX.conj().T)
            try:
                ap = _max_step(X, dX, opts.step_fraction)
                ad = _max_step(Z, np.diag(dy).astype(complex), opts.step_fraction)
            except np.linalg.LinAlgError:
                continue
            if min(ap, ad) > 1e-8:
                break
        else:
            break
        X = X + ap * dX
        X = 0.5 * (X + X.conj().T)
        y = y + ad * dy
    X, y = best
    # remove the last rounding drift from the constraint
    d = np.sqrt(np.real(np.diag(X)))
    X = X / np.outer(d, d)
    X = 0.5 * (X + X.conj().T)
    if not converged:
        warnings.warn(f"SDP stopped after {it} iterations with gap {best_gap:.3g}",
                      SolverStall, stacklevel=2)
    ev = np.linalg.eigvalsh(X)
    rank = int(np.sum(ev > 1e-8 * ev[-1]))
    return SdpSolution(X=X, objective=primal(X), dual_objective=float(one @ y),
                       iterations=it, converged=converged, rank_numeric=rank)


def _psd_sqrt(X):
    """``V`` with ``X = V^H V`` from a clipped eigendecomposition."""
    ev, E = np.linalg.eigh(0.5 * (X + X.conj().T))
    # rank-revealing: rounding-level eigenvalues would otherwise leak
    # square-root-sized noise into the samples
    ev[ev < 1e-12 * max(ev[-1], 0.0)] = 0.0
    return np.sqrt(ev)[:, None] * E.conj().T


def randomize(X, phi, draws=200, rng=None):
    """Gaussian randomization: best of ``draws`` phase-projected samples.

    Returns ``(w, objective)`` with ``|w_q| = 1`` exactly.
    """
    if draws < 1:
        raise ValueError("draws must be positive")
    rng = np.random.default_rng(rng)
    form = phi if isinstance(phi, QuadraticForm) else QuadraticForm(phi)
    V = _psd_sqrt(np.asarray(X, dtype=complex))
    Q = V.shape[0]
    z = (rng.standard_normal((Q, draws)) + 1j * rng.standard_normal((Q, draws))) / np.sqrt(2)
    W = np.exp(1j * np.angle(V.conj().T @ z))
    vals = form.value(W)
    best = int(np.argmax(vals))
    return W[:, best], float(vals[best])


def optimize_phases(U, C, G, At, w_init=None, opts=None, rng=None, *, gram=False):
    """Build ``Phi``, solve the relaxation and extract unit-modulus phases.

    ``U``, ``C`` and ``At`` are normally estimates from a first pass run
    with ``w_init``.  The initial phases are kept when randomization does
    not beat them, so the returned power never drops below the starting one.

    Returns ``(w, SdpSolution)``.
    """
    opts = opts or SdpOptions()
    form = build_phi(U, C, G, At, gram=gram)
    sol = solve_sdp(form, opts)
    w, val = randomize(sol.X, form, opts.draws, rng)
    if w_init is not None:
        w0 = np.exp(1j * np.angle(np.asarray(w_init, dtype=complex)))
        v0 = float(form.value(w0))
        if v0 > val:
            w, val = w0, v0
    sol.w_extracted = w
    sol.extracted_objective = val
    sol.randomization_draws = opts.draws
    return w, sol
