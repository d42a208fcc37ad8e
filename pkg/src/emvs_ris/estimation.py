"""Parameter recovery from the PARAFAC factors.

Pipeline per target column k of the factors:

1. DOD from ``Vt_hat`` through the known ``G diag(w)``.
2. Coarse DOA from the electric/magnetic cross product of the EMVS block.
3. Refined DOA: wrapped inter-element phases are unwrapped using the coarse
   direction as a predictor, then fitted by least squares over the whole
   receive aperture.
4. Polarization from the refined steering and the EMVS block.

Column order is never changed, so the four parameter groups stay paired.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (DegeneratePolarization, DomainClamp, RankDeficiency,
                     RoundingInstability)
from .signal_model import (Angles, ArrayGeometry, Polarization, _direction_matrices,
                           cross_product_direction, receive_steering, ris_offsets)

NORMALIZE_TOL = 1e-8
ROUNDING_MARGIN = 0.4


@dataclass
class TargetEstimate:
    dod: Angles
    doa_coarse: Angles
    doa_refined: Angles
    pol: Polarization
    column_index: int
    pol_phase_defined: bool = True


@dataclass
class PhaseMatrixSet:
    """Wrapped, predicted, integer and unwrapped receive phases (N x K each)."""
    T_hat_prime: np.ndarray
    T_hat: np.ndarray
    R_hat: np.ndarray
    T_bar: np.ndarray


def _angles_from_direction(Qd, what):
    """Azimuth via atan2, elevation via arcsin of the horizontal magnitude."""
    Qd = np.asarray(Qd, dtype=float)
    theta = np.arctan2(Qd[1], Qd[0])
    s = np.hypot(Qd[0], Qd[1])
    if np.any(s > 1.0):
        warnings.warn(f"{what}: arcsin argument {s.max():.6f} clamped to 1",
                      DomainClamp, stacklevel=3)
    phi = np.arcsin(np.clip(s, 0.0, 1.0))
    return [Angles(float(t), float(p)) for t, p in zip(theta, phi)]


def normalize_receive_factor(Cr_hat):
    """Scale each column so its (element 1, component 6) entry equals 1.

    With the first receive element at the origin that entry is
    ``sin(phi_r) cos(zeta)``, real and non-negative, so the division removes
    the PARAFAC scaling without disturbing any steering phase.
    """
    Cr = np.asarray(Cr_hat, dtype=complex)
    ref = Cr[5, :]
    norms = np.linalg.norm(Cr, axis=0)
    bad = np.abs(ref) <= NORMALIZE_TOL * norms
    if np.any(bad):
        raise DegeneratePolarization(
            f"columns {np.flatnonzero(bad).tolist()} have a vanishing "
            "reference entry (elevation near 0 or zeta near pi/2)")
    return Cr / ref


def dod_direction_matrix(Vt_hat, G, w, geometry: ArrayGeometry):
    """Least-squares DOD direction matrix (3 x K) and the normalized A_t estimate."""
    GW = np.asarray(G) * np.asarray(w)[None, :]
    M, Q = GW.shape
    if Q > M:
        raise RankDeficiency(f"G diag(w) is {M}x{Q}; need Q <= M")
    s = np.linalg.svd(GW, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > 1e10:
        raise RankDeficiency("G diag(w) is numerically rank deficient")
    At = np.linalg.lstsq(GW, np.asarray(Vt_hat, dtype=complex), rcond=None)[0]
    first = At[0, :]
    if np.any(first == 0):
        raise RankDeficiency("reference entry of an A_t column is zero")
    At = At / first
    # A_t = exp(-j 2 pi Omega / lambda)
    Omega = -np.angle(At) * geometry.wavelength / (2 * np.pi)
    Qt = np.linalg.pinv(ris_offsets(geometry)) @ Omega
    return Qt, At


def estimate_dod(Vt_hat, G, w, geometry: ArrayGeometry):
    """2-D DOD (azimuth, elevation) for every column of ``Vt_hat``."""
    Qt, _ = dod_direction_matrix(Vt_hat, G, w, geometry)
    return _angles_from_direction(Qt, "DOD")


def _emvs_blocks(Cr_norm):
    """Reshape 6N x K into K x N x 6 (receive element, EMVS component)."""
    Cr = np.asarray(Cr_norm, dtype=complex)
    sixN, K = Cr.shape
    return Cr.T.reshape(K, sixN // 6, 6)


def emvs_component_ratios(Cr_norm):
    """Least-squares component ratios per column, shape 6 x K.

    For each column, ``H_ref c * r_q = H_q c`` is solved for ``r_q`` over all
    receive elements; the reference component is the one carrying the most
    energy, which avoids dividing by a vanishing component.
    """
    X = _emvs_blocks(Cr_norm)
    energy = np.sum(np.abs(X) ** 2, axis=1)        # K x 6
    ref = np.argmax(energy, axis=1)
    K = X.shape[0]
    xr = X[np.arange(K), :, ref]                    # K x N
    num = np.einsum("kn,knq->kq", xr.conj(), X)
    return (num / np.sum(np.abs(xr) ** 2, axis=1, keepdims=True)).T


def coarse_doa(Cr_norm):
    """Vector cross-product DOA. Returns (list of Angles, Q_r estimate 3 x K)."""
    ratios = emvs_component_ratios(Cr_norm)
    K = ratios.shape[1]
    Qr = np.empty((3, K))
    for k in range(K):
        q = cross_product_direction(ratios[:3, k], ratios[3:, k])
        Qr[:, k] = q.real
    return _angles_from_direction(Qr, "coarse DOA"), Qr


def refine_doa(Cr_norm, Qr_coarse, geometry: ArrayGeometry, disambiguate=True):
    """Phase-disambiguated DOA over an arbitrary receive geometry.

    Sign convention: steering entries are ``exp(-j psi)``, so the measured
    wrapped phase is ``-angle(D')`` and the predicted phase is
    ``2 pi / lambda * P^r q``.  The integer correction is
    ``round((predicted - measured) / 2 pi)``.  ``disambiguate=False`` forces
    the correction to zero (raw wrapped least squares).

    Returns (list of Angles, PhaseMatrixSet, refined direction matrix 3 x K).
    """
    Cr = np.asarray(Cr_norm, dtype=complex)
    lam = geometry.wavelength
    D = Cr[5::6, :]
    T_prime = -np.angle(D)
    T_prime[T_prime <= -np.pi] += 2 * np.pi
    T_hat = (2 * np.pi / lam) * geometry.rx @ np.asarray(Qr_coarse, dtype=float)
    frac = (T_hat - T_prime) / (2 * np.pi)
    R = np.rint(frac) if disambiguate else np.zeros_like(frac)
    if disambiguate and np.any(np.abs(frac - R) > ROUNDING_MARGIN):
        warnings.warn("phase-wrap rounding within 0.1 of a half-integer",
                      RoundingInstability, stacklevel=2)
    T_bar = T_prime + 2 * np.pi * R
    Qr = (lam / (2 * np.pi)) * np.linalg.pinv(geometry.rx) @ T_bar
    phases = PhaseMatrixSet(T_prime, T_hat, R.astype(int), T_bar)
    return _angles_from_direction(Qr, "refined DOA"), phases, Qr


def estimate_polarization(Cr_norm, refined, geometry: ArrayGeometry):
    """Polarization (zeta, rho) per column from the refined DOA.

    Returns ``(pols, phase_defined)``; ``phase_defined[k]`` is False when one
    polarization component vanishes and rho carries no information (it is
    then reported as 0).
    """
    Cr = np.asarray(Cr_norm, dtype=complex)
    Ar, _ = receive_steering(geometry, refined)
    block = Cr[:6, :] / Ar[0, :]
    theta = np.array([a.azimuth for a in refined])
    phi = np.array([a.elevation for a in refined])
    Vbar = _direction_matrices(theta, phi)
    pols, defined = [], []
    for k in range(Cr.shape[1]):
        g = np.linalg.lstsq(Vbar[k], block[:, k], rcond=None)[0]
        scale = np.linalg.norm(g)
        if scale == 0:
            raise DegeneratePolarization(f"column {k}: zero polarization vector")
        if abs(g[1]) < 1e-10 * scale:
            pols.append(Polarization(math.pi / 2, 0.0))
            defined.append(False)
            continue
        ratio = g[0] / g[1]
        zeta = math.atan(abs(ratio))
        ok = abs(g[0]) >= 1e-10 * scale
        pols.append(Polarization(zeta, float(np.angle(ratio)) if ok else 0.0))
        defined.append(bool(ok))
    return pols, defined


def estimate_targets(est, G, w, geometry: ArrayGeometry, disambiguate=True):
    """Run all four estimators on a FactorEstimate; returns (targets, phases)."""
    Cr_norm = normalize_receive_factor(est.Cr_hat)
    dods = estimate_dod(est.Vt_hat, G, w, geometry)
    coarse, Qc = coarse_doa(Cr_norm)
    refined, phases, _ = refine_doa(Cr_norm, Qc, geometry, disambiguate)
    pols, defined = estimate_polarization(Cr_norm, refined, geometry)
    out = [TargetEstimate(d, c, r, p, k, ok) for k, (d, c, r, p, ok)
           in enumerate(zip(dods, coarse, refined, pols, defined))]
    return out, phases


# ---------------------------------------------------------------------------
# scoring helpers


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)


def _pair_cost(e: TargetEstimate, t):
    return (wrap_angle(e.dod.azimuth - t.dod.azimuth) ** 2
            + (e.dod.elevation - t.dod.elevation) ** 2
            + wrap_angle(e.doa_refined.azimuth - t.doa.azimuth) ** 2
            + (e.doa_refined.elevation - t.doa.elevation) ** 2)


def match_to_truth(estimates, truth, exhaustive_limit=8):
    """Permutation ``perm`` with ``estimates[perm[k]]`` matched to ``truth[k]``.

    Minimizes the summed squared DOD/DOA angle errors.  Exhaustive search up
    to ``exhaustive_limit`` targets, Hungarian assignment beyond (the cost is
    separable, so both are exact).
    """
    K = len(truth)
    if len(estimates) != K:
        raise ValueError("estimate and truth lists differ in length")
    cost = np.array([[_pair_cost(e, t) for e in estimates] for t in truth])
    if K <= exhaustive_limit:
        best, best_perm = np.inf, None
        for perm in itertools.permutations(range(K)):
            c = cost[np.arange(K), perm].sum()
            if c < best:
                best, best_perm = c, perm
        return list(best_perm)
    from scipy.optimize import linear_sum_assignment
    _, cols = linear_sum_assignment(cost)
    return [int(c) for c in cols]
