"""Deterministic Cramer-Rao bound for the 6K target parameters.

Parameter order is ``[theta_t, theta_r, phi_t, phi_r, zeta, rho]``, each a
block of K entries.  The reflection coefficients are deterministic nuisance
parameters; projecting the derivatives onto the orthogonal complement of
``F = V_t kr A_r kr B`` removes them, giving

    FIM = (2L / sigma^2) Re[(Ft^H P Ft) o (1_6x6 kron R_U)],

where ``Ft`` holds the derivative columns grouped by parameter type and
``R_U[k, k'] = (1/L) sum_l conj(u_k(l)) u_k'(l)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import SingularFimWarning
from .signal_model import (SceneConfig, _direction_matrices, _polarization_vectors,
                           draw_reflections, ris_channel, ris_offsets, target_arrays)
from .tensor import khatri_rao

_RANK_TOL = 1e-10
PARAMETER_GROUPS = ("theta_t", "theta_r", "phi_t", "phi_r", "zeta", "rho")

__all__ = ["PARAMETER_GROUPS", "JacobianStack", "CrbResult", "build_jacobians",
           "compute_crb", "orthogonal_projector", "response_matrix"]


@dataclass
class JacobianStack:
    F: np.ndarray         # 6MN x K
    F_tilde: np.ndarray   # 6MN x 6K, grouped by PARAMETER_GROUPS

    def block(self, name):
        K = self.F.shape[1]
        i = PARAMETER_GROUPS.index(name)
        return self.F_tilde[:, i * K:(i + 1) * K]


@dataclass
class CrbResult:
    fim: np.ndarray
    crb: np.ndarray
    singular: bool = False

    @property
    def K(self):
        return self.fim.shape[0] // 6

    @property
    def per_parameter_bounds(self):
        """Dict of group name -> length-K diagonal entries (rad^2)."""
        d = np.diag(self.crb)
        K = self.K
        return {g: d[i * K:(i + 1) * K] for i, g in enumerate(PARAMETER_GROUPS)}


def _direction_derivatives(theta, phi):
    """d q / d theta and d q / d phi for ``q = [ct sp, st sp, cp]`` (3 x K each)."""
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    dq_dt = np.stack([-st * sp, ct * sp, np.zeros_like(ct)])
    dq_dp = np.stack([ct * cp, st * cp, -sp])
    return dq_dt, dq_dp


def _emvs_derivatives(theta, phi):
    """d V / d theta and d V / d phi, each K x 6 x 2."""
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    z = np.zeros_like(ct)
    dt1 = np.stack([-st * cp, ct * cp, z, -ct, -st, z], axis=-1)
    dt2 = np.stack([-ct, -st, z, st * cp, -ct * cp, z], axis=-1)
    dp1 = np.stack([-ct * sp, -st * sp, -cp, z, z, z], axis=-1)
    dp2 = np.stack([z, z, z, ct * sp, st * sp, cp], axis=-1)
    return np.stack([dt1, dt2], axis=-1), np.stack([dp1, dp2], axis=-1)


def _scene_parts(geometry, w, targets):
    tt, pt, tr, pr, zeta, rho = target_arrays(targets)
    lam = geometry.wavelength
    k0 = 2j * np.pi / lam
    GW = ris_channel(geometry) * np.asarray(w)[None, :]
    off = ris_offsets(geometry)
    qt = np.stack([np.cos(tt) * np.sin(pt), np.sin(tt) * np.sin(pt), np.cos(pt)])
    qr = np.stack([np.cos(tr) * np.sin(pr), np.sin(tr) * np.sin(pr), np.cos(pr)])
    At = np.exp(-k0 * (off @ qt))
    Ar = np.exp(-k0 * (geometry.rx @ qr))
    Vd = _direction_matrices(tr, pr)            # K x 6 x 2
    g = _polarization_vectors(zeta, rho)        # K x 2
    B = np.einsum("kij,kj->ik", Vd, g)
    return dict(tt=tt, pt=pt, tr=tr, pr=pr, zeta=zeta, rho=rho, k0=k0, GW=GW,
                off=off, At=At, Ar=Ar, Vd=Vd, g=g, B=B)


def response_matrix(geometry, w, targets):
    """``F = V_t kr A_r kr B`` (6MN x K) for explicit targets."""
    s = _scene_parts(geometry, w, targets)
    return khatri_rao(s["GW"] @ s["At"], khatri_rao(s["Ar"], s["B"]))


def build_jacobians(scene: SceneConfig) -> JacobianStack:
    """Analytic derivative columns ``d f_k / d Theta_k`` for every group."""
    s = _scene_parts(scene.geometry, scene.ris_phases, scene.targets)
    k0, GW = s["k0"], s["GW"]
    Vt = GW @ s["At"]
    Ar, B = s["Ar"], s["B"]

    dqt_t, dqt_p = _direction_derivatives(s["tt"], s["pt"])
    dqr_t, dqr_p = _direction_derivatives(s["tr"], s["pr"])
    dVt_t = GW @ (-k0 * (s["off"] @ dqt_t) * s["At"])
    dVt_p = GW @ (-k0 * (s["off"] @ dqt_p) * s["At"])
    rx = scene.geometry.rx
    dAr_t = -k0 * (rx @ dqr_t) * Ar
    dAr_p = -k0 * (rx @ dqr_p) * Ar

    dV_t, dV_p = _emvs_derivatives(s["tr"], s["pr"])
    g = s["g"]
    dB_t = np.einsum("kij,kj->ik", dV_t, g)
    dB_p = np.einsum("kij,kj->ik", dV_p, g)
    zeta, rho = s["zeta"], s["rho"]
    dg_z = np.stack([np.cos(zeta) * np.exp(1j * rho), -np.sin(zeta) + 0j], axis=-1)
    dg_r = np.stack([1j * np.sin(zeta) * np.exp(1j * rho), 0j * zeta], axis=-1)
    dB_z = np.einsum("kij,kj->ik", s["Vd"], dg_z)
    dB_r = np.einsum("kij,kj->ik", s["Vd"], dg_r)

    def f(V, A, Bm):
        return khatri_rao(V, khatri_rao(A, Bm))

    F = f(Vt, Ar, B)
    blocks = [
        f(dVt_t, Ar, B),                       # theta_t
        f(Vt, dAr_t, B) + f(Vt, Ar, dB_t),     # theta_r
        f(dVt_p, Ar, B),                       # phi_t
        f(Vt, dAr_p, B) + f(Vt, Ar, dB_p),     # phi_r
        f(Vt, Ar, dB_z),                       # zeta
        f(Vt, Ar, dB_r),                       # rho
    ]
    return JacobianStack(F=F, F_tilde=np.hstack(blocks))


def orthogonal_projector(F):
    """``I - F (F^H F)^-1 F^H`` built from an orthonormal basis of range(F)."""
    Qm, _ = np.linalg.qr(F, mode="reduced")
    return np.eye(F.shape[0]) - Qm @ Qm.conj().T


def compute_crb(scene: SceneConfig, sigma2, U=None, jac=None, cond_limit=1e12):
    """CRB matrix for the scene's targets at noise variance ``sigma2``.

    ``U`` is the K x L reflection matrix of the realization the bound is
    conditioned on; by default it is redrawn from the scene seed exactly as
    :func:`synthesize` does.  When the FIM condition number exceeds
    ``cond_limit`` a :class:`SingularFimWarning` is issued and the
    pseudo-inverse is returned with ``singular=True``.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    jac = jac or build_jacobians(scene)
    if U is None:
        U = draw_reflections(scene)
    U = np.asarray(U)
    K, L = U.shape
    RU = np.conj(U) @ U.T / L                  # R_U[k, k'] = mean conj(u_k) u_k'
    Ft = jac.F_tilde
    # F^H P F' = F^H F' - (Q^H F)^H (Q^H F') with Q an orthonormal basis of range(F)
    W, s, _ = np.linalg.svd(jac.F, full_matrices=False)
    rank = int(np.sum(s > _RANK_TOL * s[0]))
    QF = W[:, :rank].conj().T @ Ft
    Gm = Ft.conj().T @ Ft - QF.conj().T @ QF
    fim = (2 * L / sigma2) * np.real(Gm * np.kron(np.ones((6, 6)), RU))
    fim = 0.5 * (fim + fim.T)
    ev = np.linalg.eigvalsh(fim)
    cond = np.inf if ev[0] <= 0 else ev[-1] / ev[0]
    if cond > cond_limit or rank < K:
        why = (f"response matrix rank {rank} < {K}" if rank < K
               else f"FIM condition number {cond:.3g}")
        warnings.warn(f"{why}; reporting pseudo-inverse", SingularFimWarning, stacklevel=2)
        crb = np.linalg.pinv(fim, hermitian=True)
        return CrbResult(fim=fim, crb=0.5 * (crb + crb.T), singular=True)
    crb = np.linalg.inv(fim)
    return CrbResult(fim=fim, crb=0.5 * (crb + crb.T))
