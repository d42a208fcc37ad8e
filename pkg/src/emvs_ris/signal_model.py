"""EMVS responses, RIS channel, steering matrices and snapshot synthesis.

Angles are radians throughout; degrees only appear in scene files and
reports.  Steering entries use the ``exp(-j 2 pi d / lambda)`` convention.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (DegenerateField, IdentifiabilityViolation,
                     RankDeficiencyWarning)
from .tensor import fold, khatri_rao, unfold

FIELD_TOL = 1e-12
RANK_TOL = 1e-10
_RANGE_SLACK = 1e-12


def _check_range(x, lo, hi, name):
    if not (lo - _RANGE_SLACK <= x <= hi + _RANGE_SLACK):
        raise ValueError(f"{name} {x!r} outside [{lo:.6g}, {hi:.6g}] rad")


@dataclass(frozen=True)
class Angles:
    """Azimuth in (-pi, pi], elevation in [0, pi]."""
    azimuth: float
    elevation: float

    def __post_init__(self):
        _check_range(self.azimuth, -math.pi, math.pi, "azimuth")
        _check_range(self.elevation, 0.0, math.pi, "elevation")

    @classmethod
    def from_degrees(cls, azimuth, elevation):
        return cls(math.radians(azimuth), math.radians(elevation))

    def degrees(self):
        return math.degrees(self.azimuth), math.degrees(self.elevation)


@dataclass(frozen=True)
class Polarization:
    """Auxiliary angle zeta in [0, pi/2] and phase difference rho in (-pi, pi]."""
    aux: float
    phase: float

    def __post_init__(self):
        _check_range(self.aux, 0.0, math.pi / 2, "polarization auxiliary angle")
        _check_range(self.phase, -math.pi, math.pi, "polarization phase")

    @classmethod
    def from_degrees(cls, aux, phase):
        return cls(math.radians(aux), math.radians(phase))

    def degrees(self):
        return math.degrees(self.aux), math.degrees(self.phase)


@dataclass(frozen=True)
class Target:
    dod: Angles
    doa: Angles
    pol: Polarization

    @classmethod
    def from_degrees(cls, dod, doa, pol):
        return cls(Angles.from_degrees(*dod), Angles.from_degrees(*doa),
                   Polarization.from_degrees(*pol))


def _check_positions(P, name):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] < 1:
        raise ValueError(f"{name} positions must be an (n, 3) array, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError(f"{name} positions must be finite")
    if P.shape[0] > 1:
        d = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
        d[np.diag_indices_from(d)] = np.inf
        if d.min() <= 1e-12:
            raise ValueError(f"two {name} elements coincide")
    return P


@dataclass
class ArrayGeometry:
    """Element positions in meters: transmit (M x 3), receive (N x 3), RIS (Q x 3)."""
    tx: np.ndarray
    rx: np.ndarray
    ris: np.ndarray
    wavelength: float

    def __post_init__(self):
        self.tx = _check_positions(self.tx, "transmit")
        self.rx = _check_positions(self.rx, "receive")
        self.ris = _check_positions(self.ris, "RIS")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")

    @property
    def M(self):
        return self.tx.shape[0]

    @property
    def N(self):
        return self.rx.shape[0]

    @property
    def Q(self):
        return self.ris.shape[0]


@dataclass
class SceneConfig:
    """Ground truth for one synthetic observation.

    ``snr_db = inf`` disables noise.  ``noise_var``, when set, fixes the noise
    variance directly and ``snr_db`` is ignored; this is how matched
    comparisons hold the noise floor constant while the RIS phases change.
    """
    geometry: ArrayGeometry
    targets: list
    ris_phases: np.ndarray
    snapshots: int
    snr_db: float = math.inf
    rng_seed: int = 0
    noise_var: float | None = None

    def __post_init__(self):
        self.targets = list(self.targets)
        self.ris_phases = np.asarray(self.ris_phases, dtype=complex).ravel()
        if self.ris_phases.shape[0] != self.geometry.Q:
            raise ValueError("ris_phases length must equal the number of RIS elements")
        if not np.allclose(np.abs(self.ris_phases), 1.0, atol=1e-9):
            raise ValueError("RIS phases must be unit modulus")
        if int(self.snapshots) < 1:
            raise ValueError("snapshots must be positive")
        self.snapshots = int(self.snapshots)
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @property
    def K(self):
        return len(self.targets)


@dataclass
class SnapshotTensor:
    """The M x 6N x L observation tensor."""
    data: np.ndarray
    K: int
    noise_var: float = 0.0
    signal_power: float = field(default=0.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 3 or self.data.shape[1] % 6:
            raise ValueError("data must have shape (M, 6N, L)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("tensor entries must be finite")

    @property
    def M(self):
        return self.data.shape[0]

    @property
    def N(self):
        return self.data.shape[1] // 6

    @property
    def L(self):
        return self.data.shape[2]

    def unfold(self, mode):
        return unfold(self.data, mode)

    @classmethod
    def fold(cls, Zn, mode, M, N, L, K):
        return cls(fold(Zn, mode, (M, 6 * N, L)), K)


# ---------------------------------------------------------------------------
# EMVS response


def _direction_matrices(theta, phi):
    """Stack of 6x2 direction matrices, shape (..., 6, 2), real."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    z = np.zeros_like(ct * cp)
    col1 = np.stack([ct * cp, st * cp, -sp + z, -st + z, ct + z, z], axis=-1)
    col2 = np.stack([-st + z, ct + z, z, -ct * cp, -st * cp, sp + z], axis=-1)
    return np.stack([col1, col2], axis=-1)


def _polarization_vectors(zeta, rho):
    zeta = np.asarray(zeta, dtype=float)
    rho = np.asarray(rho, dtype=float)
    return np.stack([np.sin(zeta) * np.exp(1j * rho),
                     np.cos(zeta) + 0j * rho], axis=-1)


def emvs_direction_matrix(a: Angles) -> np.ndarray:
    """6x2 direction-dependent matrix of an ideal EMVS."""
    return _direction_matrices(a.azimuth, a.elevation).astype(complex)


def polarization_vector(p: Polarization) -> np.ndarray:
    """``[sin(zeta) e^{j rho}, cos(zeta)]``."""
    return _polarization_vectors(p.aux, p.phase)


def emvs_response(a: Angles, p: Polarization) -> np.ndarray:
    """Six-component response ``b = V g``."""
    return emvs_direction_matrix(a) @ polarization_vector(p)


def emvs_responses(theta, phi, zeta, rho):
    """Vectorized responses: returns the 6 x K matrix ``B``."""
    V = _direction_matrices(theta, phi)
    g = _polarization_vectors(zeta, rho)
    return np.einsum("kij,kj->ik", V, g)


def direction_vector(a: Angles) -> np.ndarray:
    """Unit propagation vector ``[cos t sin p, sin t sin p, cos p]``."""
    return direction_vectors([a.azimuth], [a.elevation])[:, 0]


def direction_vectors(theta, phi):
    """3 x K matrix of unit propagation vectors."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.cos(theta) * np.sin(phi),
                     np.sin(theta) * np.sin(phi),
                     np.cos(phi)])


def cross_product_direction(e, m):
    """Normalized cross product ``e/|e| x conj(m)/|m|`` (complex 3-vector)."""
    e = np.asarray(e, dtype=complex)
    m = np.asarray(m, dtype=complex)
    ne, nm = np.linalg.norm(e), np.linalg.norm(m)
    if ne < FIELD_TOL or nm < FIELD_TOL:
        raise DegenerateField(f"field norms too small: |e|={ne:.3g}, |m|={nm:.3g}")
    return np.cross(e / ne, np.conj(m) / nm)


def poynting_vector(b) -> np.ndarray:
    """Propagation direction from one six-component response.

    Uses ``e/|e|^2 x conj(m)/|m|^2``; for a unit-norm polarization vector the
    two field blocks have unit norm and the result is the unit direction.
    """
    b = np.asarray(b, dtype=complex).ravel()
    e, m = b[:3], b[3:]
    ne, nm = np.linalg.norm(e), np.linalg.norm(m)
    if ne < FIELD_TOL or nm < FIELD_TOL:
        raise DegenerateField(f"field norms too small: |e|={ne:.3g}, |m|={nm:.3g}")
    q = np.cross(e / ne**2, np.conj(m) / nm**2)
    if np.max(np.abs(q.imag)) > 1e-10:
        raise DegenerateField("cross product has a non-negligible imaginary part")
    return q.real


# ---------------------------------------------------------------------------
# Channel and steering


def ris_channel(geometry: ArrayGeometry) -> np.ndarray:
    """Transmit-to-RIS channel G (M x Q), ``exp(-j 2 pi |p_q - p_m| / lambda)``."""
    rho = np.linalg.norm(geometry.ris[None, :, :] - geometry.tx[:, None, :], axis=-1)
    return np.exp(-2j * np.pi * rho / geometry.wavelength)


def ris_offsets(geometry: ArrayGeometry) -> np.ndarray:
    """RIS positions relative to the reference (first) RIS element."""
    return geometry.ris - geometry.ris[0]


def _angles_arrays(angles: Sequence[Angles]):
    theta = np.array([a.azimuth for a in angles], dtype=float)
    phi = np.array([a.elevation for a in angles], dtype=float)
    return theta, phi


def transmit_steering(geometry: ArrayGeometry, dods: Sequence[Angles]):
    """RIS-to-target steering ``A_t`` (Q x K) and path differences ``Omega``."""
    Qt = direction_vectors(*_angles_arrays(dods))
    Omega = ris_offsets(geometry) @ Qt
    return np.exp(-2j * np.pi * Omega / geometry.wavelength), Omega


def receive_steering(geometry: ArrayGeometry, doas: Sequence[Angles]):
    """Receive steering ``A_r`` (N x K) and ``Psi = P^r Q_r`` (absolute positions)."""
    Qr = direction_vectors(*_angles_arrays(doas))
    Psi = geometry.rx @ Qr
    return np.exp(-2j * np.pi * Psi / geometry.wavelength), Psi


def target_arrays(targets):
    """Per-parameter arrays (theta_t, phi_t, theta_r, phi_r, zeta, rho)."""
    return tuple(np.array(v, dtype=float) for v in zip(*[
        (t.dod.azimuth, t.dod.elevation, t.doa.azimuth, t.doa.elevation,
         t.pol.aux, t.pol.phase) for t in targets]))


def scene_factors(scene: SceneConfig):
    """Noiseless model factors for a scene.

    Returns a dict with ``G``, ``At``, ``Ar``, ``B``, ``Vt`` (= G diag(w) A_t)
    and ``Cr`` (= A_r kr B).
    """
    geo = scene.geometry
    G = ris_channel(geo)
    At, _ = transmit_steering(geo, [t.dod for t in scene.targets])
    Ar, _ = receive_steering(geo, [t.doa for t in scene.targets])
    _, _, _, _, zeta, rho = target_arrays(scene.targets)
    B = emvs_responses([t.doa.azimuth for t in scene.targets],
                       [t.doa.elevation for t in scene.targets], zeta, rho)
    Vt = (G * scene.ris_phases[None, :]) @ At
    return {"G": G, "At": At, "Ar": Ar, "B": B, "Vt": Vt,
            "Cr": khatri_rao(Ar, B)}


def draw_reflections(scene: SceneConfig, rng=None) -> np.ndarray:
    """Reflection coefficients U (K x L), i.i.d. unit-variance circular Gaussian.

    Uses the scene seed's generator when ``rng`` is None, so the result equals
    the U returned by :func:`synthesize`.
    """
    if rng is None:
        rng = np.random.default_rng(scene.rng_seed)
    K, L = scene.K, scene.snapshots
    return (rng.standard_normal((K, L)) + 1j * rng.standard_normal((K, L))) / np.sqrt(2)


def _maximal_rank(A):
    s = np.linalg.svd(A, compute_uv=False)
    r = min(A.shape)
    return s[0] > 0 and s[r - 1] / s[0] >= RANK_TOL


def kruskal_bound_holds(M, sixN, L, K):
    """Generic Kruskal condition for full-rank factors of the given sizes."""
    return min(M, K) + min(sixN, K) + min(L, K) >= 2 * K + 2


def synthesize(scene: SceneConfig):
    """Noisy observation tensor and the reflection coefficients used.

    Returns ``(SnapshotTensor, U)`` with U of shape K x L.  Noise variance is
    ``mean |signal|^2 / 10^(snr_db/10)`` unless ``scene.noise_var`` is given.
    """
    geo = scene.geometry
    K = scene.K
    if K < 1:
        raise ValueError("scene has no targets")
    if K > geo.N:
        raise IdentifiabilityViolation(
            f"{K} targets exceed the {geo.N} receive elements")
    rng = np.random.default_rng(scene.rng_seed)
    U = draw_reflections(scene, rng)
    f = scene_factors(scene)
    for name, A in (("V_t", f["Vt"]), ("C_r", f["Cr"]), ("U", U.T)):
        if not _maximal_rank(A):
            warnings.warn(f"factor {name} is numerically rank deficient",
                          RankDeficiencyWarning, stacklevel=2)
    Y = khatri_rao(f["Vt"], f["Cr"]) @ U
    M, sixN, L = geo.M, 6 * geo.N, scene.snapshots
    power = float(np.mean(np.abs(Y) ** 2))
    if scene.noise_var is not None:
        sigma2 = float(scene.noise_var)
    elif math.isinf(scene.snr_db) and scene.snr_db > 0:
        sigma2 = 0.0
    else:
        sigma2 = power / 10 ** (scene.snr_db / 10)
    if sigma2 > 0:
        Y = Y + np.sqrt(sigma2 / 2) * (rng.standard_normal(Y.shape)
                                       + 1j * rng.standard_normal(Y.shape))
    Z = SnapshotTensor(Y.reshape(M, sixN, L), K, noise_var=sigma2,
                       signal_power=power)
    return Z, U
