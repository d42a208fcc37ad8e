"""Default geometries and the benchmark scenarios.

Receive arrays are drawn uniformly from a box with a minimum pairwise
spacing (0.8 wavelengths by default, i.e. beyond half a wavelength) and then
shifted so the first receive element sits at the origin.  The default box is
8 wavelengths wide: the phase-based DOA gains over the cross-product DOA in
proportion to the aperture, and 8 wavelengths puts the gain near a factor
of two for the benchmark targets.

RIS elements are packed on a planar square lattice around the reference
element.  Up to five elements this is the half-wavelength grid; larger surfaces are shrunk so no
element is farther than half a wavelength from the reference, which keeps
the transmit-side phases free of wrapping.
"""

from __future__ import annotations

import math

import numpy as np

from .signal_model import ArrayGeometry, SceneConfig, Target

WAVELENGTH = 0.1

PAPER_TARGETS_DEG = [
    # (dod az, dod el), (doa az, doa el), (zeta, rho)
    ((45.0, 25.0), (50.0, 21.0), (30.0, 20.0)),
    ((56.0, 26.0), (71.0, 20.0), (60.0, 50.0)),
    ((71.0, 48.0), (80.0, 68.0), (42.0, 68.0)),
]

GEOMETRY_SEED = 20240607


def paper_targets():
    return [Target.from_degrees(*t) for t in PAPER_TARGETS_DEG]


def uniform_targets(K):
    """Evenly spaced targets used by the multi-target sweeps.

    Angles follow the sweep recipe (DOD 45+3k / 25+2k, DOA 20+5k / 32+2k
    degrees); polarizations are not published and are spread over
    zeta 25..58 deg, rho 10..87 deg.
    """
    out = []
    for k in range(K):
        out.append(Target.from_degrees(
            (45.0 + 3 * k, 25.0 + 2 * k),
            (20.0 + 5 * k, 32.0 + 2 * k),
            (25.0 + 3 * k, 10.0 + 7 * k)))
    return out


def random_positions(n, rng, *, min_spacing, box, max_spacing=None,
                     anchor_origin=True, max_tries=100000):
    """Rejection-sample ``n`` points in ``[0, box]^3`` with spacing limits."""
    box = np.broadcast_to(np.asarray(box, dtype=float), (3,))
    pts = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not place elements; enlarge the box")
        p = rng.uniform(0.0, 1.0, 3) * box
        if pts:
            d = np.linalg.norm(np.asarray(pts) - p, axis=1)
            if d.min() < min_spacing:
                continue
            if max_spacing is not None and d.max() > max_spacing:
                continue
        pts.append(p)
    P = np.asarray(pts)
    if anchor_origin:
        P = P - P[0]
    return P


def ris_lattice(Q, wavelength, radius=0.5, center=(0.0, 0.0, 0.0)):
    """Q elements on a square lattice in the x-y plane.

    The first element is the lattice point at the center; the remaining
    ones are the nearest lattice points, scaled so the farthest lies
    ``radius`` wavelengths from the reference element.
    """
    if Q == 1:
        return np.asarray([center], dtype=float)
    r = int(math.ceil(math.sqrt(Q))) + 1
    grid = np.array([(i, j) for i in range(-r, r + 1) for j in range(-r, r + 1)],
                    dtype=float)
    # stable order: distance, then angle
    key = np.lexsort((np.arctan2(grid[:, 1], grid[:, 0]), np.hypot(grid[:, 0], grid[:, 1])))
    pts = grid[key[:Q]]
    pts = pts / np.hypot(pts[:, 0], pts[:, 1]).max() * radius * wavelength
    P = np.column_stack([pts, np.zeros(Q)])
    return P + np.asarray(center, dtype=float)


def default_geometry(M, Q, N, wavelength=WAVELENGTH, seed=GEOMETRY_SEED,
                     rx_box=8.0, rx_min=0.8, rx_max=None, tx_box=3.0):
    """Arbitrary (non-uniform) geometry in the default layout.

    Distances are given in wavelengths.  Transmit elements sit in a box
    ``tx_box`` wide, centred 2 wavelengths below the RIS, so the RIS channel
    is in the near field and ``G diag(w)`` is well conditioned.
    """
    rng = np.random.default_rng(seed)
    lam = wavelength
    rx = random_positions(N, rng, min_spacing=rx_min * lam, box=rx_box * lam,
                          max_spacing=None if rx_max is None else rx_max * lam)
    ris = ris_lattice(Q, lam)
    tx = random_positions(M, rng, min_spacing=min(0.8, tx_box / (M ** (1 / 3) + 1)) * lam,
                          box=tx_box * lam, anchor_origin=False)
    tx = tx - tx.mean(axis=0) + np.array([0.0, 0.0, -2.0 * lam])
    return ArrayGeometry(tx=tx, rx=rx, ris=ris, wavelength=lam)


def table1_geometry(seed=GEOMETRY_SEED):
    """M = 5 transmit, Q = 5 RIS, N = 12 receive elements, lambda = 0.1 m."""
    return default_geometry(5, 5, 12, seed=seed)


def wide_spacing_geometry(seed=GEOMETRY_SEED, N=12):
    """Table I sizes with every receive pair between 0.8 and 3 wavelengths apart."""
    return default_geometry(5, 5, N, seed=seed, rx_box=2.0, rx_min=0.8, rx_max=3.0)


def compact_geometry(seed=GEOMETRY_SEED, N=12):
    """Table I sizes with every receive pair closer than half a wavelength."""
    return default_geometry(5, 5, N, seed=seed, rx_box=0.28, rx_min=0.05, rx_max=0.5)


def table1_scene(snr_db=math.inf, snapshots=500, rng_seed=0, targets=None,
                 geometry=None, ris_phases=None):
    geo = geometry if geometry is not None else table1_geometry()
    w = np.ones(geo.Q, dtype=complex) if ris_phases is None else ris_phases
    return SceneConfig(geometry=geo, targets=targets or paper_targets(),
                       ris_phases=w, snapshots=snapshots, snr_db=snr_db,
                       rng_seed=rng_seed)


def ris_comparison_geometry(seed=GEOMETRY_SEED, variant="verbatim"):
    """Large configuration for the RIS phase comparison.

    ``verbatim``: M = 50, Q = 18, N = 11 as published.  ``corrected``:
    M = 18, Q = 50 would make ``G diag(w)`` wide (not invertible), so the
    corrected variant instead keeps Q <= M with M = 24, Q = 18, N = 11.
    """
    if variant == "verbatim":
        return default_geometry(50, 18, 11, seed=seed)
    if variant == "corrected":
        return default_geometry(24, 18, 11, seed=seed)
    raise ValueError(f"unknown variant {variant!r}")


def random_unit_phases(Q, rng):
    return np.exp(2j * np.pi * rng.uniform(0.0, 1.0, Q))
