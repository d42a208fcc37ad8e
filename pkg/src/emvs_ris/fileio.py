"""Scene files and binary array dumps.

Scene files are TOML.  Angles are in degrees, RIS phases in radians and
positions in metres.  Position matrices are either inline arrays of
``[x, y, z]`` rows or the name of a CSV file (three columns, no header)
resolved relative to the scene file.  Instead of explicit matrices a
``[geometry.generate]`` table draws a default random layout::

    snapshots = 500
    snr_db = 10.0
    seed = 1

    [geometry]
    wavelength = 0.1
    tx = [[0.0, 0.0, -0.2], [0.1, 0.0, -0.2]]
    rx = "rx_positions.csv"
    ris = [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]]

    [[targets]]
    dod = [45.0, 25.0]      # azimuth, elevation
    doa = [50.0, 21.0]
    pol = [30.0, 20.0]      # zeta, rho

    [ris]
    phases = [0.0, 1.57]    # optional, radians; default all zero

Binary dumps hold three little-endian int64 dimensions followed by the
entries as little-endian complex64 in C order.  Matrices are stored with a
trailing dimension of 1.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .scenes import WAVELENGTH, default_geometry
from .signal_model import ArrayGeometry, SceneConfig, Target

__all__ = ["load_scene", "scene_from_dict", "dump_array", "load_array"]

_HEADER = np.dtype("<i8")
_ENTRY = np.dtype("<c8")


def _positions(value, base: Path, name):
    if isinstance(value, str):
        path = base / value
        try:
            P = np.loadtxt(path, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigError(f"{name}: cannot read {path}: {exc}") from exc
    else:
        P = np.asarray(value, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3:
        raise ConfigError(f"{name}: expected rows of three coordinates")
    return P


def _geometry(doc, base):
    g = doc.get("geometry")
    if not isinstance(g, dict):
        raise ConfigError("missing [geometry] table")
    lam = float(g.get("wavelength", WAVELENGTH))
    gen = g.get("generate")
    try:
        if gen is not None:
            kw = dict(gen)
            try:
                M, Q, N = int(kw.pop("M")), int(kw.pop("Q")), int(kw.pop("N"))
            except KeyError as exc:
                raise ConfigError(f"[geometry.generate] needs {exc.args[0]}") from None
            return default_geometry(M, Q, N, wavelength=lam, **kw)
        return ArrayGeometry(tx=_positions(g["tx"], base, "tx"),
                             rx=_positions(g["rx"], base, "rx"),
                             ris=_positions(g["ris"], base, "ris"), wavelength=lam)
    except KeyError as exc:
        raise ConfigError(f"[geometry] needs {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid geometry: {exc}") from exc


def _targets(doc):
    rows = doc.get("targets")
    if not rows:
        raise ConfigError("scene needs at least one [[targets]] entry")
    out = []
    for i, t in enumerate(rows):
        try:
            out.append(Target.from_degrees(tuple(t["dod"]), tuple(t["doa"]), tuple(t["pol"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"target {i}: expected dod, doa and pol pairs ({exc})") from None
    return out


def scene_from_dict(doc, base=Path(".")):
    """Build a :class:`SceneConfig` from an already parsed scene document."""
    geo = _geometry(doc, Path(base))
    targets = _targets(doc)
    ris = doc.get("ris", {})
    phases = np.asarray(ris.get("phases", np.zeros(geo.Q)), dtype=float)
    if phases.shape != (geo.Q,):
        raise ConfigError(f"ris.phases must have {geo.Q} entries")
    snr = doc.get("snr_db", math.inf)
    try:
        return SceneConfig(geometry=geo, targets=targets, ris_phases=np.exp(1j * phases),
                           snapshots=int(doc.get("snapshots", 500)),
                           snr_db=float(snr), rng_seed=int(doc.get("seed", 0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scene(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scene file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return scene_from_dict(doc, path.parent)


def dump_array(path, A):
    """Write a 2-D or 3-D complex array in the binary dump format."""
    A = np.asarray(A)
    if A.ndim == 2:
        A = A[:, :, None]
    if A.ndim != 3:
        raise ValueError("only 2-D and 3-D arrays can be dumped")
    with open(path, "wb") as fh:
        fh.write(np.asarray(A.shape, dtype=_HEADER).tobytes())
        fh.write(np.ascontiguousarray(A, dtype=_ENTRY).tobytes())


def load_array(path):
    """Read a dump back; a trailing singleton dimension is dropped."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise ValueError("file too short for the shape header")
    shape = tuple(int(n) for n in np.frombuffer(raw[:24], dtype=_HEADER))
    data = np.frombuffer(raw[24:], dtype=_ENTRY)
    if data.size != math.prod(shape):
        raise ValueError(f"payload has {data.size} entries, header says {shape}")
    A = data.reshape(shape).astype(complex)
    return A[:, :, 0] if shape[2] == 1 else A
