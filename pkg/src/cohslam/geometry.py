"""Scene geometry: array layouts, mirror transforms and local ray parameters.

Conventions are right-handed with z up. Every function accepts single vectors
and, where it matters for the filter, stacked ``(..., 3)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class GeometryError(ValueError):
    """Invalid geometric input (zero SFV, coincident points, bad counts)."""


@dataclass(frozen=True)
class UraGeometry:
    ny: int
    nz: int
    dy: float
    dz: float
    template: np.ndarray = field(repr=False)

    @property
    def n_elements(self) -> int:
        return self.ny * self.nz

    @property
    def py(self) -> np.ndarray:
        return centered_grid(self.ny, self.dy)

    @property
    def pz(self) -> np.ndarray:
        return centered_grid(self.nz, self.dz)


@dataclass(frozen=True)
class PaConfig:
    position: np.ndarray
    orientation: np.ndarray
    geometry: UraGeometry


def centered_grid(n: int, d: float) -> np.ndarray:
    return (np.arange(n) - (n - 1) / 2.0) * d


def template_layout(ny: int, nz: int, dy: float, dz: float) -> UraGeometry:
    """URA template in the local yz-plane, symmetric about the origin.

    Columns are ordered with z running fastest, matching ``a_y kron a_z``.
    """
    if ny < 1 or nz < 1:
        raise GeometryError("array dimensions must be positive")
    if dy <= 0 or dz <= 0:
        raise GeometryError("element spacing must be positive")
    py = centered_grid(ny, dy)
    pz = centered_grid(nz, dz)
    tpl = np.vstack([
        np.zeros(ny * nz),
        np.kron(py, np.ones(nz)),
        np.kron(np.ones(ny), pz),
    ])
    return UraGeometry(ny, nz, float(dy), float(dz), tpl)


def check_rotation(r: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise GeometryError("rotation must be 3x3")
    if not np.allclose(r @ r.T, np.eye(3), atol=tol) or abs(np.linalg.det(r) - 1) > tol:
        raise GeometryError("matrix is not in SO(3)")
    return r


def rotation_zyx(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Rotation built from yaw (about z), pitch (about y), roll (about x), radians."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1.0]])
    ry = np.array([[cp, 0, sp], [0, 1.0, 0], [-sp, 0, cp]])
    rx = np.array([[1.0, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


def pa_layout(cfg: PaConfig) -> np.ndarray:
    return np.asarray(cfg.position, float)[:, None] + cfg.orientation @ cfg.geometry.template


def _check_sfv(psfv: np.ndarray) -> np.ndarray:
    psfv = np.asarray(psfv, dtype=float)
    if np.any(np.linalg.norm(psfv, axis=-1) == 0):
        raise GeometryError("SFV position must not be the origin")
    return psfv


def householder(psfv) -> np.ndarray:
    """Reflection ``I - 2 s s^T / |s|^2``; broadcasts over leading axes."""
    s = _check_sfv(psfv)
    outer = s[..., :, None] * s[..., None, :]
    return np.eye(3) - 2.0 * outer / np.sum(s * s, axis=-1)[..., None, None]


def reflect(points, psfv) -> np.ndarray:
    """Apply ``H(psfv)`` to ``points`` without forming the matrix."""
    s = _check_sfv(psfv)
    p = np.asarray(points, dtype=float)
    coef = 2.0 * np.sum(p * s, axis=-1) / np.sum(s * s, axis=-1)
    return p - coef[..., None] * s


def sfv_to_va(pa, psfv) -> np.ndarray:
    """Mirror ``pa`` across the plane through ``psfv/2`` with normal ``psfv``."""
    s = _check_sfv(psfv)
    pa = np.asarray(pa, dtype=float)
    coef = 2.0 * np.sum(pa * s, axis=-1) / np.sum(s * s, axis=-1) - 1.0
    return pa - coef[..., None] * s


def virtual_mt(p_mt, psfv) -> np.ndarray:
    """Mirror image of the MT: ``H p + s``."""
    s = _check_sfv(psfv)
    return reflect(p_mt, s) + s


def local_ray(p_mt, psfv, pa: PaConfig, k: int = 0) -> np.ndarray:
    """Ray from the PA to the (virtual) MT in local PA coordinates.

    ``k == 0`` or ``psfv is None`` selects the LOS component. Stacked MT
    positions and SFVs broadcast against each other.
    """
    p = np.asarray(p_mt, dtype=float)
    pa_pos = np.asarray(pa.position, dtype=float)
    if k == 0 or psfv is None:
        rt = p - pa_pos
    else:
        rt = virtual_mt(p, psfv) - pa_pos
    if np.any(np.linalg.norm(rt, axis=-1) == 0):
        raise GeometryError("MT coincides with the (virtual) anchor")
    return rt @ pa.orientation


def spherical_params(r) -> tuple:
    """Delay, elevation and azimuth of a local ray.

    Returns ``(tau, theta, phi, pole)`` where ``pole`` flags rays along the
    local z axis; their azimuth is set to zero.
    """
    r = np.asarray(r, dtype=float)
    norm = np.linalg.norm(r, axis=-1)
    if np.any(norm == 0):
        raise GeometryError("zero-length ray")
    tau = norm / SPEED_OF_LIGHT
    theta = np.arccos(np.clip(r[..., 2] / norm, -1.0, 1.0))
    pole = (r[..., 0] == 0) & (r[..., 1] == 0)
    phi = np.where(pole, 0.0, np.arctan2(r[..., 1], r[..., 0]))
    return tau, theta, phi, pole


def direction(theta, phi) -> np.ndarray:
    """Unit vector from elevation/azimuth via directional cosines."""
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
