"""Array responses and the generative multipath measurement model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    GeometryError,
    PaConfig,
    UraGeometry,
    local_ray,
    pa_layout,
    reflect,
    sfv_to_va,
)


@dataclass(frozen=True)
class RfParams:
    fc: float
    bandwidth: float
    nf: int

    def __post_init__(self):
        if self.fc <= 0 or self.nf < 1 or self.bandwidth < 0:
            raise ValueError("invalid RF parameters")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc

    @property
    def delta_f(self) -> float:
        return self.bandwidth / (self.nf - 1) if self.nf > 1 else 0.0

    @property
    def base_freqs(self) -> np.ndarray:
        return (np.arange(self.nf) - (self.nf - 1) / 2.0) * self.delta_f


def n_obs(rf: RfParams, geom: UraGeometry) -> int:
    return rf.nf * geom.n_elements


def delay_response(tau, rf: RfParams) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    return np.exp(-2j * np.pi * tau[..., None] * rf.base_freqs)


def spatial_response(theta, phi, geom: UraGeometry, lam: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    uy = (np.sin(theta) * np.sin(phi))[..., None]
    uz = np.cos(theta)[..., None]
    ay = np.exp(2j * np.pi * geom.py * uy / lam)
    az = np.exp(2j * np.pi * geom.pz * uz / lam)
    return (ay[..., :, None] * az[..., None, :]).reshape(*ay.shape[:-1], geom.n_elements)


def response_from_ray(r, rf: RfParams, geom: UraGeometry, unit_modulus: bool = False,
                      carrier: bool = True) -> np.ndarray:
    """Planar-wavefront response for local rays ``r`` of shape ``(..., 3)``.

    Frequency is the outer index: entry ``i*Na + m`` belongs to bin ``i`` and
    element ``m``. One complex exponential per entry; ``u_y = sin(theta)sin(phi)``
    and ``u_z = cos(theta)`` are read straight from the unit ray.
    """
    r = np.asarray(r, dtype=float)
    dist = np.sqrt(np.sum(r * r, axis=-1))
    if np.any(dist == 0):
        raise GeometryError("zero-length ray")
    u = r / dist[..., None]
    lam = rf.wavelength
    spatial = (geom.template[1] * u[..., 1:2] + geom.template[2] * u[..., 2:3]) / lam
    freq = rf.base_freqs
    if carrier:
        freq = freq + rf.fc
    temporal = dist[..., None] * freq / SPEED_OF_LIGHT
    phase = spatial[..., None, :] - temporal[..., :, None]
    psi = np.exp(2j * np.pi * phase).reshape(*r.shape[:-1], -1)
    if not unit_modulus:
        psi = psi * (lam / (4.0 * np.pi * dist))[..., None]
    return psi


def planar_response(r, rf: RfParams, geom: UraGeometry, unit_modulus: bool = True) -> np.ndarray:
    return response_from_ray(r, rf, geom, unit_modulus=unit_modulus)


def steering(p_mt, psfv, pa: PaConfig, rf: RfParams, unit_modulus: bool = False) -> np.ndarray:
    """Path-loss compensated response for MT position(s) and optional SFV(s)."""
    k = 0 if psfv is None else 1
    return response_from_ray(local_ray(p_mt, psfv, pa, k), rf, pa.geometry, unit_modulus)


def spherical_response(p_source, pa: PaConfig, psfv, rf: RfParams) -> np.ndarray:
    """Exact element-distance response (unit modulus, carrier included)."""
    p = np.asarray(p_source, dtype=float)
    if psfv is None:
        layout = pa_layout(pa)
    else:
        va = sfv_to_va(pa.position, psfv)
        layout = va[:, None] + reflect((pa.orientation @ pa.geometry.template).T, psfv).T
    dist = np.linalg.norm(p[:, None] - layout, axis=0)
    if np.any(dist == 0):
        raise GeometryError("source coincides with an antenna element")
    fpb = rf.fc + rf.base_freqs
    mat = np.exp(-2j * np.pi / SPEED_OF_LIGHT * dist[:, None] * fpb[None, :])
    return mat.reshape(-1, order="F")


def complex_normal(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    """Circular complex Gaussian draws: two real normals scaled by sqrt(var/2)."""
    scale = np.sqrt(var / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def noiseless_signal(p_mt, features, pa: PaConfig, rf: RfParams) -> np.ndarray:
    """Sum of visible path contributions; ``features`` holds (psfv|None, amp, visible)."""
    z = np.zeros(n_obs(rf, pa.geometry), dtype=complex)
    for psfv, amp, visible in features:
        if visible:
            z += amp * steering(p_mt, psfv, pa, rf)
    return z


def generate_observation(p_mt, features, pa: PaConfig, rf: RfParams, noise_var: float,
                         rng: np.random.Generator) -> np.ndarray:
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    z = noiseless_signal(p_mt, features, pa, rf)
    if noise_var > 0:
        z = z + complex_normal(rng, z.shape, noise_var)
    return z


def channel_power(signals) -> float:
    """Mean per-entry power over a list of per-PA noiseless signals."""
    sig = [np.asarray(s) for s in signals]
    total = sum(float(np.vdot(s, s).real) for s in sig)
    return total / sum(s.size for s in sig)


def snr_noise_variance(signals, snr_db: float) -> float:
    p = channel_power(signals)
    if p <= 0:
        raise ValueError("zero channel power")
    return p / 10.0 ** (snr_db / 10.0)
