"""Posterior Cramér-Rao bounds for coherent and noncoherent phase models.

Local (per-PA) channel parameters are ordered
``[theta(K~), phi(K~), tau(K~), phase(K~), modulus(K~), eta]`` and the global
vector is ``[MT state(6), SFVs(3K), phases(D_phi), moduli(K~ J), eta]``.
Path loss and the carrier phase live in the complex amplitudes, so the
response family used here is unit modulus without the carrier term.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .channel import RfParams
from .geometry import (
    SPEED_OF_LIGHT,
    GeometryError,
    PaConfig,
    UraGeometry,
    householder,
    local_ray,
    spherical_params,
)

log = logging.getLogger(__name__)

PSEUDO_VARIANCE = 1e6


class PhaseMode(str, Enum):
    COHERENT = "coherent"
    NONCOHERENT = "noncoherent"


@dataclass
class ChannelParams:
    theta: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    phase: np.ndarray
    modulus: np.ndarray
    eta: float

    def __post_init__(self):
        for name in ("theta", "phi", "tau", "phase", "modulus"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.theta.size
        if any(getattr(self, f).size != n for f in ("phi", "tau", "phase", "modulus")):
            raise ValueError("channel parameter arrays differ in length")

    @property
    def n_components(self) -> int:
        return self.theta.size

    @property
    def dim(self) -> int:
        return 5 * self.n_components + 1

    @property
    def amplitudes(self) -> np.ndarray:
        return self.modulus * np.exp(1j * self.phase)


@dataclass
class BoundState:
    """Global state at one step: MT state, SFVs and per-PA moduli."""
    x: np.ndarray            # (6,)
    psfv: np.ndarray         # (K, 3)
    moduli: np.ndarray       # (J, K+1)
    eta: float
    visible: np.ndarray | None = None  # (J, K+1) bool


def global_dim(k: int, j: int, mode: PhaseMode) -> int:
    return 6 + 3 * k + phase_dim(k, j, mode) + j * (k + 1) + 1


def phase_dim(k: int, j: int, mode: PhaseMode) -> int:
    return (k + 1) if PhaseMode(mode) is PhaseMode.COHERENT else (k + 1) * j


# responses ------------------------------------------------------------------

def _factors(theta, phi, geom: UraGeometry, lam: float):
    uy = np.sin(theta) * np.sin(phi)
    uz = np.cos(theta)
    ay = np.exp(2j * np.pi * geom.py * uy / lam)
    az = np.exp(2j * np.pi * geom.pz * uz / lam)
    return ay, az


def response(tau, theta, phi, rf: RfParams, geom: UraGeometry) -> np.ndarray:
    """Unit-modulus response ``b(tau) kron a_y kron a_z`` without carrier phase."""
    ay, az = _factors(theta, phi, geom, rf.wavelength)
    b = np.exp(-2j * np.pi * tau * rf.base_freqs)
    return np.kron(b, np.kron(ay, az))


def factor_derivatives(theta, phi, geom: UraGeometry, lam: float) -> dict:
    """Derivatives of the horizontal and vertical array factors."""
    ay, az = _factors(theta, phi, geom, lam)
    k = 2j * np.pi / lam
    return {
        "day_dtheta": ay * k * geom.py * np.cos(theta) * np.sin(phi),
        "day_dphi": ay * k * geom.py * np.sin(theta) * np.cos(phi),
        "daz_dtheta": az * k * geom.pz * (-np.sin(theta)),
        "daz_dphi": np.zeros_like(az),
    }


def response_derivatives(tau, theta, phi, rf: RfParams, geom: UraGeometry) -> tuple:
    """Analytic ``(d/dtheta, d/dphi, d/dtau)`` of :func:`response`."""
    if np.sin(theta) == 0:
        raise GeometryError("azimuth derivative undefined at the pole")
    lam = rf.wavelength
    ay, az = _factors(theta, phi, geom, lam)
    b = np.exp(-2j * np.pi * tau * rf.base_freqs)
    d = factor_derivatives(theta, phi, geom, lam)
    d_theta = np.kron(b, np.kron(d["day_dtheta"], az) + np.kron(ay, d["daz_dtheta"]))
    d_phi = np.kron(b, np.kron(d["day_dphi"], az))
    d_tau = np.kron(-2j * np.pi * rf.base_freqs * b, np.kron(ay, az))
    return d_theta, d_phi, d_tau


# channel FIM ----------------------------------------------------------------

def mean_derivatives(params: ChannelParams, rf: RfParams, geom: UraGeometry) -> np.ndarray:
    """Columns ``d mean / d param`` for every non-noise channel parameter."""
    kt = params.n_components
    nz = rf.nf * geom.n_elements
    cols = np.zeros((nz, 5 * kt), dtype=complex)
    rho = params.amplitudes
    for k in range(kt):
        psi = response(params.tau[k], params.theta[k], params.phi[k], rf, geom)
        dth, dph, dta = response_derivatives(params.tau[k], params.theta[k], params.phi[k], rf, geom)
        cols[:, k] = rho[k] * dth
        cols[:, kt + k] = rho[k] * dph
        cols[:, 2 * kt + k] = rho[k] * dta
        cols[:, 3 * kt + k] = 1j * rho[k] * psi
        cols[:, 4 * kt + k] = np.exp(1j * params.phase[k]) * psi
    return cols


def channel_fim(params: ChannelParams, rf: RfParams, geom: UraGeometry) -> np.ndarray:
    """FIM of one PA snapshot under a circular complex Gaussian likelihood."""
    if params.eta <= 0:
        raise ValueError("noise variance must be positive")
    if np.any(params.modulus <= 0):
        raise ValueError("moduli must be positive")
    d = mean_derivatives(params, rf, geom)
    f = np.zeros((params.dim, params.dim))
    f[:-1, :-1] = 2.0 / params.eta * np.real(d.conj().T @ d)
    f[-1, -1] = rf.nf * geom.n_elements / params.eta ** 2
    return 0.5 * (f + f.T)


# Jacobians --------------------------------------------------------------------

def _ray_gradients(r) -> np.ndarray:
    """Rows: gradients of theta, phi, tau, carrier-free range w.r.t. the local ray."""
    x, y, z = r
    rho2 = x * x + y * y
    if rho2 == 0:
        raise GeometryError("ray along the array normal axis of elevation")
    n = np.linalg.norm(r)
    g_theta = np.array([x * z, y * z, -rho2]) / (n * n * np.sqrt(rho2))
    g_phi = np.array([-y, x, 0.0]) / rho2
    g_tau = r / (SPEED_OF_LIGHT * n)
    return np.vstack([g_theta, g_phi, g_tau])


def vm_sfv_jacobian(p, s) -> np.ndarray:
    """``d(H p + s)/ds`` as a 3x3 matrix (rows: VM coordinates)."""
    p = np.asarray(p, float)
    s = np.asarray(s, float)
    ss = s @ s
    ps = p @ s
    return np.eye(3) - 2.0 * (np.outer(s, p) + ps * np.eye(3)) / ss + 4.0 * ps * np.outer(s, s) / ss ** 2


def local_params(state: BoundState, pa: PaConfig, j: int, rf: RfParams,
                 phases=None) -> ChannelParams:
    """Channel parameters of PA ``j`` for a global state.

    ``phases`` are the global nuisance phases per component; the carrier term
    ``-2 pi fc |r'| / c`` is added on top.
    """
    kt = state.psfv.shape[0] + 1
    out = np.zeros((4, kt))
    for k in range(kt):
        r = local_ray(state.x[:3], None if k == 0 else state.psfv[k - 1], pa, k)
        tau, theta, phi, _ = spherical_params(r)
        out[:, k] = tau, theta, phi, -2 * np.pi * rf.fc * tau
    if phases is not None:
        out[3] += phases
    return ChannelParams(out[1], out[2], out[0], out[3], state.moduli[j], state.eta)


def jacobian(state: BoundState, pa: PaConfig, j: int, n_pa: int, rf: RfParams,
             mode: PhaseMode) -> np.ndarray:
    """``d(local)^T / d(global)`` for PA ``j``, shape ``D_g x D_l``."""
    mode = PhaseMode(mode)
    k_sfv = state.psfv.shape[0]
    kt = k_sfv + 1
    dg = global_dim(k_sfv, n_pa, mode)
    dl = 5 * kt + 1
    g = np.zeros((dg, dl))
    p = state.x[:3]
    rot = pa.orientation
    lam = rf.wavelength
    o_sfv = 6
    o_phase = o_sfv + 3 * k_sfv
    o_mod = o_phase + phase_dim(k_sfv, n_pa, mode)
    for k in range(kt):
        s = None if k == 0 else state.psfv[k - 1]
        r = local_ray(p, s, pa, k)
        grads = _ray_gradients(r)
        g_phase = -2 * np.pi / lam * r / np.linalg.norm(r)
        rows = np.vstack([grads, g_phase])  # d(theta, phi, tau, phase)/dr'
        # dr'/dp = R^T H, so d/dp = H R (d/dr')
        h = np.eye(3) if k == 0 else householder(s)
        cols = [k, kt + k, 2 * kt + k, 3 * kt + k]
        g[0:3, cols] = h @ rot @ rows.T
        if k > 0:
            m = vm_sfv_jacobian(p, s)
            sl = slice(o_sfv + 3 * (k - 1), o_sfv + 3 * k)
            g[sl, cols] = m.T @ rot @ rows.T
        ph = k if mode is PhaseMode.COHERENT else j * kt + k
        g[o_phase + ph, 3 * kt + k] = 1.0
        g[o_mod + j * kt + k, 4 * kt + k] = 1.0
    g[-1, -1] = 1.0
    return g


def _visible_columns(vis, kt: int) -> np.ndarray:
    keep = np.ones(5 * kt + 1, dtype=bool)
    for k in np.flatnonzero(~np.asarray(vis, bool)):
        keep[[k, kt + k, 2 * kt + k, 3 * kt + k, 4 * kt + k]] = False
    return keep


def snapshot_fim(state: BoundState, pas, rf: RfParams, mode: PhaseMode) -> np.ndarray:
    """Sum over PAs of ``G F_ch G^T``; invisible components contribute nothing."""
    mode = PhaseMode(mode)
    k_sfv = state.psfv.shape[0]
    kt = k_sfv + 1
    n_pa = len(pas)
    dg = global_dim(k_sfv, n_pa, mode)
    out = np.zeros((dg, dg))
    for j, pa in enumerate(pas):
        vis = np.ones(kt, bool) if state.visible is None else np.asarray(state.visible[j], bool)
        if not vis.any():
            continue
        g = jacobian(state, pa, j, n_pa, rf, mode)
        cp = local_params(state, pa, j, rf)
        keep = _visible_columns(vis, kt)
        sub = ChannelParams(cp.theta[vis], cp.phi[vis], cp.tau[vis], cp.phase[vis],
                            cp.modulus[vis], cp.eta)
        gk = g[:, keep]
        out += gk @ channel_fim(sub, rf, pa.geometry) @ gk.T
    return 0.5 * (out + out.T)


def mc_expectation(states, pas, rf: RfParams, mode: PhaseMode) -> list:
    """Per-step mean snapshot FIM over draws.

    ``states[d][n]`` is the global state of draw ``d`` at step ``n``; the
    reduction runs in draw order so the result is deterministic.
    """
    if len(states) < 1:
        raise ValueError("need at least one draw")
    n_steps = len(states[0])
    out = []
    for n in range(n_steps):
        acc = None
        for draw in states:
            f = snapshot_fim(draw[n], pas, rf, mode)
            acc = f if acc is None else acc + f
        out.append(acc / len(states))
    return out


# recursion ----------------------------------------------------------------------

def safe_inverse(m, rel_floor: float = 1e-12) -> tuple:
    """Inverse through a symmetric eigendecomposition with an eigenvalue floor.

    The matrix is first scaled to unit diagonal so the floor acts on the
    correlation structure rather than on raw unit-dependent magnitudes.
    Returns ``(inverse, floored)`` where ``floored`` counts clipped eigenvalues.
    """
    m = np.asarray(m, float)
    m = 0.5 * (m + m.T)
    dg = np.diag(m).copy()
    scale = np.where(dg > 0, 1.0 / np.sqrt(np.where(dg > 0, dg, 1.0)), 1.0)
    w, v = np.linalg.eigh(m * np.outer(scale, scale))
    floor = rel_floor * max(w.max(), 0.0)
    if floor == 0.0:
        floor = rel_floor
    n_low = int(np.sum(w < floor))
    w = np.maximum(w, floor)
    inv = ((v / w) @ v.T) * np.outer(scale, scale)
    return 0.5 * (inv + inv.T), n_low


def transition_matrices(f_a, q_a, k_sfv: int, n_pa: int, mode: PhaseMode, sigma_sfv: float,
                        pseudo: float = PSEUDO_VARIANCE) -> tuple:
    """Block ``F`` and ``Q`` over the global vector.

    Nuisance blocks (phases, moduli, noise) have zero transition and a large
    pseudo-variance, so no information on them survives a prediction.
    """
    d_phi = phase_dim(k_sfv, n_pa, mode)
    d = global_dim(k_sfv, n_pa, mode)
    f = np.zeros((d, d))
    q = np.zeros((d, d))
    f[:6, :6] = f_a
    q[:6, :6] = q_a
    i = np.arange(6, 6 + 3 * k_sfv)
    f[i, i] = 1.0
    q[i, i] = sigma_sfv ** 2
    rest = np.arange(6 + 3 * k_sfv, d)
    q[rest, rest] = pseudo
    assert rest.size == d_phi + n_pa * (k_sfv + 1) + 1
    return f, q


@dataclass
class BoundSeries:
    info: list
    peb: np.ndarray
    meb: np.ndarray          # (N, K)
    floored: np.ndarray      # clipped eigenvalue count per step


def position_bound(cov) -> float:
    return float(np.sqrt(max(np.trace(cov[:3, :3]), 0.0)))


def mapping_bounds(cov, k_sfv: int) -> np.ndarray:
    out = np.empty(k_sfv)
    for k in range(k_sfv):
        b = slice(6 + 3 * k, 9 + 3 * k)
        out[k] = np.sqrt(max(np.trace(cov[b, b]), 0.0))
    return out


def pcrlb_recursion(snapshots, f, q, j_init, k_sfv: int) -> BoundSeries:
    """``J_{n|n} = J_g(n) + (F J_{n-1}^{-1} F^T + Q)^{-1}`` with ``J_0 = j_init``."""
    j = np.asarray(j_init, float)
    info, peb, meb, floored = [], [], [], []
    for n, jg in enumerate(snapshots):
        cov, c1 = safe_inverse(j)
        pred, c2 = safe_inverse(f @ cov @ f.T + q)
        j = jg + pred
        j = 0.5 * (j + j.T)
        post, c3 = safe_inverse(j)
        hits = c1 + c2 + c3
        if hits:
            log.debug("step %d: %d eigenvalues floored", n, hits)
        info.append(j)
        peb.append(position_bound(post))
        meb.append(mapping_bounds(post, k_sfv))
        floored.append(hits)
    return BoundSeries(info, np.array(peb), np.array(meb).reshape(len(peb), k_sfv),
                       np.array(floored))


def prior_information(pos_var, vel_var, sfv_var, k_sfv: int, n_pa: int, mode: PhaseMode,
                      pseudo: float = PSEUDO_VARIANCE) -> np.ndarray:
    """Diagonal initial information from prior variances."""
    d = global_dim(k_sfv, n_pa, mode)
    var = np.full(d, pseudo)
    var[:3] = pos_var
    var[3:6] = vel_var
    var[6:6 + 3 * k_sfv] = np.resize(np.asarray(sfv_var, float), 3 * k_sfv)
    return np.diag(1.0 / var)
