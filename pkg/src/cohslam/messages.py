"""Moment-matched update messages.

Two implementations share one output layout (:class:`Messages`):

``fast``
    The low-rank particle forms with m-vectors, evaluated through
    :mod:`cohslam.fastmsg`. This is what the filter runs.
``exact``
    Dense mixture moments: every MT particle is combined with every PF
    particle, cross terms between features that share the MT state are kept,
    and Gaussians are evaluated with full Cholesky factors. Cubic in Nz and
    quadratic in P, so meant for small validation instances only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fastmsg
from .channel import steering


@dataclass
class FeatureView:
    """Predicted quantities of one feature as seen by the update step."""

    psfv: np.ndarray | None  # (P, 3), None for the LOS
    gamma: np.ndarray  # (P,)
    mu: np.ndarray  # (P,) complex
    alpha: np.ndarray  # (P,) predicted existence weights, sum = rho
    zeta: np.ndarray  # (J,) predicted PPR probabilities


@dataclass
class Messages:
    iota: np.ndarray  # (J, Px) log iota for each MT particle
    nu: np.ndarray  # (J, Peta) log nu for each noise particle
    kappa: np.ndarray  # (S, J, P) log kappa(1)/kappa(0)
    omega: np.ndarray  # (S, J) log omega(1)/omega(0)


@dataclass
class MomentBundle:
    """Per-PA ingredients of the fast messages."""

    psi: np.ndarray  # (S, P, Nz)
    m: np.ndarray  # (S, Nz)
    m_omega: np.ndarray  # (S, Nz)
    mu3: np.ndarray  # (S, Nz)
    mu4: np.ndarray  # (S, Nz)
    rho: np.ndarray  # (S,)
    zeta: np.ndarray  # (S,)
    p_dot_j: np.ndarray  # (S,) 1 - zeta
    p_dot: np.ndarray  # (S,) 1 - rho
    p_ddot: np.ndarray  # (S,) 1 - zeta*rho
    eta_bar: float


def feature_steering(x_pos, feat: FeatureView, pa, rf) -> np.ndarray:
    """Path-loss response of each particle pair (MT particle p, PF particle p)."""
    return steering(x_pos, feat.psfv, pa, rf)


def moment_terms(x_pos, w_beta, features, j, pa, rf, eta_bar, zero_mean=False) -> MomentBundle:
    S = len(features)
    nz = rf.nf * pa.geometry.n_elements
    P = x_pos.shape[0]
    psi = np.zeros((S, P, nz), complex)
    out = {k: np.zeros((S, nz), complex) for k in ("m", "m_omega", "mu3", "mu4")}
    rho = np.array([f.alpha.sum() for f in features])
    zeta = np.array([f.zeta[j] for f in features])
    p_dot_j = 1.0 - zeta
    p_ddot = 1.0 - zeta * rho
    for s, f in enumerate(features):
        psi[s] = feature_steering(x_pos, f, pa, rf)
        mu = np.zeros_like(f.mu) if zero_mean else f.mu
        mu2 = np.abs(mu) ** 2
        wpsi = w_beta[:, None] * psi[s]
        amp = np.sqrt(f.gamma + mu2 * p_ddot[s])
        amp_w = np.sqrt(f.gamma + mu2 * p_dot_j[s])
        out["m"][s] = rho[s] * zeta[s] * (amp @ wpsi)
        out["m_omega"][s] = rho[s] * (amp_w @ wpsi)
        out["mu4"][s] = rho[s] * (mu @ wpsi)
        out["mu3"][s] = zeta[s] * out["mu4"][s]
    return MomentBundle(psi=psi, rho=rho, zeta=zeta, p_dot_j=p_dot_j, p_dot=1.0 - rho,
                        p_ddot=p_ddot, eta_bar=float(eta_bar), **out)


def _fast_pa(z, x_pos, w_beta, eta, w_eta, features, j, pa, rf, zero_mean, chunk=1024):
    eta_bar = float(w_eta @ eta)
    mb = moment_terms(x_pos, w_beta, features, j, pa, rf, eta_bar, zero_mean)
    S, P, nz = mb.psi.shape
    mus = [np.zeros_like(f.mu) if zero_mean else f.mu for f in features]

    # iota: per MT particle, L = S factors
    iota = np.empty(P)
    for a in range(0, P, chunk):
        b = min(P, a + chunk)
        M = np.empty((b - a, nz, S), complex)
        mean = np.zeros((b - a, nz), complex)
        for s, f in enumerate(features):
            scale = mb.rho[s] * mb.zeta[s]
            amp = np.sqrt(f.gamma[a:b] + np.abs(mus[s][a:b]) ** 2 * mb.p_ddot[s])
            M[:, :, s] = (scale * amp)[:, None] * mb.psi[s, a:b]
            mean += (scale * mus[s][a:b])[:, None] * mb.psi[s, a:b]
        iota[a:b] = fastmsg.iota_logpdf_batch(M, eta_bar, z[None, :] - mean)

    # nu: shared factors, isotropic term per noise particle
    nu = fastmsg.nu_logpdf_batch(mb.m.T if S else None, eta, z - mb.mu3.sum(axis=0))

    kappa = np.zeros((S, P))
    omega = np.zeros(S)
    mu3_total = mb.mu3.sum(axis=0)
    for s, f in enumerate(features):
        others = [t for t in range(S) if t != s]
        A = fastmsg.LowRankGaussian(eta_bar, mb.m[others].T if others else None)
        e0 = z - (mu3_total - mb.mu3[s])
        q = (f.gamma + np.abs(mus[s]) ** 2 * mb.p_dot_j[s]) * mb.zeta[s]
        c = mus[s] * mb.zeta[s]
        kappa[s] = fastmsg.kappa_log_ratio(A, mb.psi[s], q, c, e0)
        omega[s] = fastmsg.omega_log_ratio(A, mb.m_omega[s], mb.mu4[s], e0)
    return iota, nu, kappa, omega


def compute_fast(z, x_pos, w_beta, eta, w_eta, features, pas, rf, zero_mean=False) -> Messages:
    J = len(pas)
    P = x_pos.shape[0]
    S = len(features)
    out = Messages(np.empty((J, P)), np.empty((J, eta.shape[1])),
                   np.empty((S, J, P)), np.empty((S, J)))
    for j, pa in enumerate(pas):
        i, n, k, o = _fast_pa(z[j], x_pos, w_beta, eta[j], w_eta[j], features, j, pa, rf, zero_mean)
        out.iota[j], out.nu[j], out.kappa[:, j], out.omega[:, j] = i, n, k, o
    return out


# Dense mixture moments ----------------------------------------------------


def _component_moments(first, second):
    """Conditional moments from independent components.

    ``first[c]`` has shape (Px, Nz) and ``second[c]`` (Px, Nz, Nz). Returns the
    mean (Px, Nz) and the raw second moment without noise (Px, Nz, Nz).
    """
    mean = sum(first)
    raw = sum(second) + np.einsum("pi,pj->pij", mean, mean.conj())
    for f in first:
        raw = raw - np.einsum("pi,pj->pij", f, f.conj())
    return mean, raw


def _mix(w, mean, raw):
    m = w @ mean
    return m, np.einsum("p,pij->ij", w, raw) - np.outer(m, m.conj())


def _pair_steering(x_pos, feat, pa, rf):
    """Steering for every (MT particle, PF particle) pair: (Px, P, Nz)."""
    Px, P = x_pos.shape[0], feat.gamma.shape[0]
    xs = np.repeat(x_pos, P, axis=0)
    if feat.psfv is None:
        psi = steering(xs, None, pa, rf)
    else:
        psi = steering(xs, np.tile(feat.psfv, (Px, 1)), pa, rf)
    return psi.reshape(Px, P, -1)


def exact_pa_moments(x_pos, w_beta, eta, w_eta, features, j, pa, rf, zero_mean=False):
    """Dense moments of every message at PA ``j``.

    Returns a dict with ``iota`` -> (means (Px,Nz), covs (Px,Nz,Nz)),
    ``nu`` -> (mean, cov without the eta*I term), ``kappa1`` -> per feature
    (means (P,Nz), covs (P,Nz,Nz)), ``kappa0`` / ``omega1`` / ``omega0`` ->
    per feature (mean, cov).
    """
    nz = rf.nf * pa.geometry.n_elements
    eye = np.eye(nz)
    eta_bar = float(w_eta @ eta)
    Px = x_pos.shape[0]
    first, second, first_w, second_w, pairs, mus = [], [], [], [], [], []
    for f in features:
        psi = _pair_steering(x_pos, f, pa, rf)
        mu = np.zeros_like(f.mu) if zero_mean else f.mu
        pw = np.abs(mu) ** 2 + f.gamma
        fw = np.einsum("p,xpi->xi", f.alpha * mu, psi)
        sw = np.einsum("p,xpi,xpj->xij", f.alpha * pw, psi, psi.conj())
        zj = f.zeta[j]
        first.append(zj * fw)
        second.append(zj * sw)
        first_w.append(fw)
        second_w.append(sw)
        pairs.append(psi)
        mus.append(mu)
    S = len(features)
    zero1 = np.zeros((Px, nz), complex)
    zero2 = np.zeros((Px, nz, nz), complex)
    mean_x, raw_x = _component_moments(first or [zero1], second or [zero2])
    cov_iota = eta_bar * eye + raw_x - np.einsum("pi,pj->pij", mean_x, mean_x.conj())
    out = {"iota": (mean_x, cov_iota), "nu": _mix(w_beta, mean_x, raw_x),
           "kappa1": [], "kappa0": [], "omega1": [], "omega0": [], "eta_bar": eta_bar}
    for s, f in enumerate(features):
        oth = [t for t in range(S) if t != s]
        f_o = [first[t] for t in oth] or [zero1]
        s_o = [second[t] for t in oth] or [zero2]
        m0, c0 = _mix(w_beta, *_component_moments(f_o, s_o))
        c0 = c0 + eta_bar * eye
        out["kappa0"].append((m0, c0))
        zj = f.zeta[j]
        means, covs = [], []
        for p in range(f.gamma.shape[0]):
            psi = pairs[s][:, p]
            t1 = zj * mus[s][p] * psi
            t2 = zj * (abs(mus[s][p]) ** 2 + f.gamma[p]) * np.einsum("xi,xj->xij", psi, psi.conj())
            m1, c1 = _mix(w_beta, *_component_moments(f_o + [t1], s_o + [t2]))
            means.append(m1)
            covs.append(c1 + eta_bar * eye)
        out["kappa1"].append((np.array(means), np.array(covs)))
        m1, c1 = _mix(w_beta, *_component_moments(f_o + [first_w[s]], s_o + [second_w[s]]))
        out["omega1"].append((m1, c1 + eta_bar * eye))
        out["omega0"].append((m0, c0))
    return out


def compute_exact(z, x_pos, w_beta, eta, w_eta, features, pas, rf, zero_mean=False) -> Messages:
    J = len(pas)
    P = x_pos.shape[0]
    S = len(features)
    out = Messages(np.empty((J, P)), np.empty((J, eta.shape[1])),
                   np.empty((S, J, features[0].gamma.shape[0] if S else 0)), np.empty((S, J)))
    for j, pa in enumerate(pas):
        mo = exact_pa_moments(x_pos, w_beta, eta[j], w_eta[j], features, j, pa, rf, zero_mean)
        nz = z[j].shape[0]
        means, covs = mo["iota"]
        out.iota[j] = [fastmsg.dense_logpdf(covs[p], z[j], means[p]) for p in range(P)]
        m_nu, c_nu = mo["nu"]
        out.nu[j] = [fastmsg.dense_logpdf(c_nu + e * np.eye(nz), z[j], m_nu) for e in eta[j]]
        for s in range(S):
            m0, c0 = mo["kappa0"][s]
            l0 = fastmsg.dense_logpdf(c0, z[j], m0)
            m1, c1 = mo["kappa1"][s]
            out.kappa[s, j] = [fastmsg.dense_logpdf(c1[p], z[j], m1[p]) - l0
                               for p in range(m1.shape[0])]
            mw, cw = mo["omega1"][s]
            out.omega[s, j] = fastmsg.dense_logpdf(cw, z[j], mw) - l0
    return out


def compute_messages(mode, *args, **kw) -> Messages:
    if mode == "fast":
        return compute_fast(*args, **kw)
    if mode == "exact":
        return compute_exact(*args, **kw)
    raise ValueError(f"unknown message mode {mode!r}")
