"""Particle belief-propagation SLAM filter.

One call of :meth:`SlamFilter.step` runs: prediction (MT, noise, legacy PFs,
PPRs) with one newborn PF per ROI partition, the moment-matched update
messages, belief calculation, track management, MMSE estimation and finally
systematic resampling with kernel regularization.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp
from scipy.stats import multivariate_normal

from . import messages as msg
from .channel import RfParams, steering
from .priors import (Box, NcvModel, PriorParams, pf_transition_kernel, pr_transition,
                     sample_gamma_transition, sample_mt_transition, sample_mu_transition,
                     sample_sfv_walk)

log = logging.getLogger(__name__)

# RNG stream identifiers, combined with (seed, step) in a SeedSequence spawn key
_INIT, _MT, _NOISE, _TRACK, _BIRTH, _RS_MT, _RS_NOISE, _RS_TRACK = range(8)


def stream(seed: int, *key) -> np.random.Generator:
    """Counter-based generator for an entity at a step."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Track:
    id: int
    psfv: np.ndarray | None  # (P, 3); None for the LOS
    gamma: np.ndarray
    mu: np.ndarray
    w: np.ndarray  # sums to the existence mass
    ppr: np.ndarray  # (J,)
    born: int
    declared: bool = False
    est_psfv: np.ndarray | None = None

    @property
    def is_los(self) -> bool:
        return self.psfv is None

    @property
    def existence(self) -> float:
        return float(self.w.sum())

    def view(self) -> msg.FeatureView:
        return msg.FeatureView(self.psfv, self.gamma, self.mu, self.w, self.ppr)


@dataclass
class FilterState:
    x: np.ndarray  # (P, 6)
    wx: np.ndarray  # (P,)
    eta: np.ndarray  # (J, P)
    weta: np.ndarray  # (J, P)
    tracks: list  # LOS first
    n: int = 0
    next_id: int = 1

    @property
    def los(self) -> Track:
        return self.tracks[0]


@dataclass
class FilterConfig:
    n_particles: int = 2000
    n_grid: int = 2000
    t_dec: float = 0.5
    t_pru: float = 0.1
    variant: str = "nzm"
    message_mode: str = "fast"
    v_init_std: float = 0.1
    v_init_mean: tuple = (0.0, 0.0, 0.0)
    regularize: bool = True

    def __post_init__(self):
        if self.variant not in ("nzm", "zm"):
            raise ValueError("variant must be 'nzm' or 'zm'")
        if self.message_mode not in ("fast", "exact"):
            raise ValueError("message_mode must be 'fast' or 'exact'")
        if self.n_particles < 1 or self.n_grid < 1:
            raise ValueError("particle and grid counts must be positive")
        if not 0 <= self.t_pru <= self.t_dec <= 1:
            raise ValueError("thresholds must satisfy 0 <= t_pru <= t_dec <= 1")


@dataclass
class Estimate:
    n: int
    mt: np.ndarray
    eta: np.ndarray
    tracks: list = field(default_factory=list)


@dataclass
class BirthProposal:
    mean: np.ndarray
    cov: np.ndarray
    particles: np.ndarray
    weights: np.ndarray
    bartlett: np.ndarray
    candidates: np.ndarray


# Elementary operations ----------------------------------------------------


def resample_systematic(weights, rng, n=None) -> np.ndarray:
    """Indices of a systematic resampling draw."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ValueError("cannot resample a zero-mass particle set")
    n = w.shape[0] if n is None else n
    cdf = np.cumsum(w / total)
    cdf[-1] = 1.0
    pos = (rng.uniform() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, pos, side="right"), w.shape[0] - 1)


def kernel_bandwidth(d: int, n: int) -> float:
    return (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def regularize(particles, rng, h=None, cov=None) -> np.ndarray:
    """Gaussian kernel jitter with covariance ``h**2 * cov`` (sample covariance by default)."""
    x = np.asarray(particles, dtype=float)
    P, d = x.shape
    h = kernel_bandwidth(d, P) if h is None else h
    if h == 0 or P < 2:
        return x.copy()
    c = np.atleast_2d(np.cov(x, rowvar=False)) if cov is None else np.asarray(cov, float)
    lam, V = np.linalg.eigh(0.5 * (c + c.T))
    floor = 1e-12 * max(lam.max(), 0.0)
    lam = np.maximum(lam, floor)
    root = V * np.sqrt(lam)
    return x + h * rng.standard_normal((P, d)) @ root.T


def belief_cov(particles, weights, floor=None) -> np.ndarray:
    """Weighted second central moment of a particle belief, plus an optional diagonal floor."""
    x = np.asarray(particles, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    d = x - w @ x
    c = (d * w[:, None]).T @ d
    if floor is not None:
        c = c + np.diag(np.broadcast_to(np.asarray(floor, float), (x.shape[1],)))
    return c


def residual_projector(psi_mat) -> np.ndarray:
    """``I - Psi Psi^+``; a Tikhonov ridge stands in for the inverse when rank-deficient."""
    Psi = np.asarray(psi_mat, dtype=complex)
    if Psi.ndim == 1:
        Psi = Psi[:, None]
    nz, L = Psi.shape
    G = Psi.conj().T @ Psi
    if np.linalg.matrix_rank(G) < L:
        ridge = 1e-10 * np.trace(G).real
        warnings.warn(f"rank-deficient steering matrix; using ridge {ridge:.3g}", RuntimeWarning)
        G = G + ridge * np.eye(L)
    return np.eye(nz) - Psi @ np.linalg.solve(G, Psi.conj().T)


def bartlett(residuals, x_hat, candidates, pas, rf) -> np.ndarray:
    """Coherent Bartlett spectrum summed over PAs, one value per candidate SFV."""
    acc = np.zeros(candidates.shape[0], complex)
    xs = np.broadcast_to(np.asarray(x_hat, float), candidates.shape)
    for res, pa in zip(residuals, pas):
        psi = steering(xs, candidates, pa, rf)
        acc += psi @ res.conj() / res.shape[0]
    return np.abs(acc) ** 2


def birth_proposal(residuals, x_hat, box: Box, n_grid, pas, rf, rng, n_particles, mass) -> BirthProposal:
    cand = box.sample(rng, n_grid)
    res = np.asarray(residuals)
    if np.all(res == 0):
        bw = np.ones(n_grid)
        mean = cand[0].copy()
    else:
        bw = bartlett(res, x_hat, cand, pas, rf)
        mean = cand[int(np.argmax(bw))].copy()
    wn = bw / bw.sum()
    d = cand - mean
    cov = (wn[:, None] * d).T @ d
    cov = 0.5 * (cov + cov.T) + 1e-12 * np.eye(3)
    parts = rng.multivariate_normal(mean, cov, size=n_particles)
    inside = box.contains(parts)
    logq = multivariate_normal(mean, cov).logpdf(parts)
    lw = np.where(inside, -logq, -np.inf)
    if not np.any(inside):
        lw = -logq
    w = np.exp(lw - logsumexp(lw))
    return BirthProposal(mean, cov, parts, mass * w, bw, cand)


def update_pr(zeta, log_ratio) -> np.ndarray:
    """Posterior PPR probability as ``sigmoid(logit(zeta) + log omega1/omega0)``."""
    zeta = np.asarray(zeta, float)
    with np.errstate(divide="ignore"):
        logit = np.log(zeta) - np.log1p(-zeta)
    return expit(logit + log_ratio)


def update_pf(alpha, log_kappa) -> np.ndarray:
    """Posterior PF weights (sum = existence) from per-particle ``sum_j log kappa1/kappa0``."""
    alpha = np.asarray(alpha, float)
    L = np.asarray(log_kappa, float)
    rho = alpha.sum()
    with np.errstate(divide="ignore"):
        la = np.log(alpha) + L
        l_null = np.log1p(-rho) if rho < 1 else -np.inf
    top = max(np.max(la), l_null)
    num = np.exp(la - top)
    den = num.sum() + np.exp(l_null - top)
    w = num / den
    total = w.sum()
    # rounding can push the mass a hair above one when the null branch is empty
    return w / total if total > 1.0 else w


def normalize_log(logw) -> np.ndarray:
    logw = np.asarray(logw, float)
    return np.exp(logw - logsumexp(logw))


def update_mt(w_beta, log_iota) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return normalize_log(np.log(w_beta) + np.sum(log_iota, axis=0))


def update_noise(w_xi, log_nu) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return normalize_log(np.log(w_xi) + log_nu)


def manage_tracks(tracks, t_dec, t_pru) -> list:
    kept = []
    for t in tracks:
        ex = t.existence
        if not t.is_los and ex < t_pru:
            continue
        t.declared = ex > t_dec
        kept.append(t)
    return kept


def estimate(state: FilterState) -> Estimate:
    mt = state.wx @ state.x
    eta = np.einsum("jp,jp->j", state.weta, state.eta)
    rows = []
    for t in state.tracks:
        ex = t.existence
        if ex <= 0:
            raise ValueError(f"track {t.id} has zero mass")
        wn = t.w / ex
        rows.append({
            "id": t.id, "los": t.is_los, "existence": ex, "declared": t.declared,
            "psfv": None if t.is_los else wn @ t.psfv,
            "gamma": float(wn @ t.gamma), "mu": complex(wn @ t.mu),
            "ppr": t.ppr.copy(),
        })
    return Estimate(state.n, mt, eta, rows)


# Filter -------------------------------------------------------------------


class SlamFilter:
    def __init__(self, pas, rf: RfParams, priors: PriorParams, ncv: NcvModel,
                 cfg: FilterConfig | None = None, seed: int = 0):
        self.pas = list(pas)
        self.rf = rf
        self.priors = priors
        self.ncv = ncv
        self.cfg = cfg or FilterConfig()
        self.seed = int(seed)
        self.last_messages = None
        self.last_births = []

    @property
    def J(self):
        return len(self.pas)

    def _new_amplitudes(self, rng, P):
        return self.priors.sample_amplitude_prior(rng, P)

    def initialize(self) -> FilterState:
        P = self.cfg.n_particles
        rng = stream(self.seed, 0, _INIT)
        pos = self.priors.mt_box.sample(rng, P)
        vel = np.asarray(self.cfg.v_init_mean, float) + self.cfg.v_init_std * rng.standard_normal((P, 3))
        eta = np.stack([self.priors.sample_eta_prior(rng, P) for _ in range(self.J)])
        gamma, mu = self._new_amplitudes(rng, P)
        pb = self.priors.pb
        los = Track(0, None, gamma, mu, np.full(P, pb / P), np.full(self.J, self.priors.pb_pr), 0)
        # state at n=0 holds prior beliefs; the LOS is treated as a PF about to be born
        return FilterState(np.hstack([pos, vel]), np.full(P, 1.0 / P), eta,
                           np.full((self.J, P), 1.0 / P), [los], 0, 1)

    # phase (i): prediction and births
    def predict(self, state: FilterState, z) -> FilterState:
        n = state.n + 1
        pr = self.priors
        P = state.x.shape[0]
        x = sample_mt_transition(state.x, self.ncv, stream(self.seed, n, _MT))
        rng = stream(self.seed, n, _NOISE)
        eta = np.stack([sample_gamma_transition(e, pr.c_eta, rng) for e in state.eta])
        tracks = []
        for t in state.tracks:
            r = stream(self.seed, n, _TRACK, t.id)
            if n == 1 and t.is_los:
                # the LOS enters like a newborn PF: birth prior mass, PPR birth probability
                tracks.append(Track(t.id, None, t.gamma, t.mu, t.w.copy(), t.ppr.copy(), n))
                continue
            alpha, _ = pf_transition_kernel(t.w, pr.ps)
            zeta, _ = pr_transition(t.ppr, pr.ps_pr, pr.pr_rev)
            tracks.append(Track(
                t.id,
                None if t.is_los else sample_sfv_walk(t.psfv, pr.sigma_sfv, r),
                sample_gamma_transition(np.maximum(t.gamma, 1e-300), pr.c_gamma, r),
                sample_mu_transition(t.mu, pr.sigma_mu, r),
                alpha, zeta, t.born, t.declared, t.est_psfv,
            ))
        pred = FilterState(x, state.wx.copy(), eta, state.weta.copy(), tracks, n, state.next_id)
        self._births(pred, z)
        return pred

    def residuals(self, pred: FilterState, z) -> np.ndarray:
        x_hat = pred.wx @ pred.x[:, :3]
        res = np.empty_like(np.asarray(z, complex))
        for j, pa in enumerate(self.pas):
            cols = [steering(x_hat, None, pa, self.rf)]
            for t in pred.tracks:
                if not t.is_los and t.born < pred.n and t.est_psfv is not None:
                    cols.append(steering(x_hat, t.est_psfv, pa, self.rf))
            Pi = residual_projector(np.stack(cols, axis=1))
            res[j] = Pi @ z[j]
        return res

    def _births(self, pred: FilterState, z):
        P = pred.x.shape[0]
        x_hat = pred.wx @ pred.x[:, :3]
        res = self.residuals(pred, z)
        rng = stream(self.seed, pred.n, _BIRTH)
        self.last_births = []
        for box in self.priors.partitions():
            bp = birth_proposal(res, x_hat, box, self.cfg.n_grid, self.pas, self.rf, rng,
                                P, self.priors.pb)
            gamma, mu = self._new_amplitudes(rng, P)
            pred.tracks.append(Track(pred.next_id, bp.particles, gamma, mu, bp.weights,
                                     np.full(self.J, self.priors.pb_pr), pred.n))
            pred.next_id += 1
            self.last_births.append(bp)

    # phases (ii)-(iii): messages
    def messages(self, pred: FilterState, z) -> msg.Messages:
        return msg.compute_messages(
            self.cfg.message_mode, np.asarray(z, complex), pred.x[:, :3], pred.wx,
            pred.eta, pred.weta, [t.view() for t in pred.tracks], self.pas, self.rf,
            zero_mean=self.cfg.variant == "zm")

    def beliefs(self, pred: FilterState, m: msg.Messages) -> FilterState:
        wx = update_mt(pred.wx, m.iota)
        weta = np.stack([update_noise(pred.weta[j], m.nu[j]) for j in range(self.J)])
        tracks = []
        for s, t in enumerate(pred.tracks):
            w = update_pf(t.w, m.kappa[s].sum(axis=0))
            ppr = update_pr(t.ppr, m.omega[s])
            tracks.append(Track(t.id, t.psfv, t.gamma, t.mu, w, ppr, t.born, t.declared, t.est_psfv))
        return FilterState(pred.x, wx, pred.eta, weta, tracks, pred.n, pred.next_id)

    def resample(self, post: FilterState) -> FilterState:
        # Kernel covariance: weighted belief moment with a diagonal floor at
        # the one-step transition spread, so a collapsed belief still jitters.
        n, P = post.n, post.x.shape[0]
        reg = self.cfg.regularize
        pri = self.priors
        r = stream(self.seed, n, _RS_MT)
        idx = resample_systematic(post.wx, r)
        x = post.x[idx]
        if reg:
            x = regularize(x, r, cov=belief_cov(post.x, post.wx, np.diag(self.ncv.Q)))
        r = stream(self.seed, n, _RS_NOISE)
        eta = np.empty_like(post.eta)
        for j in range(self.J):
            e = post.eta[j, resample_systematic(post.weta[j], r)]
            if reg:
                floor = (post.weta[j] @ post.eta[j]) ** 2 / pri.c_eta
                c = belief_cov(post.eta[j], post.weta[j], floor)
                e = np.abs(regularize(e[:, None], r, cov=c)[:, 0])
            eta[j] = e
        tracks = []
        for t in post.tracks:
            r = stream(self.seed, n, _RS_TRACK, t.id)
            ex = t.existence
            idx = resample_systematic(t.w, r)
            full = np.column_stack([t.gamma, t.mu.real, t.mu.imag])
            floor = [(t.w / ex @ t.gamma) ** 2 / pri.c_gamma] + [pri.sigma_mu**2 / 2] * 2
            if not t.is_los:
                full = np.column_stack([t.psfv, full])
                floor = [pri.sigma_sfv**2] * 3 + floor
            v = full[idx]
            if reg:
                v = regularize(v, r, cov=belief_cov(full, t.w, floor))
            off = 0 if t.is_los else 3
            psfv = None if t.is_los else v[:, :3]
            est = None if t.is_los else (t.w / ex) @ t.psfv
            tracks.append(Track(t.id, psfv, np.abs(v[:, off]), v[:, off + 1] + 1j * v[:, off + 2],
                                np.full(P, ex / P), t.ppr, t.born, t.declared, est))
        return FilterState(x, np.full(P, 1.0 / P), eta, np.full((self.J, P), 1.0 / P),
                           tracks, n, post.next_id)

    def step(self, state: FilterState, z):
        z = np.asarray(z, complex)
        if z.shape[0] != self.J:
            raise ValueError(f"expected observations for {self.J} PAs, got {z.shape[0]}")
        pred = self.predict(state, z)
        m = self.messages(pred, z)
        self.last_messages = m
        post = self.beliefs(pred, m)
        post.tracks = manage_tracks(post.tracks, self.cfg.t_dec, self.cfg.t_pru)
        est = estimate(post)
        return self.resample(post), est

    def run(self, observations, callback=None):
        state = self.initialize()
        out = []
        for z in observations:
            state, est = self.step(state, z)
            out.append(est)
            if callback is not None:
                callback(state, est)
        return state, out
