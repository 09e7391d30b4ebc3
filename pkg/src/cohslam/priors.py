"""State-transition and birth densities for the MT, noise and potential features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from .channel import complex_normal


@dataclass(frozen=True)
class NcvModel:
    dt: float
    sigma_v: float
    F: np.ndarray
    Q: np.ndarray
    gain: np.ndarray


def ncv_build(dt: float, sigma_v: float) -> NcvModel:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if sigma_v < 0:
        raise ValueError("sigma_v must be nonnegative")
    eye = np.eye(3)
    F = np.eye(6)
    F[:3, 3:] = dt * eye
    gain = np.vstack([0.5 * dt**2 * eye, dt * eye])
    return NcvModel(float(dt), float(sigma_v), F, sigma_v**2 * gain @ gain.T, gain)


def sample_mt_transition(x, model: NcvModel, rng: np.random.Generator) -> np.ndarray:
    """Propagate states ``(..., 6)``; noise enters through the acceleration gain."""
    x = np.asarray(x, dtype=float)
    acc = rng.standard_normal(x.shape[:-1] + (3,)) * model.sigma_v
    return x @ model.F.T + acc @ model.gain.T


def mt_transition_logpdf(x_next, x, model: NcvModel) -> np.ndarray:
    # Q has rank 3; the density lives on the affine support of the gain.
    mean = np.asarray(x, float) @ model.F.T
    diff = np.asarray(x_next, float) - mean
    return multivariate_normal(np.zeros(6), model.Q, allow_singular=True).logpdf(diff)


def sample_gamma_transition(prev, c: float, rng: np.random.Generator) -> np.ndarray:
    """Gamma(shape=c, scale=prev/c): mean ``prev``, variance ``prev**2/c``."""
    prev = np.asarray(prev, dtype=float)
    if c <= 0 or np.any(prev <= 0):
        raise ValueError("gamma transition needs positive shape and previous value")
    return rng.gamma(c, prev / c)


def sample_mu_transition(prev, sigma_mu: float, rng: np.random.Generator) -> np.ndarray:
    if sigma_mu < 0:
        raise ValueError("sigma_mu must be nonnegative")
    prev = np.asarray(prev, dtype=complex)
    if sigma_mu == 0:
        return prev.copy()
    return prev + complex_normal(rng, prev.shape, sigma_mu**2)


def sample_sfv_walk(prev, sigma_sfv: float, rng: np.random.Generator) -> np.ndarray:
    if sigma_sfv < 0:
        raise ValueError("sigma_sfv must be nonnegative")
    prev = np.asarray(prev, dtype=float)
    if sigma_sfv == 0:
        return prev.copy()
    return prev + sigma_sfv * rng.standard_normal(prev.shape)


def birth_bernoulli(mu_b: float, vq_fraction: float = 1.0) -> float:
    """Bernoulli approximation of a Poisson birth count with mean ``mu_b * vq_fraction``."""
    if mu_b < 0 or vq_fraction < 0:
        raise ValueError("birth mean must be nonnegative")
    m = mu_b * vq_fraction
    return m / (1.0 + m)


def pf_transition_kernel(weights, ps: float):
    """Legacy PF prediction: returns (survival weights, dummy-branch mass).

    The survival branch carries ``ps`` times the prior existence mass; the
    remainder lives on the dummy (nonexistent) branch so the two sum to one.
    """
    w = np.asarray(weights, dtype=float)
    alpha = ps * w
    return alpha, 1.0 - float(alpha.sum())


def pr_transition(prev_prob, ps_pr: float, pr_rev: float):
    b = np.asarray(prev_prob, dtype=float)
    for v in (ps_pr, pr_rev):
        if not 0 <= v <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
    z1 = ps_pr * b + pr_rev * (1.0 - b)
    return z1, 1.0 - z1


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.hi) <= np.asarray(self.lo)):
            raise ValueError("box upper bounds must exceed lower bounds")

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    def sample(self, rng, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, len(self.lo)))

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)


@dataclass(frozen=True)
class PriorParams:
    """Hyperparameters for every transition and birth density."""

    mt_box: Box
    sfv_box: Box
    eta_range: tuple
    c_eta: float = 10.0
    c_gamma: float = 1000.0
    sigma_mu: float = 0.03
    sigma_sfv: float = 0.004
    gamma_max: float = 5.0
    mu_max: float = 0.001
    ps: float = 0.8
    ps_pr: float = 0.9
    pr_rev: float = 0.1
    pb_pr: float = 0.9
    mu_b: float = 0.5
    n_partitions: int = 1

    def __post_init__(self):
        for name in ("ps", "ps_pr", "pr_rev", "pb_pr"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.eta_range
        if not 0 < lo < hi:
            raise ValueError("eta_range must satisfy 0 < lo < hi")

    @property
    def pb(self) -> float:
        return birth_bernoulli(self.mu_b, 1.0 / self.n_partitions)

    def partitions(self) -> list:
        """Split the SFV ROI into equal slabs along x."""
        lo, hi = np.asarray(self.sfv_box.lo, float), np.asarray(self.sfv_box.hi, float)
        edges = np.linspace(lo[0], hi[0], self.n_partitions + 1)
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            out.append(Box(np.r_[a, lo[1:]], np.r_[b, hi[1:]]))
        return out

    def dummy_density(self) -> float:
        """Constant of the uniform dummy PDF over ROI x [0, gamma_max] x disc(mu_max)."""
        return 1.0 / (self.sfv_box.volume * self.gamma_max * np.pi * self.mu_max**2)

    def sample_amplitude_prior(self, rng, n: int):
        gamma = rng.uniform(0.0, self.gamma_max, n)
        rad = self.mu_max * np.sqrt(rng.uniform(0.0, 1.0, n))
        ang = rng.uniform(-np.pi, np.pi, n)
        return gamma, rad * np.exp(1j * ang)

    def sample_eta_prior(self, rng, n: int) -> np.ndarray:
        return rng.uniform(self.eta_range[0], self.eta_range[1], n)
