"""Synthetic truth and observation generation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import complex_normal, n_obs, noiseless_signal, snr_noise_variance
from .config import Scenario
from .priors import ncv_build, sample_mt_transition, sample_sfv_walk

# stream tags for data generation; the filter uses its own seed
_TRAJ, _SFV, _AMP, _OBS = 101, 102, 103, 104


def data_rng(seed: int, run: int, tag: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(run), int(tag)))
    return np.random.Generator(np.random.Philox(ss))


def filter_seed(seed: int, run: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(run), 99)).generate_state(1)[0])


@dataclass
class Dataset:
    x: np.ndarray        # (N, 6)
    psfv: np.ndarray     # (N, K, 3)
    amps: np.ndarray     # (N, J, K+1), zero where blocked
    visible: np.ndarray  # (N, J, K+1) bool
    eta: float
    z: np.ndarray        # (N, J, Nz)
    run: int = 0

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    def visible_counts(self) -> np.ndarray:
        return self.visible.sum(axis=2)


def visibility_mask(scn: Scenario) -> np.ndarray:
    vis = np.ones((scn.steps, scn.n_pa, scn.n_surfaces + 1), dtype=bool)
    for k, j, a, b in scn.visibility:
        vis[a - 1:b, j, k] = False
    return vis


def mt_trajectory(scn: Scenario, rng) -> np.ndarray:
    tr = scn.trajectory
    n = scn.steps
    if tr["mode"] == "scripted":
        wp = tr["waypoints"]
        t = np.arange(1, n + 1) * scn.dt
        pos = np.column_stack([np.interp(t, wp[:, 0], wp[:, i]) for i in (1, 2, 3)])
        vel = np.gradient(pos, scn.dt, axis=0) if n > 1 else np.zeros_like(pos)
        return np.hstack([pos, vel])
    ncv = ncv_build(scn.dt, scn.sigma_v)
    planar = bool(tr.get("planar", False))
    x = np.array(tr["x0"], float)
    out = np.empty((n, 6))
    for i in range(n):
        x = sample_mt_transition(x, ncv, rng)
        if planar:
            x[2] = tr["x0"][2]
            x[5] = 0.0
        out[i] = x
    return out


def sfv_walks(scn: Scenario, rng) -> np.ndarray:
    sig = scn.priors.sigma_sfv
    out = np.empty((scn.steps, scn.n_surfaces, 3))
    s = np.array([f.psfv for f in scn.surfaces]).reshape(scn.n_surfaces, 3)
    for i in range(scn.steps):
        s = sample_sfv_walk(s, sig, rng) if sig > 0 else s.copy()
        out[i] = s
    return out


def generate_dataset(scn: Scenario, run: int = 0, seed: int | None = None) -> Dataset:
    """One MC realization: NCV truth, SFV random walks, gated amplitudes, noisy observations."""
    seed = scn.seed if seed is None else seed
    x = mt_trajectory(scn, data_rng(seed, run, _TRAJ))
    psfv = sfv_walks(scn, data_rng(seed, run, _SFV))
    vis = visibility_mask(scn)
    kt = scn.n_surfaces + 1
    mus = np.array([scn.los_mu] + [s.mu for s in scn.surfaces])
    gam = np.array([scn.los_gamma] + [s.gamma for s in scn.surfaces])
    rng = data_rng(seed, run, _AMP)
    amps = mus + complex_normal(rng, (scn.steps, scn.n_pa, kt), 1.0) * np.sqrt(gam)
    amps = np.where(vis, amps, 0.0)
    clean = np.empty((scn.steps, scn.n_pa, n_obs(scn.rf, scn.pas[0].geometry)), complex)
    for n in range(scn.steps):
        for j, pa in enumerate(scn.pas):
            feats = [(None if k == 0 else psfv[n, k - 1], amps[n, j, k], vis[n, j, k])
                     for k in range(kt)]
            clean[n, j] = noiseless_signal(x[n, :3], feats, pa, scn.rf)
    eta = snr_noise_variance(list(clean[0]), scn.snr_db)
    z = clean + complex_normal(data_rng(seed, run, _OBS), clean.shape, eta)
    return Dataset(x, psfv, amps, vis, float(eta), z, run)
