"""scikit-learn style wrapper around the SLAM filter."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import Scenario, load
from .harness import build_filter


def check_observations(Z, n_pa: int, n_entries: int) -> np.ndarray:
    """Coerce to a complex ``(N, J, Nz)`` array and reject bad shapes or values."""
    z = np.asarray(Z)
    if z.ndim == 2:
        z = z[None]
    if z.ndim != 3:
        raise ValueError(f"observations must have shape (N, J, Nz), got {z.shape}")
    if z.shape[1:] != (n_pa, n_entries):
        raise ValueError(f"expected (N, {n_pa}, {n_entries}) observations, got {z.shape}")
    if z.shape[0] < 1:
        raise ValueError("need at least one time step")
    z = z.astype(complex, copy=False)
    if not np.all(np.isfinite(z)):
        raise ValueError("observations contain NaN or inf")
    return z


def check_scenario(scenario) -> Scenario:
    if isinstance(scenario, Scenario):
        return scenario
    if isinstance(scenario, (str, bytes)) or hasattr(scenario, "__fspath__"):
        return load(scenario)
    raise TypeError("scenario must be a Scenario or a path to a config file")


class SlamEstimator(BaseEstimator):
    """Sequential MT and map estimator.

    ``fit`` filters a block of observations from the prior; ``predict``
    continues from the fitted belief and returns MT positions, one row per step.
    """

    def __init__(self, scenario=None, variant="nzm", n_particles=None, seed=0):
        self.scenario = scenario
        self.variant = variant
        self.n_particles = n_particles
        self.seed = seed

    def _make_filter(self):
        scn = check_scenario(self.scenario)
        if self.variant not in ("nzm", "zm"):
            raise ValueError("variant must be 'nzm' or 'zm'")
        if self.n_particles is not None:
            scn.filter = {**scn.filter, "particles": int(self.n_particles)}
        return scn, build_filter(scn, self.variant, int(self.seed))

    def _consume(self, z):
        rows = []
        for zn in z:
            self.state_, est = self.filter_.step(self.state_, zn)
            rows.append(est)
        return rows

    def fit(self, Z, y=None):
        scn, self.filter_ = self._make_filter()
        z = check_observations(Z, scn.n_pa, scn.rf.nf * scn.pas[0].geometry.n_elements)
        self.state_ = self.filter_.initialize()
        est = self._consume(z)
        self.trajectory_ = np.array([e.mt for e in est])
        self.noise_variance_ = est[-1].eta
        self.map_ = [t for t in est[-1].tracks if t["declared"] and not t["los"]]
        self.n_steps_ = len(est)
        return self

    def predict(self, Z) -> np.ndarray:
        check_is_fitted(self, "state_")
        z = check_observations(Z, self.filter_.J, self.filter_.rf.nf * self.filter_.pas[0].geometry.n_elements)
        est = self._consume(z)
        self.n_steps_ += len(est)
        return np.array([e.mt[:3] for e in est])

    def score(self, Z, y) -> float:
        """Negative position RMSE against true positions ``y``."""
        p = self.predict(Z)
        return -float(np.sqrt(np.mean(np.sum((p - np.asarray(y)[:, :3]) ** 2, axis=1))))
