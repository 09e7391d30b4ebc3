"""Scenario configuration: JSON text files with nested sections.

Physical quantities (RF, arrays, anchors, surfaces, trajectory, SNR, steps)
must be present. Algorithmic knobs fall back to the documented defaults in
``FILTER_DEFAULTS``, ``PRIOR_DEFAULTS`` and ``BOUND_DEFAULTS``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import RfParams
from .geometry import PaConfig, rotation_zyx, template_layout
from .priors import Box, PriorParams

FILTER_DEFAULTS = {
    "particles": 2000,
    "grid": 2000,
    "t_dec": 0.5,
    "t_pru": 0.1,
    "message_mode": "fast",
    "v_init_std": 0.1,
    "regularize": True,
}

PRIOR_DEFAULTS = {
    "c_eta": 10.0,
    "c_gamma": 1000.0,
    "sigma_mu": 0.03,
    "sigma_sfv": 0.004,
    "gamma_max": 5.0,
    "mu_max": 0.001,
    "ps": 0.8,
    "ps_pr": 0.9,
    "pr_rev": 0.1,
    "pb_pr": 0.9,
    "mu_b": 0.5,
    "n_partitions": 1,
}

BOUND_DEFAULTS = {
    "draws": None,          # None: one draw per MC run
    "pseudo_variance": 1e6,
    "init_pos_std": None,   # None: uniform MT prior box
    "init_vel_std": None,   # None: filter v_init_std
    "init_sfv_std": None,   # None: sigma_sfv
}

REQUIRED = ("rf", "array", "anchors", "surfaces", "los", "trajectory", "snr_db", "steps", "prior")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source text when known."""

    def __init__(self, msg: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<config>'}:{line}: " if line else f"{path or '<config>'}: "
        super().__init__(where + msg)


@dataclass
class Surface:
    psfv: np.ndarray
    mu: complex
    gamma: float


@dataclass
class Scenario:
    raw: dict
    rf: RfParams
    pas: list
    surfaces: list
    los_mu: complex
    los_gamma: float
    trajectory: dict
    visibility: list
    snr_db: float
    steps: int
    dt: float
    sigma_v: float
    priors: PriorParams
    filter: dict
    bounds: dict
    mc_runs: int
    seed: int
    source: str | None = None

    @property
    def n_surfaces(self) -> int:
        return len(self.surfaces)

    @property
    def n_pa(self) -> int:
        return len(self.pas)


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def _vec(v, n, name):
    a = np.asarray(v, dtype=float)
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be {n} finite numbers")
    return a


def _cplx(v, name):
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    raise ValueError(f"{name} must be a number or [re, im]")


def _anchor(a, geom, i) -> PaConfig:
    pos = _vec(a["position"], 3, f"anchors[{i}].position")
    if "look_at" in a:
        d = _vec(a["look_at"], 3, f"anchors[{i}].look_at") - pos
        yaw = float(np.arctan2(d[1], d[0]))
        pitch = 0.0
    else:
        yaw = float(a.get("yaw", 0.0))
        pitch = float(a.get("pitch", 0.0))
    rot = rotation_zyx(yaw, pitch, float(a.get("roll", 0.0)))
    return PaConfig(pos, rot, geom)


def parse(cfg: dict, text: str = "", source: str | None = None) -> Scenario:
    """Build a :class:`Scenario`; errors carry the offending key's line."""
    key = None
    try:
        for key in REQUIRED:
            if key not in cfg:
                raise ValueError(f"missing required key '{key}'")
        key = "rf"
        rf = RfParams(float(cfg["rf"]["fc"]), float(cfg["rf"]["bandwidth"]), int(cfg["rf"]["nf"]))
        key = "array"
        ar = cfg["array"]
        sp = float(ar["spacing_wavelengths"]) * rf.wavelength
        geom = template_layout(int(ar["ny"]), int(ar["nz"]), sp, sp)
        key = "anchors"
        if not cfg["anchors"]:
            raise ValueError("at least one anchor is required")
        pas = [_anchor(a, geom, i) for i, a in enumerate(cfg["anchors"])]
        key = "surfaces"
        surfaces = [Surface(_vec(s["psfv"], 3, "psfv"), _cplx(s["mu"], "mu"), float(s["gamma"]))
                    for s in cfg["surfaces"]]
        for s in surfaces:
            if np.linalg.norm(s.psfv) == 0:
                raise ValueError("psfv must not be the origin")
            if s.gamma < 0:
                raise ValueError("gamma must be nonnegative")
        key = "los"
        los_mu = _cplx(cfg["los"]["mu"], "los.mu")
        los_gamma = float(cfg["los"]["gamma"])
        key = "trajectory"
        tr = dict(cfg["trajectory"])
        mode = tr.get("mode")
        if mode not in ("random", "scripted"):
            raise ValueError("trajectory.mode must be 'random' or 'scripted'")
        dt = float(tr["dt"])
        if dt <= 0:
            raise ValueError("trajectory.dt must be positive")
        sigma_v = float(tr["sigma_v"])
        if mode == "random":
            tr["x0"] = _vec(tr["x0"], 6, "trajectory.x0")
        else:
            wp = np.asarray(tr["waypoints"], float)
            if wp.ndim != 2 or wp.shape[1] != 4 or wp.shape[0] < 1:
                raise ValueError("trajectory.waypoints must be rows of [t, x, y, z]")
            if np.any(np.diff(wp[:, 0]) <= 0):
                raise ValueError("waypoint times must increase")
            tr["waypoints"] = wp
        key = "steps"
        steps = int(cfg["steps"])
        if steps < 1:
            raise ValueError("steps must be at least 1")
        key = "snr_db"
        snr_db = float(cfg["snr_db"])
        key = "visibility"
        vis = []
        for v in cfg.get("visibility", []):
            k, j = int(v["component"]), int(v["anchor"])
            a, b = (int(x) for x in v["blocked_steps"])
            if not (0 <= k <= len(surfaces) and 0 <= j < len(pas) and 1 <= a <= b):
                raise ValueError("visibility entry out of range")
            vis.append((k, j, a, b))
        key = "prior"
        pr = cfg["prior"]
        pvals = {**PRIOR_DEFAULTS, **{k: v for k, v in pr.items() if k in PRIOR_DEFAULTS}}
        pvals["sigma_sfv"] = float(pvals["sigma_sfv"])
        priors = PriorParams(
            mt_box=Box(_vec(pr["mt_box"][0], 3, "mt_box lo"), _vec(pr["mt_box"][1], 3, "mt_box hi")),
            sfv_box=Box(_vec(pr["sfv_box"][0], 3, "sfv_box lo"), _vec(pr["sfv_box"][1], 3, "sfv_box hi")),
            eta_range=tuple(float(x) for x in pr["eta_range"]),
            **{k: (int(v) if k == "n_partitions" else float(v)) for k, v in pvals.items()},
        )
        unknown = set(pr) - set(PRIOR_DEFAULTS) - {"mt_box", "sfv_box", "eta_range"}
        if unknown:
            raise ValueError(f"unknown prior keys {sorted(unknown)}")
        key = "filter"
        fl = {**FILTER_DEFAULTS, **cfg.get("filter", {})}
        unknown = set(fl) - set(FILTER_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown filter keys {sorted(unknown)}")
        if fl["message_mode"] not in ("fast", "exact"):
            raise ValueError("filter.message_mode must be 'fast' or 'exact'")
        key = "bounds"
        bd = {**BOUND_DEFAULTS, **cfg.get("bounds", {})}
        key = "mc_runs"
        mc_runs = int(cfg.get("mc_runs", 1))
        if mc_runs < 1:
            raise ValueError("mc_runs must be at least 1")
        key = "seed"
        seed = int(cfg.get("seed", 0))
        if seed < 0:
            raise ValueError("seed must be nonnegative")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        msg = f"missing key {e}" if isinstance(e, KeyError) else str(e)
        raise ConfigError(f"[{key}] {msg}", _line_of(text, key) if key else None, source) from e
    return Scenario(cfg, rf, pas, surfaces, los_mu, los_gamma, tr, vis, snr_db, steps, dt,
                    sigma_v, priors, fl, bd, mc_runs, seed, source)


def loads(text: str, source: str | None = None) -> Scenario:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, e.lineno, source) from e
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be an object", 1, source)
    return parse(cfg, text, source)


def load(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", None, str(p)) from e
    return loads(text, str(p))
