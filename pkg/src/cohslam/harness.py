"""Experiment driver: SLAM runs, bound curves and Monte-Carlo batches."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crlb
from .config import Scenario
from .dataset import Dataset, filter_seed, generate_dataset
from .engine import FilterConfig, SlamFilter
from .files import write_bounds, write_metrics, write_observations, write_run, write_truth
from .geometry import local_ray
from .metrics import MetricTable, compute_metrics, first_declaration
from .priors import ncv_build

log = logging.getLogger(__name__)

THREADS_ENV = "COHSLAM_THREADS"


@dataclass
class StepRecord:
    n: int
    mt: np.ndarray
    eta: np.ndarray
    tracks: list
    time: float


@dataclass
class RunRecord:
    run: int
    variant: str
    steps: list = field(default_factory=list)
    aborted: str | None = None


def build_filter(scn: Scenario, variant: str = "nzm", seed: int = 0) -> SlamFilter:
    fl = scn.filter
    x0 = scn.trajectory.get("x0")
    v_mean = (0.0, 0.0, 0.0) if x0 is None else tuple(float(v) for v in x0[3:])
    cfg = FilterConfig(
        n_particles=int(fl["particles"]), n_grid=int(fl["grid"]), t_dec=float(fl["t_dec"]),
        t_pru=float(fl["t_pru"]), variant=variant, message_mode=fl["message_mode"],
        v_init_std=float(fl["v_init_std"]), v_init_mean=v_mean, regularize=bool(fl["regularize"]),
    )
    return SlamFilter(scn.pas, scn.rf, scn.priors, ncv_build(scn.dt, scn.sigma_v), cfg, seed)


def run_slam(scn: Scenario, ds: Dataset, variant: str = "nzm", seed: int | None = None,
             steps: int | None = None) -> RunRecord:
    """Run the filter over a dataset; an engine failure aborts the run and is recorded."""
    seed = filter_seed(scn.seed, ds.run) if seed is None else seed
    flt = build_filter(scn, variant, seed)
    rec = RunRecord(ds.run, variant)
    state = flt.initialize()
    n_steps = ds.steps if steps is None else min(steps, ds.steps)
    for n in range(n_steps):
        t0 = time.perf_counter()
        try:
            state, est = flt.step(state, ds.z[n])
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            rec.aborted = f"step {n + 1}: {e}"
            log.warning("run %d aborted at %s", ds.run, rec.aborted)
            break
        rec.steps.append(StepRecord(est.n, est.mt, est.eta, est.tracks, time.perf_counter() - t0))
    return rec


# bounds -----------------------------------------------------------------------

def bound_states(scn: Scenario, ds: Dataset) -> list:
    """Global states along a true trajectory; moduli carry the path loss."""
    lam = scn.rf.wavelength
    out = []
    for n in range(ds.steps):
        mod = np.zeros((scn.n_pa, scn.n_surfaces + 1))
        for j, pa in enumerate(scn.pas):
            for k in range(scn.n_surfaces + 1):
                r = local_ray(ds.x[n, :3], None if k == 0 else ds.psfv[n, k - 1], pa, k)
                mod[j, k] = abs(ds.amps[n, j, k]) * lam / (4 * np.pi * np.linalg.norm(r))
        vis = ds.visible[n] & (mod > 0)
        out.append(crlb.BoundState(ds.x[n].copy(), ds.psfv[n].copy(), np.where(vis, mod, 1.0),
                                   ds.eta, vis))
    return out


def initial_information(scn: Scenario, mode) -> np.ndarray:
    bd = scn.bounds
    box = scn.priors.mt_box
    width = np.asarray(box.hi) - np.asarray(box.lo)
    pos_var = width ** 2 / 12.0 if bd["init_pos_std"] is None else float(bd["init_pos_std"]) ** 2
    vel_var = (float(scn.filter["v_init_std"]) if bd["init_vel_std"] is None
               else float(bd["init_vel_std"])) ** 2
    sfv_std = scn.priors.sigma_sfv if bd["init_sfv_std"] is None else float(bd["init_sfv_std"])
    return crlb.prior_information(pos_var, vel_var, max(sfv_std, 1e-9) ** 2, scn.n_surfaces,
                                  scn.n_pa, mode, float(bd["pseudo_variance"]))


def run_bounds(scn: Scenario, modes=("coherent", "noncoherent"), datasets=None) -> dict:
    """PEB/MEB recursion over the MC truth draws, one series per phase mode."""
    draws = scn.bounds["draws"] or scn.mc_runs
    if datasets is None:
        datasets = [generate_dataset(scn, r) for r in range(draws)]
    states = [bound_states(scn, ds) for ds in datasets]
    ncv = ncv_build(scn.dt, scn.sigma_v)
    out = {}
    for mode in modes:
        snaps = crlb.mc_expectation(states, scn.pas, scn.rf, mode)
        f, q = crlb.transition_matrices(ncv.F, ncv.Q, scn.n_surfaces, scn.n_pa, mode,
                                        scn.priors.sigma_sfv, float(scn.bounds["pseudo_variance"]))
        out[str(crlb.PhaseMode(mode).value)] = crlb.pcrlb_recursion(
            snaps, f, q, initial_information(scn, mode), scn.n_surfaces)
    return out


# Monte-Carlo ------------------------------------------------------------------

def _one_run(args):
    scn, run, variant, steps = args
    ds = generate_dataset(scn, run)
    return ds, run_slam(scn, ds, variant, steps=steps)


def thread_count(requested: int | None) -> int:
    env = os.environ.get(THREADS_ENV)
    n = int(env) if env else (requested or 1)
    return max(1, n)


@dataclass
class McResult:
    datasets: list
    records: dict          # variant -> list of RunRecord
    metrics: dict          # variant -> MetricTable
    declarations: dict     # variant -> (R, K) first declaration steps


def run_mc(scn: Scenario, variants=("nzm",), threads: int | None = None, runs: int | None = None,
           steps: int | None = None, out_dir=None) -> McResult:
    runs = scn.mc_runs if runs is None else runs
    n_workers = thread_count(threads)
    jobs = [(scn, r, v, steps) for v in variants for r in range(runs)]
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as ex:
            results = list(ex.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    datasets = [ds for ds, _ in results[:runs]]
    records, metrics, decl = {}, {}, {}
    for i, v in enumerate(variants):
        recs = [rec for _, rec in results[i * runs:(i + 1) * runs]]
        records[v] = recs
        done = [(rec, ds) for rec, ds in zip(recs, datasets) if rec.aborted is None]
        if done:
            metrics[v] = compute_metrics([r for r, _ in done], [d for _, d in done])
        decl[v] = np.array([first_declaration(r, d) for r, d in zip(recs, datasets)])
    res = McResult(datasets, records, metrics, decl)
    if out_dir is not None:
        write_mc(res, out_dir)
    return res


def write_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_truth(out / "truth.csv", ds)
    write_observations(out, ds)


def write_mc(res: McResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for v, recs in res.records.items():
        for rec, ds in zip(recs, res.datasets):
            d = out / f"run{rec.run:03d}"
            write_dataset(ds, d)
            vd = d / v
            vd.mkdir(exist_ok=True)
            write_run(vd, rec, ds)
        if v in res.metrics:
            write_metrics(out / f"metrics_{v}.csv", res.metrics[v])


def summarize(table: MetricTable, start: int = 20) -> dict:
    e = table.errors[:, start - 1:] if table.errors.shape[1] >= start else table.errors
    return {"rmse_tail": float(np.sqrt(np.mean(e ** 2))), "per_run_tail": np.sqrt(np.mean(e ** 2, axis=1))}


__all__ = ["RunRecord", "StepRecord", "run_slam", "run_bounds", "run_mc", "write_bounds",
           "write_dataset", "build_filter", "bound_states", "McResult", "summarize"]
