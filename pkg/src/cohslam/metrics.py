"""Error metrics over Monte-Carlo runs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class Assignment:
    pairs: list
    cost: float
    unmatched_rows: list
    unmatched_cols: list


def hungarian_assign(cost) -> Assignment:
    """Minimum-cost one-to-one assignment of rows to columns."""
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite")
    if c.size == 0:
        return Assignment([], 0.0, list(range(c.shape[0])), list(range(c.shape[1])))
    r, k = linear_sum_assignment(c)
    pairs = [(int(a), int(b)) for a, b in zip(r, k)]
    return Assignment(pairs, float(c[r, k].sum()),
                      sorted(set(range(c.shape[0])) - set(r.tolist())),
                      sorted(set(range(c.shape[1])) - set(k.tolist())))


def rmse(errors, axis=0):
    e = np.asarray(errors, float)
    return np.sqrt(np.mean(e ** 2, axis=axis))


@dataclass
class MetricTable:
    rmse: np.ndarray       # (N,)
    q1: np.ndarray
    median: np.ndarray
    q3: np.ndarray
    map_rmse: np.ndarray   # (N, K), nan where no declared track was associated
    errors: np.ndarray     # (R, N) per-run position errors, the CDF samples


def position_errors(record, truth) -> np.ndarray:
    return np.array([np.linalg.norm(s.mt[:3] - truth.x[s.n - 1, :3]) for s in record.steps])


def mapping_errors(record, truth) -> np.ndarray:
    """Per step and true surface: error of the associated declared track, else nan."""
    n_steps, k = len(record.steps), truth.psfv.shape[1]
    out = np.full((n_steps, k), np.nan)
    for i, s in enumerate(record.steps):
        est = [t["psfv"] for t in s.tracks if t["declared"] and not t["los"]]
        if not est or k == 0:
            continue
        tru = truth.psfv[s.n - 1]
        cost = np.linalg.norm(tru[:, None, :] - np.asarray(est)[None, :, :], axis=-1)
        for a, b in hungarian_assign(cost).pairs:
            out[i, a] = cost[a, b]
    return out


def compute_metrics(records, truths) -> MetricTable:
    if not records:
        raise ValueError("need at least one completed run")
    errs = np.array([position_errors(r, t) for r, t in zip(records, truths)])
    maps = np.array([mapping_errors(r, t) for r, t in zip(records, truths)])
    q1, med, q3 = np.percentile(errs, [25, 50, 75], axis=0)
    with np.errstate(invalid="ignore"):
        cnt = np.sum(~np.isnan(maps), axis=0)
        sq = np.nansum(maps ** 2, axis=0)
        map_rmse = np.where(cnt > 0, np.sqrt(sq / np.maximum(cnt, 1)), np.nan)
    return MetricTable(rmse(errs, 0), q1, med, q3, map_rmse, errs)


def first_declaration(record, truth, radius: float = 0.5) -> np.ndarray:
    """Step at which each true surface first has a declared track within ``radius``; 0 if never."""
    k = truth.psfv.shape[1]
    out = np.zeros(k, dtype=int)
    for s in record.steps:
        for i in range(k):
            if out[i]:
                continue
            for t in s.tracks:
                if (not t["los"] and t["existence"] > 0.5
                        and np.linalg.norm(t["psfv"] - truth.psfv[s.n - 1, i]) < radius):
                    out[i] = s.n
                    break
    return out
