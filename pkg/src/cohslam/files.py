"""CSV and binary artifact formats.

Every CSV starts with a header row whose column names carry units in
brackets. Complex observations go to ``observations.bin`` as little-endian
float64 pairs (re, im) with a JSON sidecar describing the shape.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dataset import Dataset


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    f = float(v)
    return "nan" if np.isnan(f) else format(f, ".17g")


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path) -> tuple:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def truth_header(k: int, j: int) -> list:
    h = ["step[-]", "x[m]", "y[m]", "z[m]", "vx[m/s]", "vy[m/s]", "vz[m/s]"]
    for i in range(1, k + 1):
        h += [f"s{i}_x[m]", f"s{i}_y[m]", f"s{i}_z[m]"]
    h += [f"visible_pa{i}[count]" for i in range(j)]
    return h + ["visible_total[count]"]


def write_truth(path, ds: Dataset) -> Path:
    n, k = ds.psfv.shape[:2]
    cnt = ds.visible_counts()
    rows = []
    for i in range(n):
        rows.append([i + 1, *ds.x[i], *ds.psfv[i].ravel(), *cnt[i], int(cnt[i].sum())])
    return write_csv(path, truth_header(k, cnt.shape[1]), rows)


def write_observations(out_dir, ds: Dataset) -> Path:
    out = Path(out_dir)
    arr = np.ascontiguousarray(ds.z, dtype="<c16")
    path = out / "observations.bin"
    path.write_bytes(arr.view("<f8").tobytes())
    meta = {
        "shape": list(ds.z.shape),
        "axes": ["step", "anchor", "entry"],
        "dtype": "float64",
        "endianness": "little",
        "layout": "interleaved re/im",
        "noise_variance": ds.eta,
    }
    (out / "observations.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_observations(out_dir) -> tuple:
    out = Path(out_dir)
    meta = json.loads((out / "observations.json").read_text())
    raw = np.frombuffer((out / "observations.bin").read_bytes(), dtype="<f8")
    z = raw.view("<c16").reshape(meta["shape"]).astype(complex)
    return z, meta


def estimates_header(j: int) -> list:
    return (["step[-]", "x[m]", "y[m]", "z[m]", "vx[m/s]", "vy[m/s]", "vz[m/s]"]
            + [f"eta_pa{i}[W]" for i in range(j)] + ["error[m]"])


TRACK_HEADER = ["step[-]", "id[-]", "los[-]", "existence[-]", "declared[-]", "sx[m]", "sy[m]",
                "sz[m]", "gamma[-]", "mu_re[-]", "mu_im[-]"]


def write_run(out_dir, record, truth: Dataset | None = None) -> tuple:
    """Write ``estimates.csv`` and ``tracks.csv`` for one run record.

    Wall-clock step times go to ``timing.csv`` so the other two files are
    reproducible byte for byte.
    """
    out = Path(out_dir)
    j = len(record.steps[0].eta) if record.steps else 0
    est_rows, trk_rows = [], []
    for s in record.steps:
        err = np.nan if truth is None else float(np.linalg.norm(s.mt[:3] - truth.x[s.n - 1, :3]))
        est_rows.append([s.n, *s.mt, *s.eta, err])
        for t in s.tracks:
            ps = [None] * 3 if t["psfv"] is None else list(t["psfv"])
            trk_rows.append([s.n, t["id"], t["los"], t["existence"], t["declared"], *ps,
                             t["gamma"], t["mu"].real, t["mu"].imag])
    a = write_csv(out / "estimates.csv", estimates_header(j), est_rows)
    b = write_csv(out / "tracks.csv", TRACK_HEADER + [f"ppr_pa{i}[-]" for i in range(j)],
                  [r + list(t) for r, t in zip(trk_rows, _pprs(record))])
    write_csv(out / "timing.csv", ["step[-]", "time[s]"], [[s.n, s.time] for s in record.steps])
    return a, b


def _pprs(record):
    for s in record.steps:
        for t in s.tracks:
            yield t["ppr"]


def write_bounds(path, series: dict) -> Path:
    """``series`` maps mode name to a crlb.BoundSeries."""
    k = next(iter(series.values())).meb.shape[1]
    header = ["step[-]", "mode[-]", "peb[m]"] + [f"meb{i}[m]" for i in range(1, k + 1)]
    rows = []
    for mode, s in series.items():
        for n in range(len(s.peb)):
            rows.append([n + 1, mode, s.peb[n], *s.meb[n]])
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[0]), r[1]] + [_fmt(v) for v in r[2:]])
    return path


def write_metrics(path, table) -> Path:
    k = table.map_rmse.shape[1]
    header = ["step[-]", "rmse[m]", "q1[m]", "median[m]", "q3[m]"] + [f"map_rmse{i}[m]" for i in range(1, k + 1)]
    rows = [[n + 1, table.rmse[n], table.q1[n], table.median[n], table.q3[n], *table.map_rmse[n]]
            for n in range(len(table.rmse))]
    return write_csv(path, header, rows)
