"""Dataset/tie-point ingestion and result export.

CSV is the interchange format throughout (see ``docs/formats.md`` for the
exact schemas); reports are JSON.  All writers format floats with ``repr``,
which round-trips float64 exactly, and emit rows in a deterministic order so
identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .hierarchy import TiePoint
from .hmm import Chronology, DepthSeries, LayerSummary, layer_boundaries

__all__ = [
    "RunConfig",
    "read_dataset",
    "read_tiepoints",
    "write_results",
    "write_dataset",
]


def _fmt(x) -> str:
    return repr(float(x))


def read_dataset(path) -> DepthSeries:
    """Load a ``depth,proxy`` CSV into a validated, sorted DepthSeries.

    Rows with a missing/NaN proxy are dropped (with a warning carrying the
    count); duplicate depths and non-numeric fields are errors that name the
    offending line.
    """
    path = Path(path)
    rows = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: file is empty")
        if [h.strip().lower() for h in header[:2]] != ["depth", "proxy"]:
            raise ValidationError(
                f"{path}: line 1: expected header 'depth,proxy', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise ValidationError(f"{path}: line {lineno}: expected 2 fields")
            try:
                depth = float(row[0])
            except ValueError:
                raise ValidationError(
                    f"{path}: line {lineno}: non-numeric depth {row[0]!r}") from None
            if not np.isfinite(depth):
                raise ValidationError(
                    f"{path}: line {lineno}: depth must be finite")
            cell = row[1].strip()
            if cell == "":
                proxy = np.nan
            else:
                try:
                    proxy = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{path}: line {lineno}: non-numeric proxy "
                        f"{row[1]!r}") from None
            rows.append((depth, proxy, lineno))
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    rows.sort(key=lambda r: r[0])
    dropped = sum(1 for _, proxy, _ in rows if not np.isfinite(proxy))
    if dropped:
        warnings.warn(f"{path}: dropped {dropped} row(s) with missing proxy")
    kept = [(d, p, ln) for d, p, ln in rows if np.isfinite(p)]
    if not kept:
        raise ValidationError(f"{path}: every proxy value is missing")
    depths = np.array([d for d, _, _ in kept])
    dupes = np.where(np.diff(depths) <= 0.0)[0]
    if dupes.size:
        i = int(dupes[0])
        raise ValidationError(
            f"{path}: duplicate depth {depths[i]!r} "
            f"(lines {kept[i][2]} and {kept[i + 1][2]})")
    return DepthSeries(depths, np.array([p for _, p, _ in kept]))


def read_tiepoints(path, data: DepthSeries, tolerance: float | None = None):
    """Load a ``depth,year`` CSV and resolve each tie to a dataset sample.

    Each tie depth must sit within ``tolerance`` (default: half the median
    sample spacing) of a dataset depth; years must be integers and must not
    decrease with depth.
    """
    path = Path(path)
    if tolerance is None:
        spacing = np.diff(data.depths)
        tolerance = 0.5 * float(np.median(spacing)) if spacing.size else np.inf
    entries = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip().lower() for h in header[:2]] != ["depth", "year"]:
            raise ValidationError(
                f"{path}: line 1: expected header 'depth,year', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise ValidationError(f"{path}: line {lineno}: expected 2 fields")
            try:
                depth = float(row[0])
                year = float(row[1])
            except ValueError:
                raise ValidationError(
                    f"{path}: line {lineno}: non-numeric field in {row!r}") from None
            if year != int(year):
                raise ValidationError(
                    f"{path}: line {lineno}: tie year must be an integer")
            entries.append((depth, int(year), lineno))

    entries.sort(key=lambda e: e[0])
    ties = []
    last_year = None
    for depth, year, lineno in entries:
        idx = int(np.argmin(np.abs(data.depths - depth)))
        err = abs(data.depths[idx] - depth)
        if err > tolerance:
            lo = max(idx - 1, 0)
            hi = min(idx + 2, data.n)
            cands = ", ".join(_fmt(d) for d in data.depths[lo:hi])
            raise ValidationError(
                f"{path}: line {lineno}: no sample within {tolerance!r} m of "
                f"depth {depth!r}; nearest candidates: {cands}")
        if last_year is not None and year < last_year:
            raise ValidationError(
                f"{path}: line {lineno}: tie year {year} decreases with depth")
        last_year = year
        ties.append(TiePoint(depth_index=idx, year=year))
    return ties


# ---------------------------------------------------------------------------
# output files


def check_writable(outdir) -> Path:
    """Ensure the output directory exists and accepts writes; fail early."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        probe = outdir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"output directory {outdir} not writable: {exc}")
    return outdir


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _report_dict(report) -> dict:
    out = {
        "value": None if np.isnan(report.value) else float(report.value),
        "iterations": int(report.iterations),
        "converged": bool(report.converged),
        "trace": [float(v) for v in report.trace],
        "params": {k: (v.tolist() if isinstance(v, np.ndarray) else float(v))
                   for k, v in report.params.items()},
        "notes": list(report.notes),
    }
    return out


def write_results(chron: Chronology, fits, outdir, config: dict | None = None,
                  data: DepthSeries | None = None, write_gamma: bool = False,
                  gaps=None, layer_source: str = "auto") -> list:
    """Write the standard result file set; returns the paths written.

    Files: ``chronology.csv`` (per-depth time summaries), ``paths.csv``
    (sampled paths, long format), ``layers.csv`` (per-year boundary depths),
    ``fit.json`` (fit reports plus the config echo), optionally
    ``gamma.csv`` (smoothed marginals) and ``gaps.csv`` (elapsed-year
    posteriors across detected gaps).  Output is deterministic given inputs;
    wall-clock times are deliberately not written.
    """
    outdir = check_writable(outdir)
    written = []

    rows = [
        (_fmt(d), _fmt(m), _fmt(q05), _fmt(q50), _fmt(q95))
        for d, m, q05, q50, q95 in zip(
            chron.depths, chron.mean_times, chron.time_quantile(0.05),
            chron.time_quantile(0.50), chron.time_quantile(0.95))
    ]
    p = outdir / "chronology.csv"
    _write_csv(p, ["depth", "mean_year", "q05", "q50", "q95"], rows)
    written.append(p)

    times = chron.path_times()
    rows = [
        (str(pid), _fmt(chron.depths[i]), _fmt(times[pid, i]))
        for pid in range(times.shape[0]) for i in range(chron.n)
    ]
    p = outdir / "paths.csv"
    _write_csv(p, ["path_id", "depth", "year"], rows)
    written.append(p)

    if data is None:
        data = DepthSeries(chron.depths, np.zeros(chron.n))
    summary = layer_boundaries(chron, data, source=layer_source)
    rows = [
        (str(b.year), _fmt(b.depth_q05), _fmt(b.depth_q50),
         _fmt(b.depth_q95), _fmt(b.support))
        for b in summary.boundaries
    ]
    p = outdir / "layers.csv"
    _write_csv(p, ["year", "q05", "q50", "q95", "support"], rows)
    written.append(p)

    if write_gamma:
        rows = []
        for i in range(chron.n):
            keep = np.where(chron.gamma[i] >= 1e-12)[0]
            rows.extend(
                (_fmt(chron.depths[i]), str(int(k)),
                 _fmt(chron.space.times[k]), _fmt(chron.gamma[i, k]))
                for k in keep
            )
        p = outdir / "gamma.csv"
        _write_csv(p, ["depth", "state", "time", "prob"], rows)
        written.append(p)

    if gaps is not None:
        rows = []
        for g in gaps:
            for years, prob in sorted(g.elapsed_years.items()):
                rows.append((str(g.left_index), str(g.right_index),
                             _fmt(g.left_depth), _fmt(g.right_depth),
                             str(int(years)), _fmt(prob)))
        p = outdir / "gaps.csv"
        _write_csv(p, ["left_index", "right_index", "left_depth",
                       "right_depth", "elapsed_years", "prob"], rows)
        written.append(p)

    payload = {
        "config": config or {},
        "fits": [_report_dict(r) for r in fits],
        "omitted_years": list(summary.omitted_years),
    }
    p = outdir / "fit.json"
    with open(p, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    written.append(p)
    return written


def write_dataset(path, data: DepthSeries):
    """Write a depth/proxy series in the canonical input schema."""
    _write_csv(path, ["depth", "proxy"],
               [(_fmt(d), _fmt(p)) for d, p in zip(data.depths, data.proxy)])


@dataclass
class RunConfig:
    """Resolved options of one CLI run; echoed into fit.json verbatim."""

    command: str
    data: str | None = None
    out: str | None = None
    ties: str | None = None
    n_s: int = 8
    m: int | None = None
    batch_len: int | None = None
    n_paths: int = 200
    seed: int = 0
    threads: int = 1
    tol: float = 1e-8
    max_iter: int = 2000
    vi_step: float = 0.05
    vi_max_iter: int = 4000
    grad_samples: int = 2
    tie_mode: str = "replace"
    draws: int = 25
    paths_per_draw: int = 8
    gap_factor: float = 3.0
    write_gamma: bool = False
    strict: bool = False
    quiet: bool = False
    # simulate-only knobs
    kind: str = "hmm"
    n: int = 500
    spacing: float = 0.02
    a: float = 1.0
    b: float = 0.0
    sigma: float = 0.25
    stay: float = 0.8
    rate: float | None = None
    lam: float = 1.0
    alpha: float = 1.0
    eps: float = 1e-2
    laplace_scale: float = 0.05
    seasonal: str = "sin_pi"

    def validate(self):
        if self.n_s < 1:
            raise ValidationError("n_s must be at least 1")
        for name in ("data", "ties"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise ValidationError(f"{name} file not found: {value}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)
