"""Reports: CSV/JSON writers and static SVG plots.

Every writer is deterministic: floats are written with ``repr``, JSON keys
are sorted, and SVG output carries a fixed hash salt and no date stamp, so
identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError


@dataclass
class Report:
    """Outcome of one run: a verdict, a summary dict and named row tables."""

    kind: str
    verdict: str
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "verdict": self.verdict, "summary": self.summary, "notes": self.notes}


def _plain(x):
    """JSON-safe version of numpy scalars, complex numbers and non-finite floats."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _plain(float(x.real)), "im": _plain(float(x.imag))}
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return repr(complex(v))
    return str(v)


def write_csv(rows: Iterable[dict], path, columns: Sequence[str] | None = None) -> Path:
    """Write dict rows; ``columns`` defaults to the keys of the first row."""
    rows = list(rows)
    path = Path(path)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    return path


def read_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def fit_loglog(x, y, level: float = 0.95) -> dict:
    """Least-squares slope of ``log y`` on ``log x`` with a t-interval half width."""
    from scipy import stats

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    lx, ly = np.log(x[keep]), np.log(y[keep])
    if lx.size < 2:
        return {"slope": math.nan, "intercept": math.nan, "ci": math.nan, "n": int(lx.size)}
    res = stats.linregress(lx, ly)
    ci = math.nan
    if lx.size > 2:
        ci = float(stats.t.ppf(0.5 + level / 2, lx.size - 2) * res.stderr)
    return {"slope": float(res.slope), "intercept": float(res.intercept), "ci": ci, "n": int(lx.size)}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dbarlab"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def line_plot(path, series: dict, xlabel: str, ylabel: str, title: str = "",
              logx: bool = False, logy: bool = True, fits: dict | None = None) -> Path:
    """SVG line plot of ``{name: (x, y)}``; ``fits`` maps names to ``fit_loglog`` output."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(series):
        x, y = series[name]
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ax.plot(x, y, marker="o", label=name)
        fit = (fits or {}).get(name)
        if fit and np.isfinite(fit["slope"]):
            yy = np.exp(fit["intercept"]) * x ** fit["slope"]
            ci = "" if not np.isfinite(fit["ci"]) else f" ± {fit['ci']:.3f}"
            ax.plot(x, yy, linestyle="--", label=f"{name} fit slope {fit['slope']:.3f}{ci}")
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _float(s):
    try:
        return float(s)
    except (TypeError, ValueError):
        return math.nan


def render_csv(csv_path, out_dir=None) -> list:
    """Plot a trace CSV next to itself.

    ``level``/``value`` tables (optionally with ``series``) give value-vs-level
    plots; ``k``/``value`` tables (with ``term``) give log-log plots with a
    fitted slope.  Returns the written SVG paths.
    """
    csv_path = Path(csv_path)
    rows = read_csv(csv_path)
    if not rows:
        raise ConfigError([f"{csv_path.name}: empty trace; rerun the run that produced it"])
    out_dir = Path(out_dir) if out_dir else csv_path.parent
    cols = rows[0].keys()
    if "value" not in cols or not ({"level", "k"} & set(cols)):
        return []
    xcol = "level" if "level" in cols else "k"
    scol = next((c for c in ("series", "term", "input") if c in cols), None)
    series = {}
    for r in rows:
        key = r[scol] if scol else "value"
        xs, ys = series.setdefault(key, ([], []))
        xs.append(_float(r[xcol]))
        ys.append(abs(_float(r["value"])))
    fits = None
    logx = xcol == "k"
    if logx:
        fits = {k: fit_loglog(*v) for k, v in series.items()}
    svg = out_dir / (csv_path.stem + ".svg")
    line_plot(svg, series, xcol, "value", title=csv_path.stem, logx=logx, fits=fits)
    return [svg]


def summary_table(summary: dict) -> str:
    """Plain-text two-column table of the scalar entries of a summary."""
    lines = []
    width = max((len(str(k)) for k in summary), default=0)
    for k in sorted(summary):
        v = summary[k]
        if isinstance(v, (dict, list)):
            continue
        lines.append(f"{str(k).ljust(width)}  {v}")
    return "\n".join(lines) + "\n"
