"""Command-line driver.

One verb per invocation::

    dbarlab grid check
    dbarlab weights list|ap|apstar|dilation
    dbarlab riesz probe
    dbarlab dbar solve|canonical
    dbarlab hartogs pullback|extend-test|solve
    dbarlab verify sharpness
    dbarlab report --out RUN_DIR

Settings come from an optional JSON file (``--config``) overridden by
flags.  Every setting is validated before any computation; all problems are
reported together.  Each run writes CSV/JSON outputs and ``manifest.json``
(config, version, timings, sha256 of every output) into ``--out``.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DbarlabError
from .report import Report, render_csv, summary_table, write_csv, write_json

log = logging.getLogger("dbarlab")

VERBS = {
    "grid": ("check",),
    "weights": ("list", "ap", "apstar", "dilation"),
    "riesz": ("probe",),
    "dbar": ("solve", "canonical"),
    "hartogs": ("pullback", "extend-test", "solve"),
    "verify": ("sharpness",),
    "report": ("render",),
}

EXTENSION_DATA = ("inv", "one", "w2", "w2^2")
MAX_NODES = 1 << 22  # per-array node cap that keeps solves inside a few GB


@dataclass
class ExperimentConfig:
    verb: str
    action: str = ""
    out: str = "dbarlab-run"
    domain: str = "bidisc"
    resolution: list = field(default_factory=lambda: [16, 32])
    spacing: str = "uniform"
    levels: int = 3
    p: float | None = None
    eps: float | None = None
    s_exp: float | None = None
    alpha: list = field(default_factory=lambda: [1.0, 1.0])
    weight: str = "one"
    case: str | None = None
    datum: str | None = None
    degree: int = 4
    puncture: float = 2.0**-8
    k_ladder: list = field(default_factory=lambda: [2, 4, 8, 16, 32, 64, 128, 256])
    dilations: list = field(default_factory=lambda: [[1.0, 1.0], [2.0, 1.0], [1.0, 4.0]])
    seed: int = 0
    plots: bool = False

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunManifest:
    config: dict
    version: str
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # file name -> sha256
    verdict: str | None = None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def _default_p(verb, action):
    return {
        ("weights", "ap"): 2.0,
        ("weights", "apstar"): 2.0,
        ("weights", "dilation"): 2.0,
        ("riesz", "probe"): 3.0,
        ("dbar", "solve"): 2.0,
        ("dbar", "canonical"): 2.0,
        ("hartogs", "pullback"): 4.0,
        ("hartogs", "extend-test"): 4.0,
        ("hartogs", "solve"): 4.0,
        ("verify", "sharpness"): 3.0,
    }.get((verb, action))


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every setting; raise ConfigError listing all problems."""
    from .dbar import CLOSED_FAMILY
    from .hartogs import CONSTRUCTED, THRESHOLD_MESSAGE
    from .verify import CASES
    from .weights import REGISTRY

    problems = []
    if cfg.verb not in VERBS:
        problems.append(f"unknown verb {cfg.verb!r}; expected one of {sorted(VERBS)}")
        raise ConfigError(problems)
    if cfg.verb == "report" and not cfg.action:
        cfg.action = "render"
    if cfg.action not in VERBS[cfg.verb]:
        problems.append(f"verb {cfg.verb!r} takes one of {list(VERBS[cfg.verb])}, got {cfg.action!r}")
    if cfg.p is None:
        cfg.p = _default_p(cfg.verb, cfg.action)
    if not cfg.out:
        problems.append("an output directory is required")

    res = cfg.resolution
    if not (isinstance(res, (list, tuple)) and len(res) == 2 and all(isinstance(x, int) and x >= 1 for x in res)):
        problems.append(f"resolution must be two positive integers [n_r, n_theta], got {res!r}")
        res = None
    if cfg.domain not in ("disc", "bidisc"):
        problems.append(f"domain must be 'disc' or 'bidisc', got {cfg.domain!r}")
    if cfg.spacing not in ("uniform", "geometric"):
        problems.append(f"spacing must be 'uniform' or 'geometric', got {cfg.spacing!r}")
    if not isinstance(cfg.levels, int) or cfg.levels < 1:
        problems.append(f"levels must be a positive integer, got {cfg.levels!r}")
    if cfg.p is not None and (not _is_num(cfg.p) or cfg.p <= 1):
        problems.append(f"p must be a number > 1, got {cfg.p!r}")
    if not isinstance(cfg.seed, int):
        problems.append(f"seed must be an integer, got {cfg.seed!r}")
    if not _is_num(cfg.puncture) or not 0 < cfg.puncture < 1:
        problems.append(f"puncture radius must lie in (0, 1), got {cfg.puncture!r}")

    v, a = cfg.verb, cfg.action
    nfac = 1 if cfg.domain == "disc" else 2
    if res is not None and v in ("dbar", "hartogs", "riesz") and a != "extend-test":
        per_factor = res[0] * res[1] * (4 ** (cfg.levels - 1) if v == "riesz" else 1)
        if per_factor ** (nfac if v == "riesz" else 2) > MAX_NODES:
            problems.append(f"resolution {res} (finest level) exceeds the node cap {MAX_NODES} per array")
    if v in ("dbar", "hartogs") and res is not None and res[0] < 3:
        problems.append("solving needs at least 3 rings per factor")
    if v == "weights":
        wname = cfg.weight
        if not (wname in REGISTRY or str(wname).startswith("power:")):
            problems.append(f"unknown weight {wname!r}; known: {sorted(REGISTRY)} or power:A")
        elif str(wname).startswith("power:"):
            try:
                float(str(wname).split(":", 1)[1])
            except ValueError:
                problems.append(f"power weight exponent must be a number, got {wname!r}")
        if a == "dilation":
            ds = cfg.dilations
            if not ds or not all(isinstance(d, (list, tuple)) and all(_is_num(x) and x > 0 for x in d) for d in ds):
                problems.append("dilations must be a non-empty list of positive tuples")
    if v == "riesz":
        al = cfg.alpha
        if not isinstance(al, (list, tuple)) or not al:
            problems.append(f"alpha must be a list, got {al!r}")
        else:
            if any(not _is_num(x) or not 0 < x < 2 for x in al):
                problems.append(f"alpha entries must lie in (0, 2), got {al}")
            if len(al) != nfac:
                problems.append(f"alpha has {len(al)} entries for a {nfac}-factor domain")
        if cfg.weight not in ("one", "one2", "abs2") and not str(cfg.weight).startswith("power:"):
            problems.append(f"riesz probe weights are 'one', 'abs2' or power:A, got {cfg.weight!r}")
    if v == "dbar":
        if cfg.domain != "bidisc":
            problems.append("dbar solves run on the bidisc")
        datum = cfg.datum or "conj-product"
        if datum not in CLOSED_FAMILY and datum != "zero":
            problems.append(f"unknown datum {datum!r}; known: {sorted(CLOSED_FAMILY)} or 'zero'")
        if not isinstance(cfg.degree, int) or cfg.degree < 0:
            problems.append(f"basis degree must be a nonnegative integer, got {cfg.degree!r}")
        elif res is not None and cfg.degree > res[1] // 4:
            problems.append(f"basis degree {cfg.degree} exceeds n_theta/4 = {res[1] // 4}")
        if cfg.weight not in ("one", "one2", "w2abs2"):
            problems.append(f"canonical weights are 'one2' or 'w2abs2', got {cfg.weight!r}")
    if v == "hartogs":
        if a in ("pullback", "solve"):
            datum = cfg.datum or cfg.case or "constructed-1"
            if datum not in CONSTRUCTED:
                problems.append(f"unknown Hartogs datum {datum!r}; known: {sorted(CONSTRUCTED)}")
        if a == "solve":
            if cfg.p is not None and _is_num(cfg.p) and cfg.p < 4:
                problems.append(THRESHOLD_MESSAGE.format(p=cfg.p))
            if not isinstance(cfg.degree, int) or cfg.degree < 0:
                problems.append(f"basis degree must be a nonnegative integer, got {cfg.degree!r}")
            elif res is not None and cfg.degree > res[1] // 4:
                problems.append(f"basis degree {cfg.degree} exceeds n_theta/4 = {res[1] // 4}")
        if a == "extend-test":
            datum = cfg.datum or "inv"
            if datum not in EXTENSION_DATA:
                problems.append(f"unknown extension datum {datum!r}; known: {list(EXTENSION_DATA)}")
            ks = cfg.k_ladder
            if not (isinstance(ks, (list, tuple)) and len(ks) >= 2 and all(_is_num(k) and k >= 1 for k in ks)
                    and list(ks) == sorted(set(ks))):
                problems.append(f"k_ladder must be an increasing list of at least two values >= 1, got {ks!r}")
    if v == "verify":
        case = str(cfg.case or "").upper()
        if case not in CASES:
            problems.append(f"case must be one of {[c.lower() for c in CASES]}, got {cfg.case!r}")
        if not isinstance(cfg.levels, int) or cfg.levels < 4:
            problems.append(f"the blow-up probe needs levels >= 4, got {cfg.levels!r}")
        if res is not None and res[1] < 64:
            problems.append(f"contours need at least 64 angular nodes, got n_theta = {res[1]}")
        if case == "EX26":
            eps, s = cfg.eps, cfg.s_exp
            if eps is None or not _is_num(eps) or eps <= 0:
                problems.append(f"ex26 needs eps > 0, got {eps!r}")
            elif s is None or not _is_num(s) or not 2 / (1 + eps) < s < 2:
                problems.append(f"ex26 needs s_exp in (2/(1+eps), 2) = ({2 / (1 + eps):g}, 2), got {s!r}")
    if problems:
        raise ConfigError(problems)
    return cfg


# --------------------------------------------------------------------------
# Output handling
# --------------------------------------------------------------------------

class Writer:
    """Single funnel for run outputs; records a sha256 per file."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def _record(self, path: Path):
        self.files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def csv(self, name, rows, columns=None):
        self._record(write_csv(rows, self.out / name, columns))

    def json(self, name, obj):
        self._record(write_json(obj, self.out / name))

    def text(self, name, text):
        p = self.out / name
        p.write_text(text)
        self._record(p)


@contextmanager
def _timed(timings: dict, key: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[key] = round(time.perf_counter() - t0, 6)


def _thread_limit():
    n = os.environ.get("DBARLAB_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(n)))


# --------------------------------------------------------------------------
# Verbs
# --------------------------------------------------------------------------

def _spec(cfg):
    from .grid import unit_disc

    return [unit_disc()] * (1 if cfg.domain == "disc" else 2)


def _run_grid(cfg, w: Writer, timings) -> Report:
    from .grid import build_grid, integrate_array

    spec = _spec(cfg)
    res = tuple(cfg.resolution)
    with _timed(timings, "build_grid"):
        g = build_grid(spec, [res] * len(spec), cfg.spacing)
    total = integrate_array(g, np.ones(g.shape)).real
    exact = float(np.prod([f.factor.area for f in g.factors]))
    rows = []
    for j, f in enumerate(g.factors):
        for i, (r, a) in enumerate(zip(f.r, f.cell_area)):
            rows.append({"factor": j, "ring": i, "r": float(r), "cell_area": float(a)})
    w.csv("rings.csv", rows)
    summary = {"nodes": g.size, "volume": total, "exact_volume": exact,
               "relative_error": abs(total - exact) / exact}
    verdict = "OK" if summary["relative_error"] <= 1e-12 else "QUADRATURE-MISMATCH"
    return Report("grid-check", verdict, summary)


def _weight(cfg):
    from .weights import get_weight

    return get_weight(cfg.weight)


def _run_weights(cfg, w: Writer, timings) -> Report:
    from .weights import ap_constant, ap_star_constant, dilation_ap_check

    if cfg.action == "list":
        from .weights import DESCRIPTIONS

        w.csv("weights.csv", [{"name": k, "description": DESCRIPTIONS[k]} for k in sorted(DESCRIPTIONS)])
        return Report("weights-list", "LISTED", {"count": len(DESCRIPTIONS)})
    wt = _weight(cfg)
    if cfg.action == "dilation":
        with _timed(timings, "dilation_ap_check"):
            rep = dilation_ap_check(wt, cfg.p, cfg.dilations)
        w.csv("dilation.csv", [{"delta": " ".join(f"{x:g}" for x in d), "value": e}
                               for d, e in zip(rep.dilations, rep.estimates)])
        return Report("weights-dilation", rep.verdict, rep.summary())
    with _timed(timings, cfg.action):
        if cfg.action == "ap" and wt.dim == 1:
            est = ap_constant(wt, cfg.p)
        else:
            est = ap_star_constant(wt, cfg.p)
    w.csv("discs.csv", list(est.rows()))
    return Report(f"weights-{cfg.action}", est.verdict, est.summary())


def _run_riesz(cfg, w: Writer, timings) -> Report:
    from .riesz import boundedness_probe, smooth_inputs
    from .weights import get_weight

    spec = _spec(cfg)
    names, gens = smooth_inputs(spec, tuple(cfg.resolution), cfg.spacing)
    if cfg.domain == "disc":
        names = [n for n in names if n in ("one", "modulus-sum", "gaussian", "oscillating")]
        from .riesz import SMOOTH_FAMILY, refined

        gens = [refined(lambda z, fn=SMOOTH_FAMILY[n]: fn(z, 0 * z), spec, tuple(cfg.resolution), cfg.spacing)
                for n in names]
    weight = None
    if cfg.weight not in ("one", "one2"):
        weight = get_weight(cfg.weight)
        if weight.dim != len(spec):
            raise ConfigError([f"weight {cfg.weight!r} has dimension {weight.dim}, domain has {len(spec)} factors"])
    with _timed(timings, "boundedness_probe"):
        rep = boundedness_probe(gens, cfg.alpha, weight, cfg.p, cfg.levels, names)
    w.csv("ratios.csv", [{"input": r["input"], "level": r["level"], "value": r["ratio"]} for r in rep.rows()])
    return Report("riesz-probe", rep.verdict, rep.summary(), notes=rep.notices)


def _run_dbar(cfg, w: Writer, timings) -> Report:
    from .dbar import HolomorphicBasis, canonical_solve, closed_datum, product_solve
    from .grid import Form01, SampledField, build_grid, write_field_csv

    res = tuple(cfg.resolution)
    g = build_grid(_spec(cfg), [res, res])
    datum = cfg.datum or "conj-product"
    if datum == "zero":
        zero = SampledField(g, np.zeros(g.shape))
        f = Form01(g, [zero, zero])
    else:
        f = closed_datum(datum, g)
    with _timed(timings, cfg.action):
        if cfg.action == "solve":
            out = product_solve(f)
        else:
            out = canonical_solve(f, _weight(cfg), HolomorphicBasis(cfg.degree), cfg.p)
    if g.size <= 1 << 16:
        with _timed(timings, "write_field"):
            write_field_csv(out.u, w.out / "solution.csv")
            w._record(w.out / "solution.csv")
    verdict = "SOLVED" if out.residual_max <= 1e-2 else "RESIDUAL-HIGH"
    return Report(f"dbar-{cfg.action}", verdict, out.summary())


def _extension_form(name, grid):
    from .grid import Form01, sample

    fns = {
        "inv": lambda a, b: 1 / b + 0 * a,
        "one": lambda a, b: 1 + 0 * a * b,
        "w2": lambda a, b: b + 0 * a,
        "w2^2": lambda a, b: b**2 + 0 * a,
    }
    return Form01(grid, [sample(fns[name], grid), sample(lambda a, b: 0 * a * b, grid)])


def _extension_rows(rep):
    """Long-format rows ``(k, term, value)`` of an ExtensionReport."""
    out = []
    for row in rep.rows():
        for term in ("cutoff_term", "remainder_term"):
            out.append({"k": row["k"], "term": term, "value": row[term]})
    return out


def _run_hartogs(cfg, w: Writer, timings) -> Report:
    from .dbar import HolomorphicBasis
    from .hartogs import (
        constructed_form,
        extension_grid,
        extension_test,
        hartogs_grid,
        hartogs_solve,
        pull_back_closedness,
    )

    if cfg.action == "extend-test":
        g = extension_grid()
        h = _extension_form(cfg.datum or "inv", g)
        with _timed(timings, "extension_test"):
            rep = extension_test(h, cfg.p, [int(k) for k in cfg.k_ladder])
        w.csv("extension.csv", _extension_rows(rep))
        return Report("hartogs-extend-test", rep.verdict, rep.summary())
    hg = hartogs_grid(tuple(cfg.resolution), cfg.puncture)
    f = constructed_form(cfg.datum or cfg.case or "constructed-1", hg)
    if cfg.action == "pullback":
        with _timed(timings, "pull_back_closedness"):
            rep = pull_back_closedness(f, cfg.p)
        if rep.extension is not None:
            w.csv("extension.csv", _extension_rows(rep.extension))
        return Report("hartogs-pullback", rep.verdict, rep.summary())
    with _timed(timings, "hartogs_solve"):
        out = hartogs_solve(f, cfg.p, HolomorphicBasis(cfg.degree))
    verdict = "SOLVED" if out.residual_max <= 1e-2 else "RESIDUAL-HIGH"
    return Report("hartogs-solve", verdict, out.summary())


def _run_verify(cfg, w: Writer, timings) -> Report:
    from .verify import certify_sharpness

    with _timed(timings, "certify_sharpness"):
        rep = certify_sharpness(cfg.case, cfg.p, cfg.eps, cfg.s_exp, resolution=tuple(cfg.resolution),
                                levels=cfg.levels, seed=cfg.seed)
    w.csv("trace.csv", rep.tables["trace"])
    return rep


def _run_report(cfg, w: Writer, timings) -> Report:
    run = Path(cfg.out)
    mpath = run / "manifest.json"
    missing = []
    if not mpath.exists():
        raise ConfigError([f"{mpath}: no manifest; run a verb with --out {run} first"])
    manifest = json.loads(mpath.read_text())
    csvs = [run / n for n in sorted(manifest.get("outputs", {})) if n.endswith(".csv")]
    for c in csvs:
        if not c.exists():
            missing.append(f"{c.name}: listed in the manifest but missing")
    if not csvs:
        missing.append("the manifest lists no CSV traces")
    if missing:
        raise ConfigError(missing)
    made = []
    with _timed(timings, "render"):
        for c in csvs:
            made += render_csv(c)
    for m in made:
        w._record(m)
    verdict_path = run / "verdict.json"
    summary = json.loads(verdict_path.read_text()).get("summary", {}) if verdict_path.exists() else {}
    w.text("summary.txt", summary_table(summary))
    return Report("report", "RENDERED", {"plots": [m.name for m in made]})


RUNNERS = {
    "grid": _run_grid,
    "weights": _run_weights,
    "riesz": _run_riesz,
    "dbar": _run_dbar,
    "hartogs": _run_hartogs,
    "verify": _run_verify,
    "report": _run_report,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Validate, execute one verb and write its outputs plus ``manifest.json``."""
    cfg = validate(cfg)
    w = Writer(Path(cfg.out))
    manifest = RunManifest(cfg.snapshot(), __version__)
    if cfg.verb == "report":
        previous = json.loads((w.out / "manifest.json").read_text()) if (w.out / "manifest.json").exists() else {}
    with _thread_limit(), _timed(manifest.timings, "total"):
        rep = RUNNERS[cfg.verb](cfg, w, manifest.timings)
    manifest.verdict = rep.verdict
    if cfg.verb == "report":
        # keep the producing run's manifest; extend its inventory
        previous.setdefault("outputs", {}).update(w.files)
        previous.setdefault("timings", {}).update({f"report.{k}": v for k, v in manifest.timings.items()})
        write_json(previous, w.out / "manifest.json")
        manifest.outputs = dict(w.files)
        return manifest
    w.json("verdict.json", rep.as_dict())
    if cfg.plots:
        for name in sorted(w.files):
            if name.endswith(".csv"):
                for svg in render_csv(w.out / name):
                    w._record(svg)
    manifest.outputs = dict(w.files)
    write_json(manifest.as_dict(), w.out / "manifest.json")
    return manifest


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def _floats(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s):
    return [int(x) for x in s.split(",") if x.strip()]


def _dilations(s):
    return [_floats(part) for part in s.split(";") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dbarlab", description="Weighted d-bar experiments on product domains.")
    ap.add_argument("verb", choices=sorted(VERBS))
    ap.add_argument("action", nargs="?", default="")
    ap.add_argument("--config", help="JSON file with settings; flags override it")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--domain", choices=["disc", "bidisc"])
    ap.add_argument("--resolution", type=_ints, help="n_r,n_theta")
    ap.add_argument("--spacing", choices=["uniform", "geometric"])
    ap.add_argument("--levels", type=int)
    ap.add_argument("--p", type=float)
    ap.add_argument("--eps", type=float)
    ap.add_argument("--s-exp", dest="s_exp", type=float)
    ap.add_argument("--alpha", type=_floats, help="comma-separated exponents")
    ap.add_argument("--weight")
    ap.add_argument("--case")
    ap.add_argument("--datum")
    ap.add_argument("--degree", type=int)
    ap.add_argument("--puncture", type=float)
    ap.add_argument("--k-ladder", dest="k_ladder", type=_ints)
    ap.add_argument("--dilations", type=_dilations, help="e.g. '1,1;2,1'")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--plots", action="store_true", default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Merge the JSON config (if any) with command-line flags; flags win."""
    problems = []
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc}"])
        if not isinstance(data, dict):
            raise ConfigError([f"config {args.config} must hold a JSON object"])
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for k in sorted(set(data) - known):
        problems.append(f"unknown config key {k!r}")
    if problems:
        raise ConfigError(problems)
    merged = {k: v for k, v in data.items() if k in known}
    for k in known - {"verb", "action"}:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    merged["verb"] = args.verb
    merged["action"] = args.action or merged.get("action", "")
    if args.verb == "verify" and merged.get("resolution") is None:
        merged["resolution"] = [16, 64]
    if args.verb == "verify" and "levels" not in merged:
        merged["levels"] = 24
    return ExperimentConfig(**merged)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        manifest = run(cfg)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except DbarlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"verdict": manifest.verdict, "outputs": sorted(manifest.outputs)}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
