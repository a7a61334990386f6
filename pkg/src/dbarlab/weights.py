"""Weights and Muckenhoupt-type constants.

For a weight ``mu`` on a disc ``D`` the A_p quantity is

    (avg_D mu) * (avg_D mu^{1/(1-p)})^{p-1},

and the A_p constant is its supremum over discs.  A finite family of probe
discs stands in for "all discs"; each average is a quadrature on the disc.

A weight may vanish or blow up at isolated points.  A probe disc containing
such a point is integrated on dyadic shells centred at the point and clipped
to the disc, and the A_p quantity is recorded with the shells below
``eps_l = radius * 2**-l`` excised, ``l = 1..12``.  The sequence over ``l``
either settles (locally integrable powers) or keeps growing (a
non-integrable power), which is how divergence is detected.  All sums run in
the log domain, so tiny or huge values of ``mu`` never overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ParameterError
from .grid import cut_power
from .riesz import growth_protocol

FINITE = "FINITE"
DIVERGENT = "DIVERGENT"
INCONCLUSIVE = "INCONCLUSIVE"
UNIFORM = "UNIFORM"
NON_UNIFORM = "NON-UNIFORM"

# Gauss-Legendre nodes on [0, 1] used in log-radius on every dyadic shell.
_SHELL_X, _SHELL_W = np.polynomial.legendre.leggauss(6)
_SHELL_X = 0.5 * (_SHELL_X + 1.0)
_SHELL_W = 0.5 * _SHELL_W


@dataclass(eq=False)
class Weight:
    """A nonnegative weight on C^n.

    ``fn(*z)`` evaluates the weight with numpy broadcasting; ``log_fn`` (if
    given) evaluates its logarithm directly.  ``singular(j, zhat)`` lists the
    points of the ``j``-th coordinate slice through ``zhat`` where the weight
    vanishes or blows up (``zhat`` is ``None`` for one-variable weights, or
    when the points do not depend on it).  ``radial_profile(r)`` is an
    optional closed form of ``mu`` as a function of ``|z|`` for one-variable
    radial weights.
    """

    name: str
    fn: Callable
    dim: int = 1
    log_fn: Callable | None = None
    singular: Callable | None = None
    radial_profile: Callable | None = None
    cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, *z):
        return np.asarray(self.fn(*z), dtype=float)

    def log(self, *z):
        if self.log_fn is not None:
            return np.asarray(self.log_fn(*z), dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(self(*z))

    def singular_points(self, j: int = 0, zhat=None) -> list:
        if self.singular is None:
            return []
        return [complex(s) for s in self.singular(j, zhat)]

    def scaled(self, c: float) -> "Weight":
        if not c > 0:
            raise ParameterError("scale factor must be positive")
        lc = math.log(c)
        return Weight(
            f"{c:g}*{self.name}",
            lambda *z: c * self.fn(*z),
            self.dim,
            lambda *z: lc + self.log(*z),
            self.singular,
            None if self.radial_profile is None else (lambda r: c * self.radial_profile(r)),
        )

    def dilated(self, delta: Sequence[float]) -> "Weight":
        """``mu_delta(z) = mu(delta_1 z_1, ..., delta_n z_n)``."""
        d = [float(x) for x in delta]
        if len(d) != self.dim or any(x <= 0 for x in d):
            raise ParameterError(f"dilation must have {self.dim} positive entries, got {delta}")

        def sing(j, zhat):
            zh = None if zhat is None else [zk * dk for zk, dk in zip(zhat, d[:j] + d[j + 1 :])]
            return [s / d[j] for s in self.singular_points(j, zh)]

        return Weight(
            f"{self.name}@{tuple(d)}",
            lambda *z: self.fn(*(zk * dk for zk, dk in zip(z, d))),
            self.dim,
            lambda *z: self.log(*(zk * dk for zk, dk in zip(z, d))),
            sing if self.singular is not None else None,
        )

    def slice(self, j: int, zhat) -> "Weight":
        """One-variable weight ``zeta -> mu(zhat_1, ..., zeta (at j), ...)``."""
        zhat = [complex(x) for x in np.atleast_1d(zhat)]
        if len(zhat) != self.dim - 1:
            raise ParameterError(f"slice point needs {self.dim - 1} coordinates")

        def insert(zeta):
            parts = zhat[:j] + [zeta] + zhat[j:]
            return parts

        return Weight(
            f"{self.name}|z{j + 1}",
            lambda zeta: self.fn(*insert(zeta)),
            1,
            lambda zeta: self.log(*insert(zeta)),
            (lambda _j, _z: self.singular_points(j, zhat)) if self.singular is not None else None,
        )


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------

def constant_weight(dim: int = 1) -> Weight:
    return Weight("one", lambda *z: np.ones(np.broadcast(*z).shape), dim, lambda *z: np.zeros(np.broadcast(*z).shape),
                  radial_profile=lambda r: np.ones_like(r))


def power_weight(exponent: float, center: complex = 0j, coordinate: int = 0, dim: int = 1,
                 name: str | None = None) -> Weight:
    """``|z_j - center|^exponent`` on C^dim."""
    a = float(exponent)
    c = complex(center)
    j0 = coordinate

    def fn(*z):
        return np.broadcast_to(np.abs(z[j0] - c) ** a, np.broadcast(*z).shape)

    def lfn(*z):
        with np.errstate(divide="ignore"):
            return np.broadcast_to(a * np.log(np.abs(z[j0] - c)), np.broadcast(*z).shape)

    def sing(j, zhat):
        return [c] if j == j0 and a != 0 else []

    prof = (lambda r: r**a) if (c == 0 and dim == 1) else None
    label = name or (f"|z-{c:g}|^{a:g}" if c != 0 else f"|z|^{a:g}")
    return Weight(label, fn, dim, lfn, sing, prof)


def diagonal_weight() -> Weight:
    """``|z1 - z2|^2`` on C^2 (not of product type)."""

    def fn(z1, z2):
        return np.abs(z1 - z2) ** 2

    def lfn(z1, z2):
        with np.errstate(divide="ignore"):
            return 2 * np.log(np.abs(z1 - z2))

    def sing(j, zhat):
        return [] if zhat is None else [complex(zhat[0])]

    return Weight("|z1-z2|^2", fn, 2, lfn, sing)


def _abs2():
    w = power_weight(2.0, name="|z|^2")
    return w


def _w2abs2():
    return power_weight(2.0, coordinate=1, dim=2, name="|w2|^2")


REGISTRY = {
    "one": lambda: constant_weight(1),
    "one2": lambda: constant_weight(2),
    "abs2": _abs2,
    "w2abs2": _w2abs2,
    "diag": diagonal_weight,
}

DESCRIPTIONS = {
    "one": "mu = 1 on C",
    "one2": "mu = 1 on C^2",
    "abs2": "mu = |z|^2 on C",
    "w2abs2": "mu = |w2|^2 on C^2",
    "diag": "mu = |z1 - z2|^2 on C^2",
}


def get_weight(name: str) -> Weight:
    """Look up a named weight; ``power:A`` gives ``|z|^A`` on C."""
    if name in REGISTRY:
        return REGISTRY[name]()
    if name.startswith("power:"):
        try:
            a = float(name.split(":", 1)[1])
        except ValueError:
            raise ParameterError(f"bad power weight {name!r}") from None
        return power_weight(a)
    raise ParameterError(f"unknown weight {name!r}; known: {sorted(REGISTRY)} or power:A")


def ex26_weight(p: float, s_exp: float) -> Weight:
    """``|z2 - 1|^{s (p - 1)}`` on C^2."""
    return power_weight(s_exp * (p - 1), center=1.0, coordinate=1, dim=2,
                        name=f"|z2-1|^{s_exp * (p - 1):g}")


# --------------------------------------------------------------------------
# Disc families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscFamily:
    discs: tuple  # ((center, radius), ...)
    rule: str = "explicit"

    def __post_init__(self):
        ds = tuple((complex(c), float(r)) for c, r in self.discs)
        if not ds:
            raise ParameterError("disc family is empty")
        for c, r in ds:
            if not r > 0:
                raise ParameterError(f"disc radius must be positive, got {r}")
        object.__setattr__(self, "discs", ds)

    def __len__(self):
        return len(self.discs)


def default_family(weight: Weight | None = None, extent: float = 1.0, lattice: int = 9,
                   levels: int = 13, zhat=None, j: int = 0) -> DiscFamily:
    """Lattice centres over ``[-extent, extent]^2`` plus singular points; dyadic radii."""
    xs = np.linspace(-extent, extent, lattice)
    centers = [complex(x, y) for y in xs for x in xs]
    if weight is not None:
        for s in weight.singular_points(j, zhat):
            if s not in centers:
                centers.append(s)
    radii = extent * 2.0 ** (-np.arange(levels, dtype=float))
    return DiscFamily(tuple((c, r) for c in centers for r in radii), f"lattice{lattice}x{lattice}+singular/dyadic{levels}")


def centered_family(center: complex = 0j, levels: int = 13, extent: float = 1.0) -> DiscFamily:
    radii = extent * 2.0 ** (-np.arange(levels, dtype=float))
    return DiscFamily(tuple((center, r) for r in radii), f"centered/dyadic{levels}")


# --------------------------------------------------------------------------
# Per-disc quadrature
# --------------------------------------------------------------------------

def _disc_nodes(center, radius, res):
    n_r, n_t = res
    e = np.linspace(0.0, radius, n_r + 1)
    r = 0.5 * (e[:-1] + e[1:])
    th = (np.arange(n_t) + 0.5) * 2 * np.pi / n_t
    z = center + (r[:, None] * np.exp(1j * th[None, :])).ravel()
    w = np.repeat(0.5 * (e[1:] ** 2 - e[:-1] ** 2) * 2 * np.pi / n_t, n_t)
    return z, w


def _shell_nodes(s, r_lo, r_hi, n_t):
    """Gauss nodes in log-radius times midpoint angles on one shell about ``s``."""
    lr = math.log(r_lo) + (math.log(r_hi) - math.log(r_lo)) * _SHELL_X
    rr = np.exp(lr)
    wr = _SHELL_W * (math.log(r_hi) - math.log(r_lo)) * rr**2  # r dr = r^2 dlog r
    th = (np.arange(n_t) + 0.5) * 2 * np.pi / n_t
    z = s + (rr[:, None] * np.exp(1j * th[None, :])).ravel()
    w = np.repeat(wr * 2 * np.pi / n_t, n_t)
    return z, w


@dataclass
class DiscValue:
    center: complex
    radius: float
    value: float
    status: str  # "regular" | "converged" | "divergent" | "unsettled"
    ladder: list = field(default_factory=list)


def _ap_from_logs(lmu, lw, p):
    la = logsumexp(lw)
    l1 = logsumexp(lmu + lw) - la
    l2 = logsumexp(lmu / (1.0 - p) + lw) - la
    return math.exp(l1 + (p - 1) * l2)


def disc_ap_value(weight: Weight, p: float, center: complex, radius: float,
                  resolution=(24, 48), excision_levels: int = 12) -> DiscValue:
    """A_p quantity of a one-variable weight on one disc."""
    center = complex(center)
    sing = [s for s in weight.singular_points(0) if abs(s - center) <= radius * (1 + 1e-12)]
    if not sing:
        z, w = _disc_nodes(center, radius, resolution)
        lmu = weight.log(z)
        if np.any(~np.isfinite(lmu)):
            return DiscValue(center, radius, math.inf, "divergent")
        return DiscValue(center, radius, _ap_from_logs(lmu, np.log(w), p), "regular")
    s = sing[0]
    n_t = resolution[1]
    outer = abs(s - center) + radius
    bounds = [outer]
    while bounds[-1] / 2 > radius / 2:
        bounds.append(bounds[-1] / 2)
    eps = [radius * 2.0**-l for l in range(1, excision_levels + 1)]
    bounds = sorted(set(bounds) | set(eps), reverse=True)
    shells = []
    for hi, lo in zip(bounds[:-1], bounds[1:]):
        z, w = _shell_nodes(s, lo, hi, n_t)
        keep = np.abs(z - center) < radius
        if not keep.any():
            shells.append((lo, -np.inf, -np.inf, -np.inf))
            continue
        z, w = z[keep], w[keep]
        lmu = weight.log(z)
        lw = np.log(w)
        shells.append((lo, logsumexp(lw), logsumexp(lmu + lw), logsumexp(lmu / (1.0 - p) + lw)))
    ladder = []
    la = l1 = l2 = -np.inf
    k = 0
    for e in eps:
        while k < len(shells) and shells[k][0] >= e * (1 - 1e-12):
            _, a_, b_, c_ = shells[k]
            la, l1, l2 = np.logaddexp(la, a_), np.logaddexp(l1, b_), np.logaddexp(l2, c_)
            k += 1
        if not np.isfinite(la):
            ladder.append(float("nan"))
            continue
        val = math.exp((l1 - la) + (p - 1) * (l2 - la)) if np.isfinite(l1) and np.isfinite(l2) else math.inf
        ladder.append(val)
    lad = np.array([v for v in ladder if not np.isnan(v)])
    if lad.size == 0:
        return DiscValue(center, radius, math.nan, "unsettled", ladder)
    if growth_protocol(lad):
        status = "divergent"
    elif lad.size >= 2 and abs(lad[-1] - lad[-2]) <= 0.01 * abs(lad[-2]):
        status = "converged"
    else:
        status = "unsettled"
    return DiscValue(center, radius, float(lad[-1]), status, ladder)


@dataclass
class ApEstimate:
    constant: float
    disc: tuple | None
    trace: list
    verdict: str
    p: float = 0.0
    notes: list = field(default_factory=list)

    def rows(self):
        for dv in self.trace:
            yield {
                "disc_center": dv.center,
                "disc_radius": dv.radius,
                "ap_value": dv.value,
                "status": dv.status,
            }

    def summary(self) -> dict:
        return {
            "p": self.p,
            "constant": self.constant,
            "verdict": self.verdict,
            "disc": None if self.disc is None else [str(self.disc[0]), self.disc[1]],
            "discs_probed": len(self.trace),
            "notes": self.notes,
        }


def _aggregate(trace: list, p: float) -> ApEstimate:
    notes = []
    divergent = [dv for dv in trace if dv.status == "divergent"]
    # shrinking radii about a fixed centre
    by_center: dict = {}
    for dv in trace:
        by_center.setdefault(dv.center, []).append(dv)
    for c, dvs in by_center.items():
        dvs = sorted(dvs, key=lambda d: -d.radius)
        vals = [d.value for d in dvs]
        if len(vals) >= 5 and growth_protocol(vals):
            notes.append(f"values grow along shrinking discs centred at {c}")
            divergent.append(dvs[-1])
    finite = [dv for dv in trace if np.isfinite(dv.value)]
    best = max(finite, key=lambda d: d.value) if finite else None
    if divergent:
        d = max(divergent, key=lambda d: d.value if np.isfinite(d.value) else math.inf)
        return ApEstimate(math.inf, (d.center, d.radius), trace, DIVERGENT, p, notes)
    if any(dv.status == "unsettled" for dv in trace):
        notes.append("some excision ladders did not settle")
        verdict = INCONCLUSIVE
    else:
        verdict = FINITE
    if best is None:
        return ApEstimate(math.nan, None, trace, INCONCLUSIVE, p, notes)
    return ApEstimate(best.value, (best.center, best.radius), trace, verdict, p, notes)


def _check_p(p):
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")


def ap_constant(weight: Weight, p: float, family: DiscFamily | None = None,
                resolution=(24, 48)) -> ApEstimate:
    """Estimate the A_p constant of a one-variable weight over a disc family."""
    _check_p(p)
    if weight.dim != 1:
        raise ParameterError("ap_constant takes a one-variable weight; use ap_star_constant")
    family = family or default_family(weight)
    key = ("ap", float(p), family, tuple(resolution))
    if key in weight.cache:
        return weight.cache[key]
    trace = [disc_ap_value(weight, p, c, r, resolution) for c, r in family.discs]
    est = _aggregate(trace, p)
    weight.cache.setdefault(key, est)
    return weight.cache[key]


def default_slices(n: int, count: int = 16) -> list:
    """``count`` slice points in C^(n-1): radii {0.05, 0.3, 0.6, 0.9} times 4 directions."""
    pts = []
    for r in (0.05, 0.3, 0.6, 0.9):
        for k in range(4):
            z = r * np.exp(1j * (np.pi / 4 + k * np.pi / 2))
            pts.append(tuple([complex(z)] * (n - 1)))
    return pts[:count]


def ap_star_constant(weight: Weight, p: float, slice_samples=None, family: DiscFamily | None = None,
                     resolution=(24, 48)) -> ApEstimate:
    """Largest one-variable A_p estimate over coordinate slices of ``weight``."""
    _check_p(p)
    if weight.dim == 1:
        return ap_constant(weight, p, family, resolution)
    if slice_samples is None:
        slice_samples = default_slices(weight.dim)
    slice_samples = list(slice_samples)
    if not slice_samples:
        raise ParameterError("slice sample is empty")
    trace, notes = [], []
    verdicts = []
    best = None
    per_slice = []
    for j in range(weight.dim):
        for zh in slice_samples:
            zh = tuple(np.atleast_1d(zh))
            w1 = weight.slice(j, zh)
            fam = family or default_family(w1)
            est = ap_constant(w1, p, fam, resolution)
            per_slice.append((j, zh, est))
            verdicts.append(est.verdict)
            trace.extend(est.trace)
            if best is None or (est.constant > best.constant):
                best = est
    if DIVERGENT in verdicts:
        verdict = DIVERGENT
        const = math.inf
    elif INCONCLUSIVE in verdicts:
        verdict = INCONCLUSIVE
        const = best.constant
    else:
        verdict = FINITE
        const = best.constant
    out = ApEstimate(const, best.disc, trace, verdict, p, notes)
    out.notes.append(f"{len(per_slice)} slices probed")
    out.per_slice = per_slice
    return out


# --------------------------------------------------------------------------
# Dilations
# --------------------------------------------------------------------------

def _coordinate_nodes(weight, j, center, radius, res, offset):
    """Quadrature nodes for one coordinate disc of a polydisc probe."""
    sing = [s for s in weight.singular_points(j, None) if abs(s - center) <= radius * (1 + 1e-12)]
    if not sing:
        z, w = _disc_nodes(center, radius, res)
        z = center + (z - center) * np.exp(1j * offset)
        return z, w
    s = sing[0]
    outer = abs(s - center) + radius
    lo = radius * 2.0**-10
    zs, ws = [], []
    hi = outer
    while hi > lo * 1.0000001:
        z, w = _shell_nodes(s, max(hi / 2, lo), hi, res[1])
        keep = np.abs(z - center) < radius
        zs.append(z[keep])
        ws.append(w[keep])
        hi /= 2
    return np.concatenate(zs), np.concatenate(ws)


def polydisc_ap_value(weight: Weight, p: float, centers, radius, res=(12, 24)) -> float:
    nodes = []
    n = weight.dim
    for j, c in enumerate(centers):
        nodes.append(_coordinate_nodes(weight, j, complex(c), radius, res, offset=np.pi * j / (res[1] * n)))
    zs = []
    lw = 0.0
    for j, (z, w) in enumerate(nodes):
        sh = [1] * n
        sh[j] = z.size
        zs.append(z.reshape(sh))
        lw = lw + np.log(w).reshape(sh)
    lmu = np.broadcast_to(weight.log(*zs), np.broadcast(*zs).shape)
    lw = np.broadcast_to(lw, lmu.shape)
    if np.any(~np.isfinite(lmu)):
        return math.inf
    return _ap_from_logs(lmu.ravel(), lw.ravel(), p)


@dataclass
class DilationReport:
    dilations: list
    estimates: list
    ratio: float
    verdict: str
    bound: float
    probes: int

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "ratio": self.ratio,
            "bound": self.bound,
            "probes": self.probes,
            "estimates": [{"delta": list(d), "estimate": e} for d, e in zip(self.dilations, self.estimates)],
        }


def dilation_ap_check(weight: Weight, p: float, dilations, centers=None, radii=None,
                      bound: float = 1.05, resolution=(12, 24)) -> DilationReport:
    """A_p estimates of ``mu_delta`` over polydisc probes, compared across ``delta``.

    Balls are replaced by polydiscs with equal radii; the probe set is every
    combination of per-coordinate centres with every radius.
    """
    _check_p(p)
    dilations = [tuple(float(x) for x in d) for d in dilations]
    if not dilations:
        raise ParameterError("no dilations given")
    for d in dilations:
        if len(d) != weight.dim or any(x <= 0 for x in d):
            raise ParameterError(f"dilation {d} must have {weight.dim} positive entries")
    if centers is None:
        centers = [0j, 0.5, -0.5, 0.5j, -0.5j]
    if radii is None:
        radii = 2.0 ** -np.arange(6)
    import itertools

    combos = list(itertools.product(centers, repeat=weight.dim))
    estimates = []
    for d in dilations:
        wd = weight.dilated(d)
        best = 0.0
        for cs in combos:
            for r in radii:
                best = max(best, polydisc_ap_value(wd, p, cs, float(r), resolution))
        estimates.append(best)
    est = np.array(estimates)
    ratio = float(est.max() / est.min()) if np.all(np.isfinite(est)) and est.min() > 0 else math.inf
    verdict = UNIFORM if ratio <= bound else NON_UNIFORM
    return DilationReport(dilations, estimates, ratio, verdict, bound, len(combos) * len(radii))


__all__ = [
    "Weight", "DiscFamily", "ApEstimate", "DiscValue", "DilationReport",
    "constant_weight", "power_weight", "diagonal_weight", "get_weight", "ex26_weight",
    "default_family", "centered_family", "default_slices", "disc_ap_value",
    "ap_constant", "ap_star_constant", "dilation_ap_check", "polydisc_ap_value",
    "REGISTRY", "DESCRIPTIONS", "FINITE", "DIVERGENT", "INCONCLUSIVE", "UNIFORM", "NON_UNIFORM",
    "cut_power",
]
