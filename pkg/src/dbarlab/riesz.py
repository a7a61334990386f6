"""Riesz-type integrals with product kernels and the Hardy-Littlewood maximal function.

``R_alpha f(z) = sum_zeta f(zeta) prod_j |zeta_j - z_j|^{-alpha_j} w(zeta)``
on a product polar grid.  Off the diagonal this is the plain midpoint sum.  On
the diagonal cell of a factor the kernel is integrated exactly over the polar
cell, with ``f`` frozen at the cell centre:

    int_cell |zeta - z|^{-a} dA = int_0^{2pi} rho(phi)^{2-a} / (2-a) dphi,

where ``rho(phi)`` is the distance from the centre to the cell boundary in
direction ``phi``.

Because the kernel is a product, the operator factorises into one-variable
operators applied axis by axis (the discrete Fubini identity).  On a polar
factor the one-variable kernel depends on the angle difference only, so it is
circulant in the angle and is applied through the FFT with one dense radial
matrix per angular mode.  A dense direct evaluation is kept for checks.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GridMismatchError, ParameterError
from .grid import (
    DiscFactor,
    SampledField,
    apply_along_factor,
    build_grid,
    mode_operator,
    sample,
    weighted_lp_norm,
)

_riesz_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()

_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


@dataclass(frozen=True)
class RieszExponent:
    alpha: tuple

    def __post_init__(self):
        a = tuple(float(x) for x in np.atleast_1d(self.alpha))
        if not a:
            raise ParameterError("alpha must have at least one entry")
        for x in a:
            if not 0 < x < 2:
                raise ParameterError(f"every alpha_j must lie in (0, 2), got {x}")
        object.__setattr__(self, "alpha", a)

    def __len__(self):
        return len(self.alpha)


def _as_exponent(alpha) -> RieszExponent:
    return alpha if isinstance(alpha, RieszExponent) else RieszExponent(tuple(np.atleast_1d(alpha)))


# --------------------------------------------------------------------------
# Self-cell integral
# --------------------------------------------------------------------------

def _boundary_distance(z, phis, a, b, half):
    """Distance from ``z`` (real, inside the cell) to the cell boundary along ``phis``.

    The cell is ``a < |zeta| < b``, ``|arg zeta| < half``.
    """
    u = np.exp(1j * phis)
    best = np.full(phis.shape, np.inf)
    bb = np.real(np.conj(z) * u)
    # outer circle: z is inside, one positive root
    c = abs(z) ** 2 - b**2
    t = -bb + np.sqrt(np.maximum(bb**2 - c, 0.0))
    best = np.minimum(best, np.where(t > 0, t, np.inf))
    if a > 0:
        c = abs(z) ** 2 - a**2
        disc = bb**2 - c
        t = -bb - np.sqrt(np.maximum(disc, 0.0))
        best = np.minimum(best, np.where((disc >= 0) & (t > 0), t, np.inf))
    if half < np.pi:
        for beta in (half, -half):
            e = np.exp(-1j * beta)
            den = np.imag(u * e)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -np.imag(z * e) / den
                s = np.real((z + t * u) * e)
            ok = (np.abs(den) > 1e-300) & (t > 0) & (s >= 0)
            best = np.minimum(best, np.where(ok, t, np.inf))
    return best


def cell_kernel_integral(a: float, b: float, rho: float, dtheta: float, alpha: float) -> float:
    """``int |zeta - rho|^{-alpha} dA`` over the polar cell ``[a,b] x [-dtheta/2, dtheta/2]``."""
    z = complex(rho, 0.0)
    half = dtheta / 2
    corners = []
    for rad in (a, b):
        for s in (half, -half):
            if rad > 0:
                corners.append(rad * np.exp(1j * s))
    if a == 0:
        corners.append(0j)
    brk = [np.angle(c - z) for c in corners]
    if a > 0 and rho > a:
        # tangent directions to the inner circle
        tang = math.asin(min(1.0, a / rho))
        brk += [np.pi - tang, -(np.pi - tang)]
    brk = np.sort(np.mod(np.array(brk), 2 * np.pi))
    brk = np.concatenate([brk, [brk[0] + 2 * np.pi]])
    total = 0.0
    for lo, hi in zip(brk[:-1], brk[1:]):
        if hi - lo < 1e-15:
            continue
        ph = 0.5 * (hi - lo) * _GL_X + 0.5 * (hi + lo)
        d = _boundary_distance(z, ph, a, b, half)
        d = np.where(np.isfinite(d), d, 0.0)
        total += 0.5 * (hi - lo) * float(np.sum(_GL_W * d ** (2 - alpha)))
    return total / (2 - alpha)


# --------------------------------------------------------------------------
# One-factor operator
# --------------------------------------------------------------------------

def _kernel_table(g, alpha):
    """``K[i, i', d] = |r_i - r_i' e^{i d dtheta}|^{-alpha} * cellarea(i')`` with exact self cells."""
    d = np.arange(g.n_theta)
    ph = np.exp(1j * d * g.dtheta)
    dist = np.abs(g.r[:, None, None] - g.r[None, :, None] * ph[None, None, :])
    with np.errstate(divide="ignore"):
        K = dist ** (-alpha) * g.cell_area[None, :, None]
    e = g.r_edges
    for i in range(g.n_r):
        K[i, i, 0] = cell_kernel_integral(e[i], e[i + 1], g.r[i], g.dtheta, alpha)
    return K


def riesz_radial_matrices(g, alpha: float) -> np.ndarray:
    per = _riesz_cache.setdefault(g, {})
    key = float(alpha)
    if key not in per:
        K = _kernel_table(g, alpha)
        # circular correlation with a kernel even in d: diagonal in Fourier space
        Khat = np.fft.fft(K, axis=2).real
        M = np.ascontiguousarray(np.moveaxis(Khat, 2, 0))
        M.setflags(write=False)
        per[key] = M
    return per[key]


def riesz_factor_matrix(g, alpha: float) -> np.ndarray:
    """Dense ``(size, size)`` one-factor matrix (node order), for direct checks."""
    K = _kernel_table(g, alpha)
    n = g.n_theta
    jj = np.arange(n)
    dd = np.mod(jj[None, :] - jj[:, None], n)  # d = j' - j
    M = K[:, :, dd]  # (i, i', j, j')
    return np.transpose(M, (0, 2, 1, 3)).reshape(g.size, g.size)


def riesz_apply(f: SampledField, alpha) -> SampledField:
    """Product-kernel Riesz integral of ``f`` evaluated at every node."""
    ex = _as_exponent(alpha)
    grid = f.grid
    if len(ex) != grid.n:
        raise GridMismatchError(f"alpha has {len(ex)} entries for an {grid.n}-factor grid")
    out = np.array(np.broadcast_to(f.values, grid.shape), dtype=complex)
    for j, a in enumerate(ex.alpha):
        op = mode_operator(riesz_radial_matrices(grid.factors[j], a), shift=0)
        apply_along_factor(out, grid, j, op, out=out)
    return SampledField(grid, out)


def riesz_apply_direct(f: SampledField, alpha) -> SampledField:
    """Same operator by dense per-factor matrices (small grids only)."""
    ex = _as_exponent(alpha)
    grid = f.grid
    if len(ex) != grid.n:
        raise GridMismatchError(f"alpha has {len(ex)} entries for an {grid.n}-factor grid")
    out = np.array(np.broadcast_to(f.values, grid.shape), dtype=complex)
    for j, a in enumerate(ex.alpha):
        M = riesz_factor_matrix(grid.factors[j], a)
        out = np.moveaxis(np.tensordot(M, out, axes=([1], [j])), 0, j)
    return SampledField(grid, out)


def riesz_apply_full_kernel(f: SampledField, alpha) -> SampledField:
    """Product-kernel sum over all node pairs at once, without factorising.

    Quadratic in the total node count; used to confirm the factor-by-factor
    evaluation on tiny grids.
    """
    ex = _as_exponent(alpha)
    grid = f.grid
    mats = [riesz_factor_matrix(g, a) for g, a in zip(grid.factors, ex.alpha)]
    full = mats[0]
    for m in mats[1:]:
        full = np.kron(full, m)
    vals = full @ np.ravel(np.broadcast_to(f.values, grid.shape))
    return SampledField(grid, vals.reshape(grid.shape))


# --------------------------------------------------------------------------
# Maximal function
# --------------------------------------------------------------------------

def default_radii(g, count: int = 12) -> np.ndarray:
    """Dyadic ladder from the factor diameter downwards."""
    diam = 2.0 * g.factor.radius
    return diam * 2.0 ** (-np.arange(count, dtype=float))


def _probe_disc(n_r: int, n_t: int):
    edges = np.linspace(0.0, 1.0, n_r + 1)
    rr = 0.5 * (edges[:-1] + edges[1:])
    tt = (np.arange(n_t) + 0.5) * 2 * np.pi / n_t
    pts = (rr[:, None] * np.exp(1j * tt[None, :])).ravel()
    w = np.repeat(0.5 * (edges[1:] ** 2 - edges[:-1] ** 2) * 2 * np.pi / n_t, n_t)
    return pts, w / np.pi  # weights of the unit disc normalised to total 1


def maximal_at(f: SampledField, points, radii, probe=(16, 32)) -> np.ndarray:
    """Discrete maximal function of ``|f|`` (zero outside the factor) at ``points``."""
    grid = f.grid
    if grid.n != 1:
        raise ParameterError("the maximal function is defined for one-factor grids")
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise ParameterError("the radius ladder is empty")
    if np.any(radii <= 0):
        raise ParameterError("probe radii must be positive")
    g = grid.factors[0]
    absf = np.abs(f.flat)
    pts_u, w_u = _probe_disc(*probe)
    points = np.atleast_1d(np.asarray(points, dtype=complex))
    best = np.zeros(points.shape)
    for r in radii:
        for s in range(0, points.size, 256):
            z = points[s : s + 256]
            vals = g.interpolate(absf, z[:, None] + r * pts_u[None, :], outside=0.0)
            avg = vals @ w_u
            best[s : s + 256] = np.maximum(best[s : s + 256], avg)
    return best


def maximal_function(f: SampledField, radii=None, probe=(16, 32)) -> SampledField:
    """``Mf`` at every node, maximised over the radius ladder."""
    grid = f.grid
    if grid.n != 1:
        raise ParameterError("the maximal function is defined for one-factor grids")
    g = grid.factors[0]
    if radii is None:
        radii = default_radii(g)
    return SampledField(grid, maximal_at(f, g.nodes, radii, probe))


# --------------------------------------------------------------------------
# Boundedness probes
# --------------------------------------------------------------------------

BOUNDED = "BOUNDED"
DIVERGENT = "DIVERGENT"
NOT_BOUNDED = "NOT-BOUNDED-AT-PROTOCOL"
INCONCLUSIVE = "INCONCLUSIVE"

_SEVERITY = {BOUNDED: 0, INCONCLUSIVE: 1, NOT_BOUNDED: 2, DIVERGENT: 3}


def growth_protocol(values: Sequence[float], factor: float = 4.0, span: int = 4) -> bool:
    """True if the trailing monotone run spans >= ``span`` steps with growth >= ``factor``.

    An infinite or NaN entry counts as divergence.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return False
    if not np.all(np.isfinite(v)):
        return True
    end = v.size - 1
    start = end
    while start > 0 and v[start - 1] < v[start]:
        start -= 1
    if end - start < span:
        return False
    return v[start] > 0 and v[end] / v[start] >= factor


def classify_ratios(ratios: Sequence[float], stable_tol: float = 0.10, window: int = 3) -> str:
    r = np.asarray(ratios, dtype=float)
    if growth_protocol(r):
        return DIVERGENT
    if r.size < 2:
        return INCONCLUSIVE
    changes = np.abs(np.diff(r)) / np.abs(r[:-1])
    tail = changes[-min(window, changes.size) :]
    if np.all(tail <= stable_tol):
        return BOUNDED
    if np.all(np.diff(r) > 0) and np.all(changes > stable_tol):
        return NOT_BOUNDED
    return INCONCLUSIVE


@dataclass
class BoundednessReport:
    names: list
    ratios: list  # per input: list over levels
    verdicts: list
    verdict: str
    max_ratio: float
    notices: list = field(default_factory=list)

    def rows(self):
        for name, rs in zip(self.names, self.ratios):
            for level, r in enumerate(rs):
                yield {"input": name, "level": level, "ratio": r}

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_ratio": self.max_ratio,
            "inputs": [
                {"name": n, "ratios": r, "verdict": v}
                for n, r, v in zip(self.names, self.ratios, self.verdicts)
            ],
            "notices": self.notices,
        }


def refined(fn: Callable, spec, base_resolution, spacing="uniform") -> Callable:
    """Generator sampling ``fn`` on ``spec`` at ``base_resolution * 2**level``."""
    n_r, n_t = base_resolution

    def gen(level: int) -> SampledField:
        k = 2**level
        return sample(fn, build_grid(spec, (n_r * k, n_t * k), spacing))

    gen.__name__ = getattr(fn, "__name__", "input")
    return gen


def boundedness_probe(inputs, alpha, weight=None, p: float = 2.0, levels: int = 3,
                      names=None) -> BoundednessReport:
    """Ratios ``||R_alpha f||_{p,mu} / ||f||_{p,mu}`` for each input across levels.

    ``inputs`` are callables ``level -> SampledField``.
    """
    if levels < 1:
        raise ParameterError("levels must be >= 1")
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    ex = _as_exponent(alpha)
    names = list(names) if names is not None else [getattr(g, "__name__", f"f{i}") for i, g in enumerate(inputs)]
    all_ratios, verdicts, notices = [], [], []
    kept = []
    for name, gen in zip(names, inputs):
        ratios = []
        skipped = False
        for level in range(levels):
            f = gen(level)
            if len(ex) != f.grid.n:
                raise GridMismatchError(f"alpha has {len(ex)} entries for an {f.grid.n}-factor grid")
            fn = weighted_lp_norm(f, weight, p)
            if fn == 0:
                notices.append(f"{name}: zero norm at level {level}, skipped")
                skipped = True
                break
            rf = riesz_apply(f, ex)
            ratios.append(weighted_lp_norm(rf, weight, p) / fn)
        if skipped:
            continue
        kept.append(name)
        all_ratios.append(ratios)
        verdicts.append(classify_ratios(ratios))
    if verdicts:
        overall = max(verdicts, key=lambda v: _SEVERITY[v])
        mx = max(max(r) for r in all_ratios)
    else:
        overall, mx = INCONCLUSIVE, float("nan")
    return BoundednessReport(kept, all_ratios, verdicts, overall, mx, notices)


# Smooth inputs on the bidisc used for refinement studies.
SMOOTH_FAMILY = {
    "one": lambda a, b: np.ones(np.broadcast(a, b).shape, dtype=complex),
    "modulus-sum": lambda a, b: np.abs(a) ** 2 + np.abs(b) ** 2,
    "gaussian": lambda a, b: np.exp(-(np.abs(a) ** 2) - 2 * np.abs(b) ** 2),
    "mixed": lambda a, b: a * np.conj(b) + 1.0,
    "oscillating": lambda a, b: np.cos(2 * a.real) * (1 + b.imag**2) + 0j,
}


def smooth_inputs(spec, base_resolution, spacing="uniform"):
    """``(names, generators)`` for ``SMOOTH_FAMILY`` on ``spec``."""
    names = sorted(SMOOTH_FAMILY)
    return names, [refined(SMOOTH_FAMILY[n], spec, base_resolution, spacing) for n in names]


def dyadic_cutoff(level: int, start: int = 1) -> float:
    return 2.0 ** -(start + level)


def octave_doubling_cutoff(level: int) -> float:
    """``2^{-2^level}``: the support gains as many octaves as it already has."""
    return 2.0 ** -(2**level)


def concentrating_input(power: float = 2.0, cutoff: Callable = octave_doubling_cutoff,
                        rings_per_octave: int = 4, n_theta: int = 32) -> Callable:
    """Generator ``level -> |z|^{-power} 1_{|z| > a}`` with ``a = cutoff(level)``.

    Level ``l`` samples on the annulus ``a < |z| < 1`` with geometric rings,
    so every octave of the support gets the same number of rings.  The disc
    ``|z| < a``, where the input vanishes, is left out of both norms; this can
    only lower ``||R f||``, so growth of the ratio is still a witness.
    """
    if power <= 0:
        raise ParameterError(f"power must be positive, got {power}")

    def gen(level: int) -> SampledField:
        a = float(cutoff(level))
        if not 0 < a < 1:
            raise ParameterError(f"cutoff radius must lie in (0, 1), got {a}")
        n_r = max(2, math.ceil(rings_per_octave * math.log2(1 / a)))
        g = build_grid(DiscFactor(0j, 1.0, a), (n_r, n_theta), "geometric")
        return sample(lambda z: np.abs(z) ** -power + 0j, g)

    gen.__name__ = f"abs-power-{power:g}"
    return gen
