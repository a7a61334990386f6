"""The Hartogs triangle and the punctured bidisc.

``psi(w) = (w1 w2, w2)`` maps the punctured bidisc ``D x D*`` onto the
Hartogs triangle ``H = {|z1| < |z2| < 1}``; its inverse is
``phi(z) = (z1/z2, z2)``.  A grid on ``H`` is the psi-image of a product grid
on ``D x {eps < |w2| < 1}``: the nodes are ``psi`` of the base nodes and the
quadrature weights carry the real Jacobian ``|w2|^2``.  Pull-backs and
push-forwards are therefore exact re-indexings of the same value arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dbar import (
    HolomorphicBasis,
    SolveResult,
    _iterated_cauchy,
    _projector,
    residuals,
)
from .errors import GridMismatchError, NotClosedError, ParameterError, ThresholdError
from .grid import (
    DiscFactor,
    Form01,
    ProductGrid,
    SampledField,
    build_grid,
    dbar_fd,
    form_lp_norm,
    integrate_array,
    weighted_lp_norm,
)
from .weights import power_weight

PSI = "PSI"
PHI = "PHI"

EXTENDS = "EXTENDS"
OBSTRUCTED = "OBSTRUCTED"
NOT_CLOSED = "NOT-CLOSED"

DEFAULT_PUNCTURE = 2.0**-10
DEFAULT_K_LADDER = (2, 4, 8, 16, 32, 64, 128, 256)


def psi(w1, w2):
    return w1 * w2, w2


def phi(z1, z2):
    return z1 / z2, z2


@dataclass(frozen=True)
class BiholoMap:
    direction: str = PSI

    def __post_init__(self):
        if self.direction not in (PSI, PHI):
            raise ParameterError(f"direction must be PSI or PHI, got {self.direction!r}")

    def __call__(self, a, b):
        return psi(a, b) if self.direction == PSI else phi(a, b)

    def inverse(self) -> "BiholoMap":
        return BiholoMap(PHI if self.direction == PSI else PSI)


@dataclass(frozen=True, eq=False)
class HartogsProductGrid(ProductGrid):
    """Grid on H: base-grid nodes mapped by psi, weights times ``|w2|^2``.

    ``coords()`` returns the H coordinates ``(z1, z2)``; the base grid keeps
    the ``w`` coordinates.
    """

    base: ProductGrid | None = None

    def coords(self) -> tuple:
        w1, w2 = self.base.coords()
        return w1 * w2, w2

    def w_coords(self) -> tuple:
        return self.base.coords()


def hartogs_grid(resolution=(32, 64), puncture: float = DEFAULT_PUNCTURE, spacing="uniform",
                 resolution2=None) -> HartogsProductGrid:
    """H grid over the base ``D x {puncture < |w2| < 1}``.

    ``spacing`` applies to the ``w2`` factor (``"geometric"`` concentrates
    rings at the puncture).
    """
    if not 0 < puncture < 1:
        raise ParameterError(f"puncture radius must lie in (0, 1), got {puncture}")
    res2 = resolution2 or resolution
    base = build_grid(
        [DiscFactor(0j, 1.0, 0.0), DiscFactor(0j, 1.0, puncture)],
        [resolution, res2],
        ["uniform", spacing],
    )
    g2 = base.factors[1]
    w2abs = np.abs(g2.nodes) ** 2
    return HartogsProductGrid(base.factors, (base.factor_weights[0], base.factor_weights[1] * w2abs), base)


def jacobian_weight():
    """``|w2|^2`` on C^2, the real Jacobian of psi."""
    return power_weight(2.0, coordinate=1, dim=2, name="|w2|^2")


def _require_h(f):
    if not isinstance(f.grid, HartogsProductGrid):
        raise GridMismatchError("expected data on a Hartogs-triangle grid")


def pull_back_form(f: Form01) -> Form01:
    """``psi^* f = (f1 o psi) conj(w2) dw1bar + ((f1 o psi) conj(w1) + f2 o psi) dw2bar``."""
    _require_h(f)
    base = f.grid.base
    w1, w2 = base.coords()
    f1 = f.components[0].values
    f2 = f.components[1].values
    return Form01(base, [f1 * np.conj(w2), f1 * np.conj(w1) + f2])


def push_forward(u: SampledField, hgrid: HartogsProductGrid) -> SampledField:
    """``u o phi`` on the H grid (same values, re-indexed)."""
    if u.grid is not hgrid.base:
        raise GridMismatchError("the field does not live on this grid's base")
    return SampledField(hgrid, u.values)


def pull_back_function(u: SampledField) -> SampledField:
    _require_h(u)
    return SampledField(u.grid.base, u.values)


# --------------------------------------------------------------------------
# Test forms and cutoffs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Bump:
    """``(1 - |zeta - c|^2 / rho^2)^4`` on ``|zeta - c| < rho``, zero outside."""

    center: complex
    radius: float

    def __call__(self, z):
        t = 1.0 - np.abs(z - self.center) ** 2 / self.radius**2
        return np.where(t > 0, t, 0.0) ** 4

    def dbar(self, z):
        t = 1.0 - np.abs(z - self.center) ** 2 / self.radius**2
        t = np.where(t > 0, t, 0.0)
        return -4.0 * t**3 * (z - self.center) / self.radius**2

    def integral(self) -> float:
        return math.pi * self.radius**2 / 5.0


@dataclass(frozen=True)
class TestForm:
    """Product bump ``eta(w) = b1(w1) b2(w2)`` (a (2,0)-form coefficient).

    ``kind`` is ``"scalar"``; ``avoid_puncture`` declares that the support
    misses ``w2 = 0``.
    """

    b1: Bump
    b2: Bump
    kind: str = "scalar"
    avoid_puncture: bool = False

    __test__ = False  # not a pytest class

    def value(self, w1, w2):
        return self.b1(w1) * self.b2(w2)

    def dbar1(self, w1, w2):
        return self.b1.dbar(w1) * self.b2(w2)

    def dbar2(self, w1, w2):
        return self.b1(w1) * self.b2.dbar(w2)

    def slice_integral(self) -> float:
        """``int eta(w1, 0) dV(w1)``."""
        return self.b1.integral() * float(self.b2(0j))


def bump_form(c1=0j, r1=0.5, c2=0j, r2=0.5, avoid_puncture=False) -> TestForm:
    return TestForm(Bump(complex(c1), float(r1)), Bump(complex(c2), float(r2)), avoid_puncture=avoid_puncture)


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def _smooth_step_deriv(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    ts = np.where(inside, t, 0.5)
    a = np.exp(-1.0 / ts)
    b = np.exp(-1.0 / (1.0 - ts))
    da = a / ts**2
    db = -b / (1.0 - ts) ** 2
    d = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return np.where(inside, d, 0.0)


@dataclass(frozen=True)
class CutoffFamily:
    """``chi(w) = 1 - step(2|w| - 1)``: equal to 1 on ``|w| <= 1/2``, 0 for ``|w| >= 1``.

    ``chi_k(w) = chi(k w)`` is supported in ``|w| < 1/k``.
    """

    def chi(self, w, k: float = 1.0):
        return 1.0 - _smooth_step(2.0 * np.abs(k * w) - 1.0)

    def dbar_chi(self, w, k: float = 1.0):
        """``d chi_k / d wbar = k chi'(|kw|) (kw) / (2 |kw|)``."""
        kw = k * w
        r = np.abs(kw)
        dr = -2.0 * _smooth_step_deriv(2.0 * r - 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, k * dr * kw / (2.0 * np.where(r > 0, r, 1.0)), 0.0)

    def max_gradient(self, k: float = 1.0, samples: int = 20001) -> float:
        """Largest ``|grad chi_k| = 2 |d chi_k / d wbar|`` on a fine radial sample."""
        r = np.linspace(0.0, 1.0 / k, samples)
        return float(np.max(2.0 * np.abs(self.dbar_chi(r + 0j, k))))


# --------------------------------------------------------------------------
# Pairings
# --------------------------------------------------------------------------

def _check_support(grid, eta: TestForm):
    f1, f2 = grid.factors[0].factor, grid.factors[1].factor
    if abs(eta.b1.center - f1.center) + eta.b1.radius > f1.radius * (1 + 1e-12):
        raise ParameterError("test form support leaves the first factor")
    if abs(eta.b2.center - f2.center) + eta.b2.radius > f2.radius * (1 + 1e-12):
        raise ParameterError("test form support leaves the second factor")
    if eta.avoid_puncture and abs(eta.b2.center - f2.center) - eta.b2.radius < f2.inner_radius:
        raise ParameterError("test form declared away from the puncture meets it")


def pairing_magnitude(h: Form01, eta: TestForm) -> float:
    """``int |h1| |d eta/d w2bar| + |h2| |d eta/d w1bar| dV``: the scale of the pairing."""
    grid = h.grid
    w1, w2 = grid.coords()
    integrand = np.abs(h.components[0].values * eta.dbar2(w1, w2)) + np.abs(
        h.components[1].values * eta.dbar1(w1, w2)
    )
    return integrate_array(grid, integrand).real


def closedness_defect(h: Form01, tests: Sequence[TestForm]) -> tuple:
    """``(max |pairing|, max |pairing| / magnitude)`` over a battery of test forms."""
    absmax, relmax = 0.0, 0.0
    for t in tests:
        a = abs(weak_dbar_pairing(h, t))
        m = pairing_magnitude(h, t)
        absmax = max(absmax, a)
        if m > 0:
            relmax = max(relmax, a / m)
    return absmax, relmax


def weak_dbar_pairing(h: Form01, eta: TestForm) -> complex:
    """``int h1 d eta/d w2bar - h2 d eta/d w1bar dV`` on the base grid."""
    grid = h.grid
    if isinstance(grid, HartogsProductGrid):
        raise GridMismatchError("pair forms on the bidisc grid; use hartogs_pairing on H")
    if grid.n != 2:
        raise GridMismatchError("the pairing is defined on two-factor grids")
    _check_support(grid, eta)
    w1, w2 = grid.coords()
    integrand = h.components[0].values * eta.dbar2(w1, w2) - h.components[1].values * eta.dbar1(w1, w2)
    return integrate_array(grid, integrand)


def hartogs_pairing(f: Form01, eta: TestForm) -> complex:
    """Pairing on H against ``chi = (eta o phi) / z2``.

    With ``w1 = z1/z2`` the chain rule gives
    ``d chi/d z1bar = eta_{w1bar} / (z2bar z2)`` and
    ``d chi/d z2bar = (eta_{w2bar} - eta_{w1bar} w1bar / w2bar) / z2``.
    After the change of variables (Jacobian ``|w2|^2``) this is the bidisc
    pairing of ``psi^* f`` with ``eta``.
    """
    _require_h(f)
    hg = f.grid
    _check_support(hg.base, eta)
    w1, w2 = hg.w_coords()
    e1 = eta.dbar1(w1, w2)
    e2 = eta.dbar2(w1, w2)
    dchi_1 = e1 / (np.conj(w2) * w2)
    dchi_2 = (e2 - e1 * np.conj(w1) / np.conj(w2)) / w2
    integrand = f.components[0].values * dchi_2 - f.components[1].values * dchi_1
    return integrate_array(hg, integrand)


def residue_value(eta: TestForm, puncture: float = 0.0) -> complex:
    """Exact pairing of ``(1/w2) dw1bar`` with a bump centred on ``w2 = 0``.

    ``-pi (1 - eps^2/rho^2)^4 * int eta(w1, 0) dV`` for excision radius
    ``eps``; ``-pi int eta(w1, 0) dV`` in the limit.
    """
    if abs(eta.b2.center) > 0:
        raise ParameterError("the closed form needs the w2 bump centred at 0")
    rho = eta.b2.radius
    return -math.pi * (1.0 - min(puncture, rho) ** 2 / rho**2) ** 4 * eta.b1.integral()


# --------------------------------------------------------------------------
# Extension across the puncture
# --------------------------------------------------------------------------

@dataclass
class ExtensionReport:
    verdict: str
    k_ladder: list
    t1: list  # int h1 d(chi_k eta)/d w2bar
    t2: list  # int h2 d(chi_k eta)/d w1bar
    b1: list  # int |h1| |d chi_k/d w2bar| |eta|
    b2: list  # int |h2| chi_k |d eta/d w1bar| + int |h1| chi_k |d eta/d w2bar|
    slopes: dict
    limit_value: complex
    closedness: float | None = None
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "slopes": self.slopes,
            "limit_value": [self.limit_value.real, self.limit_value.imag],
            "k_ladder": list(self.k_ladder),
            "closedness": self.closedness,
            "notes": self.notes,
        }

    def rows(self):
        for k, a, b, c, d in zip(self.k_ladder, self.t1, self.t2, self.b1, self.b2):
            yield {"k": k, "re_t1": a.real, "im_t1": a.imag, "re_t2": b.real, "im_t2": b.imag,
                   "cutoff_term": c, "remainder_term": d}


def fit_slope(ks, values) -> float:
    """Least-squares slope of ``log values`` against ``log k`` over the top half."""
    ks = np.asarray(ks, dtype=float)
    v = np.asarray(values, dtype=float)
    h = len(ks) // 2
    ks, v = ks[h:], v[h:]
    ok = v > 0
    if ok.sum() < 2:
        return float("-inf")
    return float(np.polyfit(np.log(ks[ok]), np.log(v[ok]), 1)[0])


def extension_grid(n1=(16, 32), n2=(120, 128), puncture=2.0**-12) -> ProductGrid:
    """Base grid with geometric rings in ``w2`` (resolves cutoffs up to k = 2^10)."""
    return build_grid(
        [DiscFactor(0j, 1.0, 0.0), DiscFactor(0j, 1.0, puncture)],
        [n1, n2],
        ["uniform", "geometric"],
    )


def battery(count: int = 6, seed: int = 0, puncture_gap: float = 0.1) -> list:
    """Random product bumps on ``D x D*`` whose supports avoid ``w2 = 0``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        r1 = rng.uniform(0.25, 0.45)
        c1 = (1 - r1) * 0.9 * rng.uniform(0, 1) * np.exp(2j * np.pi * rng.uniform())
        r2 = rng.uniform(0.2, 0.35)
        m2 = rng.uniform(puncture_gap + r2, 1 - r2)
        c2 = m2 * np.exp(2j * np.pi * rng.uniform())
        out.append(bump_form(c1, r1, c2, r2, avoid_puncture=True))
    return out


def extension_test(h: Form01, p: float = 4.0, k_ladder: Sequence[int] = DEFAULT_K_LADDER,
                   eta: TestForm | None = None, check_closed: bool = True,
                   closed_tol: float = 2e-2, negligible: float = 1e-12,
                   decay_slope: float = -0.5) -> ExtensionReport:
    """Cutoff terms of the extension argument across ``w2 = 0``.

    For each ``k`` the pairing of ``h`` with ``chi_k eta`` is split into the
    two signed terms ``T1 = int h1 d(chi_k eta)/d w2bar`` and
    ``T2 = int h2 d(chi_k eta)/d w1bar``, and bounded by the magnitudes
    ``B1 = int |h1| |d chi_k / d w2bar| |eta|`` (the cutoff-gradient term) and
    ``B2`` (the terms carrying ``chi_k`` itself).  The form extends when both
    bounds tend to zero (fitted log-log slope below ``decay_slope``, or
    identically negligible); otherwise it is obstructed and ``T1 - T2`` at the
    largest ``k`` is reported as the limiting pairing.
    """
    grid = h.grid
    if grid.n != 2:
        raise GridMismatchError("extension_test needs a two-factor grid")
    eta = eta or bump_form()
    _check_support(grid, eta)
    notes = []
    closedness = None
    if check_closed:
        closedness, rel = closedness_defect(h, battery())
        if rel > closed_tol:
            raise NotClosedError(
                f"h is not d-bar-closed away from the puncture (relative pairing {rel:.3e})",
                value=rel,
            )
    w1, w2 = grid.coords()
    cut = CutoffFamily()
    h1 = np.broadcast_to(h.components[0].values, grid.shape)
    h2 = np.broadcast_to(h.components[1].values, grid.shape)
    e = eta.value(w1, w2)
    e1 = eta.dbar1(w1, w2)
    e2 = eta.dbar2(w1, w2)
    t1, t2, b1, b2 = [], [], [], []
    for k in k_ladder:
        ck = cut.chi(w2, k)
        dck = cut.dbar_chi(w2, k)
        d2 = ck * e2 + dck * e
        d1 = ck * e1
        t1.append(integrate_array(grid, h1 * d2))
        t2.append(integrate_array(grid, h2 * d1))
        b1.append(integrate_array(grid, np.abs(h1) * np.abs(dck) * np.abs(e)).real)
        b2.append(integrate_array(grid, np.abs(h2) * ck * np.abs(e1) + np.abs(h1) * ck * np.abs(e2)).real)
    slopes = {"cutoff_term": fit_slope(k_ladder, b1), "remainder_term": fit_slope(k_ladder, b2),
              "t1": fit_slope(k_ladder, np.abs(t1)), "t2": fit_slope(k_ladder, np.abs(t2))}

    def decays(vals, slope):
        return max(vals) <= negligible or slope <= decay_slope

    ok = decays(b1, slopes["cutoff_term"]) and decays(b2, slopes["remainder_term"])
    limit = complex(t1[-1] - t2[-1])
    verdict = EXTENDS if ok else OBSTRUCTED
    if verdict == EXTENDS:
        limit = 0j if max(abs(limit), 0) < negligible else limit
    return ExtensionReport(verdict, list(k_ladder), t1, t2, b1, b2, slopes, limit, closedness, notes)


@dataclass
class ClosednessReport:
    verdict: str
    battery_max: float
    hartogs_max: float
    extension: ExtensionReport | None
    battery_relative: float = 0.0

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "battery_max": self.battery_max,
            "hartogs_max": self.hartogs_max,
            "battery_relative": self.battery_relative,
            "extension": None if self.extension is None else self.extension.summary(),
        }


def pull_back_closedness(f: Form01, p: float = 4.0, tests: Sequence[TestForm] | None = None,
                         tol: float = 2e-2, k_ladder=DEFAULT_K_LADDER, eta=None) -> ClosednessReport:
    """Closedness of ``psi^* f`` on ``D x D*`` plus the extension test across ``w2 = 0``."""
    _require_h(f)
    tests = list(tests) if tests is not None else battery()
    h = pull_back_form(f)
    bmax, brel = closedness_defect(h, tests)
    hmax = max(abs(hartogs_pairing(f, t)) for t in tests)
    if brel > tol:
        return ClosednessReport(NOT_CLOSED, bmax, hmax, None, brel)
    ext = extension_test(h, p, k_ladder, eta=eta, check_closed=False)
    return ClosednessReport(ext.verdict, bmax, hmax, ext, brel)


# --------------------------------------------------------------------------
# Solving on H
# --------------------------------------------------------------------------

THRESHOLD_MESSAGE = (
    "p = {p:g} is below 4: the transported datum psi^*f may carry a singularity like "
    "(1/w2) dw1bar at w2 = 0 that lies in L^p(D^2, |w2|^2) for every p < 4 yet is not "
    "d-bar-closed across w2 = 0, so the bidisc solver would return a wrong solution"
)


def hartogs_derivative(hgrid: HartogsProductGrid):
    """Finite-difference ``d/dz1bar``, ``d/dz2bar`` on H through the base grid.

    ``du/dz1bar = u_{w1bar} / w2bar`` and ``du/dz2bar = u_{w2bar} - u_{w1bar} w1bar / w2bar``.
    """
    base = hgrid.base
    w1, w2 = base.coords()

    def deriv(u_values, grid, j):
        d1 = dbar_fd(u_values, base, 0)
        if j == 0:
            d1 /= np.conj(w2)
            return d1
        d2 = dbar_fd(u_values, base, 1)
        d2 -= d1 * np.conj(w1) / np.conj(w2)
        return d2

    return deriv


def hartogs_solve(f: Form01, p: float = 4.0, basis: HolomorphicBasis | None = None,
                  canonical: bool = True, assume_closed: bool = False,
                  tolerance: float = 1e-2) -> SolveResult:
    """Solve ``dbar u = f`` on H by transport to ``D x D*``.

    Pull back, solve there (iterated Cauchy transforms, then subtract the
    ``|w2|^2``-weighted Bergman projection when ``canonical``), push forward.
    Refuses ``p < 4``.
    """
    if p < 4:
        raise ThresholdError(THRESHOLD_MESSAGE.format(p=p))
    _require_h(f)
    hg = f.grid
    h = pull_back_form(f)
    u = _iterated_cauchy(h)
    raw = None
    extra = {}
    mu = jacobian_weight()
    if canonical:
        basis = basis or HolomorphicBasis()
        proj = _projector(hg.base, mu, basis.degree)
        raw = SampledField(hg, u.copy())
        proj.subtract_projection(u)
        extra["gram_condition"] = proj.cond
    uh = SampledField(hg, u)
    rmax, rl2, worst = residuals(u, f, derivative=hartogs_derivative(hg))
    if assume_closed and rmax > tolerance:
        raise NotClosedError(
            f"residual {rmax:.3e} on H exceeds {tolerance:.1e} (worst {worst})", node=worst, value=rmax
        )
    fn = form_lp_norm(f, None, p)
    un = weighted_lp_norm(uh, None, p)
    extra.update({"u_norm": un, "f_norm": fn, "p": p})
    if raw is not None:
        rn = weighted_lp_norm(raw, None, p)
        extra["raw_norm_ratio"] = rn / fn if fn > 0 else 0.0
    return SolveResult(uh, rmax, rl2, "HARTOGS_CANONICAL" if canonical else "HARTOGS_RAW",
                       norm_ratio=un / fn if fn > 0 else 0.0, extra=extra)


# Constructed data on H: potentials u0 and their d-bar (components in z).
CONSTRUCTED = {
    "constructed-1": (
        "u0 = |z2|^2, f = z2 dz2bar",
        lambda z1, z2: np.abs(z2) ** 2 + 0 * z1,
        (lambda z1, z2: 0 * z1 * z2, lambda z1, z2: z2 + 0 * z1),
    ),
    "constructed-2": (
        "u0 = conj(z1), f = dz1bar",
        lambda z1, z2: np.conj(z1) + 0 * z2,
        (lambda z1, z2: 1 + 0 * z1 * z2, lambda z1, z2: 0 * z1 * z2),
    ),
    "constructed-3": (
        "u0 = conj(z1) z2, f = z2 dz1bar",
        lambda z1, z2: np.conj(z1) * z2,
        (lambda z1, z2: z2 + 0 * z1, lambda z1, z2: 0 * z1 * z2),
    ),
}


def constructed_form(name: str, hgrid: HartogsProductGrid) -> Form01:
    from .grid import sample

    if name not in CONSTRUCTED:
        raise ParameterError(f"unknown constructed datum {name!r}; known: {sorted(CONSTRUCTED)}")
    _, _, comps = CONSTRUCTED[name]
    return Form01(hgrid, [sample(c, hgrid) for c in comps])
