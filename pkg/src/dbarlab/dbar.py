"""Solving the d-bar equation on discs, annuli and their products.

The one-variable solver is the solid Cauchy transform

    u(z) = (1/pi) * integral f(zeta) / (z - zeta) dA(zeta),

evaluated mode-by-mode in the angle.  Writing ``f = sum_k f_k(s) e^{ik phi}``
about the factor centre, the transform maps mode ``k`` to mode ``k - 1``:

    k <= 0:  u_{k-1}(rho) =  2 * int_a^rho f_k(s) (s/rho)^(1-k) ds
    k >= 1:  u_{k-1}(rho) = -2 * int_rho^R f_k(s) (rho/s)^(k-1) ds

The radial integrals use product integration of the piecewise-linear
interpolant of ``f_k`` (linearly extrapolated to the factor edges), so the
transform is exact for ``f = 1`` and ``f = conj(z)``.  Angular modes come from
the FFT of the midpoint samples, which integrates trigonometric polynomials
exactly.

On products the solution is built variable by variable:
``u = C_1 f_1`` and then ``u += C_j (f_j - dbar_j u)`` for ``j = 2..n``.
The canonical solution subtracts the weighted Bergman projection onto
holomorphic monomials of bounded degree.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DegreeCapError, GridMismatchError, NotClosedError, ParameterError
from .grid import (
    Form01,
    SampledField,
    apply_along_factor,
    as_factor_view,
    factor_block,
    fd_stencil_op,
    iter_factor_blocks,
    dbar_spectral,
    form_lp_norm,
    integrate_array,
    mode_operator,
    weight_values,
    weighted_lp_norm,
)

ITERATED_CAUCHY = "ITERATED_CAUCHY"
CANONICAL = "CANONICAL"

_cauchy_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()
_bergman_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


# --------------------------------------------------------------------------
# Radial product integration
# --------------------------------------------------------------------------

def _power_moment(t0, t1, e):
    """Elementwise integral of ``t**e`` over ``[t0, t1]`` (``t > 0``)."""
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    if e == -1:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(t1) - np.log(t0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (t1 ** (e + 1) - t0 ** (e + 1)) / (e + 1)


def _segments(g):
    """Integration segments ``(lo, hi, node_a, node_b)`` covering ``[a, R]``.

    Each segment carries the two nodes whose linear interpolant is used on it;
    the first and last segments extrapolate the neighbouring interpolant.
    """
    r = g.r
    n = r.size
    a, b = g.factor.inner_radius, g.factor.radius
    if n == 1:
        return [(a, b, 0, 0)]
    segs = [(a, r[0], 0, 1)]
    segs += [(r[i], r[i + 1], i, i + 1) for i in range(n - 1)]
    segs.append((r[-1], b, n - 2, n - 1))
    return segs


def _linear_weights(rho, lo, hi, xa, xb, e):
    """Coefficients of ``(g_a, g_b)`` in ``int_lo^hi g(s) (s/rho)^e ds`` for linear ``g``.

    All arguments broadcast; ``xa == xb`` marks a constant interpolant.
    """
    t0, t1 = lo / rho, hi / rho
    m0 = _power_moment(t0, t1, e)
    m1 = _power_moment(t0, t1, e + 1)
    h = np.where(xb == xa, 1.0, xb - xa)
    slope = np.where(xb == xa, 0.0, rho * (rho * m1 - xa * m0) / h)
    return rho * m0 - slope, slope


def cauchy_radial_matrices(g) -> np.ndarray:
    """Per-mode radial matrices of the Cauchy transform on one factor grid.

    Entry ``[m, i, i']`` maps the ``i'``-th ring value of input mode ``k_m``
    (numpy FFT ordering) to the ``i``-th ring value of output mode ``k_m - 1``.
    """
    cached = _cauchy_cache.get(g)
    if cached is not None:
        return cached
    n_r, n_t = g.n_r, g.n_theta
    ks = np.fft.fftfreq(n_t, d=1.0 / n_t).astype(int)
    segs = np.array(_segments(g), dtype=float)
    lo, hi = segs[None, :, 0], segs[None, :, 1]
    ia, ib = segs[:, 2].astype(int), segs[:, 3].astype(int)
    xa, xb = g.r[ia][None, :], g.r[ib][None, :]
    rho = g.r[:, None]
    rows = np.repeat(np.arange(n_r), ia.size)
    cols_a = np.tile(ia, n_r)
    cols_b = np.tile(ib, n_r)
    inner_hi = np.minimum(hi, rho)
    inner_ok = lo < rho
    outer_lo = np.maximum(lo, rho)
    outer_ok = hi > rho
    M = np.zeros((n_t, n_r, n_r))
    with np.errstate(all="ignore"):
        for m, k in enumerate(ks):
            if k <= 0:
                ca, cb = _linear_weights(rho, lo, inner_hi, xa, xb, 1 - k)
                ok, sign = inner_ok, 2.0
            else:
                ca, cb = _linear_weights(rho, outer_lo, hi, xa, xb, -(k - 1))
                ok, sign = outer_ok, -2.0
            ca = np.where(ok, ca, 0.0).ravel()
            cb = np.where(ok, cb, 0.0).ravel()
            np.add.at(M[m], (rows, cols_a), sign * ca)
            np.add.at(M[m], (rows, cols_b), sign * cb)
    M.setflags(write=False)
    _cauchy_cache[g] = M
    return M


def _factor_cauchy_op(g):
    return mode_operator(cauchy_radial_matrices(g), shift=-1)


def cauchy_transform(f: SampledField, j: int = 0, out=None):
    """Solid Cauchy transform of ``f`` in variable ``j``.

    For a one-factor grid this is the planar transform; on a product grid the
    other variables are parameters.  Returns a SampledField, or fills ``out``
    (a writable array of the grid shape) and returns it.
    """
    grid = f.grid if isinstance(f, SampledField) else None
    if grid is None:
        raise GridMismatchError("cauchy_transform expects a SampledField")
    if not 0 <= j < grid.n:
        raise ParameterError(f"variable index {j} out of range for n = {grid.n}")
    res = apply_along_factor(f.values, grid, j, _factor_cauchy_op(grid.factors[j]), out=out)
    return res if out is not None else SampledField(grid, res)


def _cauchy_inplace(arr, grid, j):
    return apply_along_factor(arr, grid, j, _factor_cauchy_op(grid.factors[j]), out=arr)


def cauchy_transform_direct(f: SampledField) -> SampledField:
    """Reference midpoint sum ``(1/pi) sum f(zeta)/(z - zeta) w(zeta)`` (one factor).

    The self-cell term is dropped: by symmetry of the polar cell the principal
    value of the kernel over it is small (O(cell size)).  Quadratic cost; meant
    for tests on small grids.
    """
    grid = f.grid
    if grid.n != 1:
        raise ParameterError("the direct Cauchy sum is one-dimensional")
    z = grid.factors[0].nodes
    w = grid.factor_weights[0]
    d = z[:, None] - z[None, :]
    np.fill_diagonal(d, np.inf)
    vals = (1.0 / d) @ (f.flat * w) / math.pi
    return SampledField(grid, vals)


# --------------------------------------------------------------------------
# Product solve and residuals
# --------------------------------------------------------------------------

@dataclass
class SolveResult:
    u: SampledField
    residual_max: float
    residual_l2: float
    method: str
    norm_ratio: float | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {
            "method": self.method,
            "residual_max": self.residual_max,
            "residual_l2": self.residual_l2,
            "norm_ratio": self.norm_ratio,
        }
        out.update(self.extra)
        return out


def _split_vectors(grid, j, vecs):
    """Collapse per-factor vectors into ``(pre, mid, post)`` vectors around factor ``j``."""
    def kron_all(vs):
        out = np.ones(1, dtype=vecs[0].dtype)
        for v in vs:
            out = np.kron(out, v)
        return out

    return kron_all(vecs[:j]), vecs[j], kron_all(vecs[j + 1 :])


def _interior_vectors(grid):
    vecs = []
    for g in grid.factors:
        m = np.zeros((g.n_r, g.n_theta), dtype=bool)
        if g.n_r > 2:
            m[1:-1, :] = True
        vecs.append(m.ravel())
    return vecs


def residuals(u_values, form: Form01, derivative=None):
    """Interior residual of ``dbar u = f``.

    Returns ``(max, l2, worst)``: the largest nodewise modulus of
    ``dbar_j u - f_j`` over the interior sub-grid (one ring removed at both
    radial ends of every factor), the quadrature L2 norm of the residual
    relative to that of ``f`` on the same sub-grid (absolute when ``f``
    vanishes there), and ``(j, node_index)`` of the worst node.

    ``derivative(u, grid, j)`` may replace the default centred
    finite-difference stencil; it must return the full derivative tensor.
    The default path works block by block and never materialises it.
    """
    grid = form.grid
    masks = _interior_vectors(grid)
    worst, worst_at = 0.0, None
    res_sq = 0.0
    f_sq = 0.0
    for j in range(grid.n):
        g = grid.factors[j]
        m_pre, m_mid, m_post = _split_vectors(grid, j, masks)
        w_pre, w_mid, w_post = _split_vectors(grid, j, list(grid.factor_weights))
        u3 = as_factor_view(u_values, grid, j)
        f3 = as_factor_view(form.components[j].values, grid, j)
        d3 = None if derivative is None else as_factor_view(derivative(u_values, grid, j), grid, j)
        op = fd_stencil_op(g)
        for ps, qs in iter_factor_blocks(grid, j):
            ub = u3[ps, :, qs]
            if d3 is None:
                blk = factor_block(u3, g, ps, qs)
                d = np.moveaxis(op(blk).reshape(g.size, ub.shape[0], ub.shape[2]), 0, 1)
            else:
                d = d3[ps, :, qs]
            fb = f3[ps, :, qs]
            mask = m_pre[ps][:, None, None] & m_mid[None, :, None] & m_post[qs][None, None, :]
            wts = w_pre[ps][:, None, None] * w_mid[None, :, None] * w_post[qs][None, None, :]
            a = np.where(mask, np.abs(d - fb), 0.0)
            idx = int(np.argmax(a))
            if a.flat[idx] > worst:
                worst = float(a.flat[idx])
                p_i, m_i, q_i = np.unravel_index(idx, a.shape)
                flat = ((ps.start + p_i) * g.size + m_i) * u3.shape[2] + (qs.start + q_i)
                worst_at = (j, tuple(int(i) for i in np.unravel_index(flat, grid.shape)))
            res_sq += math.fsum(np.sum(a**2 * wts, axis=(1, 2)))
            f_sq += math.fsum(np.sum(np.where(mask, np.abs(fb) ** 2, 0.0) * wts, axis=(1, 2)))
    l2 = math.sqrt(res_sq / f_sq) if f_sq > 0 else math.sqrt(res_sq)
    return worst, l2, worst_at


def _check_form(f):
    if not isinstance(f, Form01):
        raise GridMismatchError("expected a Form01")
    for fac in f.grid.factors:
        if fac.n_r < 3:
            raise ParameterError("solving needs at least 3 rings per factor")


def _iterated_cauchy(f: Form01) -> np.ndarray:
    _check_form(f)
    grid = f.grid
    u = np.array(np.broadcast_to(f.components[0].values, grid.shape), dtype=complex)
    _cauchy_inplace(u, grid, 0)
    if grid.n > 1:
        tmp = np.empty(grid.shape, dtype=complex)
        for j in range(1, grid.n):
            dbar_spectral(u, grid, j, out=tmp)
            np.subtract(f.components[j].values, tmp, out=tmp)
            _cauchy_inplace(tmp, grid, j)
            u += tmp
        del tmp
    return u


def product_solve(f: Form01, assume_closed: bool = False, tolerance: float = 1e-2,
                  compute_residual: bool = True) -> SolveResult:
    """Some solution of ``dbar u = f`` by iterated one-variable Cauchy transforms.

    With ``assume_closed`` set, a residual above ``tolerance`` raises
    NotClosedError carrying the worst node.
    """
    u = _iterated_cauchy(f)
    grid = f.grid
    rmax, rl2 = float("nan"), float("nan")
    if compute_residual:
        rmax, rl2, worst = residuals(u, f)
        if assume_closed and rmax > tolerance:
            raise NotClosedError(
                f"residual {rmax:.3e} exceeds tolerance {tolerance:.1e}; the datum "
                f"does not look d-bar-closed (worst component/node {worst})",
                node=worst,
                value=rmax,
            )
    return SolveResult(SampledField(grid, u), rmax, rl2, ITERATED_CAUCHY)


# --------------------------------------------------------------------------
# Bergman projection onto holomorphic monomials
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HolomorphicBasis:
    """Monomials ``prod_j (w_j - c_j)^{k_j}`` with ``0 <= k_j <= degree``."""

    degree: int = 16

    def __post_init__(self):
        if int(self.degree) < 0:
            raise ParameterError(f"basis degree must be >= 0, got {self.degree}")


def _monomials(g, d):
    """``(size, d+1)`` matrix of ``(w - c)^k`` at the factor nodes."""
    z = g.nodes - g.factor.center
    return z[:, None] ** np.arange(d + 1)[None, :]


def _weight_key(weight):
    if weight is None:
        return None
    return getattr(weight, "name", None) or id(weight)


def _separable_profile(mu, grid):
    """Split a broadcast weight array into per-factor vectors when possible."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 0:
        return [np.full(s, float(mu)) for s in grid.shape]
    full_axes = [j for j in range(grid.n) if mu.shape[j] != 1]
    if len(full_axes) > 1:
        return None
    out = [np.ones(s) for s in grid.shape]
    if full_axes:
        j = full_axes[0]
        out[j] = mu.reshape(-1)
    else:
        out[0] = np.full(grid.shape[0], float(mu.reshape(-1)[0]))
    return out


class _Projector:
    def __init__(self, grid, weight, d):
        for g in grid.factors:
            if d > g.n_theta / 4:
                raise ParameterError(
                    f"basis degree {d} exceeds n_theta/4 = {g.n_theta / 4:g} on a factor"
                )
        self.grid = grid
        self.d = d
        self.mons = [_monomials(g, d) for g in grid.factors]
        mu = weight_values(weight, grid)
        prof = _separable_profile(mu, grid)
        self.separable = prof is not None
        if self.separable:
            self.wvec = [fw * p for fw, p in zip(grid.factor_weights, prof)]
            grams = [(m.conj().T * w) @ m for m, w in zip(self.mons, self.wvec)]
            gram = grams[0]
            for gj in grams[1:]:
                gram = np.kron(gram, gj)
        else:
            if grid.n != 2:
                raise ParameterError("non-product weights are supported for n <= 2 only")
            W = np.broadcast_to(mu, grid.shape) * grid.weights()
            self.W = W
            A, B = self.mons
            k1 = A.shape[1]
            P1 = (A.conj()[:, :, None] * A[:, None, :]).reshape(A.shape[0], -1)
            P2 = (B.conj()[:, :, None] * B[:, None, :]).reshape(B.shape[0], -1)
            G = (P1.T @ W @ P2).reshape(k1, k1, k1, k1)
            gram = G.transpose(0, 2, 1, 3).reshape(k1 * k1, k1 * k1)
        gram = 0.5 * (gram + gram.conj().T)
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            raise DegreeCapError(
                f"monomial Gram matrix condition number {cond:.3e} exceeds 1e12 at degree {d}"
            )
        self.cond = float(cond)
        self.chol = linalg.cho_factor(gram, lower=True)

    def moments(self, values):
        """Inner products ``<u, m_k>`` for every basis monomial (flattened)."""
        grid = self.grid
        if self.separable:
            t = np.broadcast_to(values, grid.shape)
            for j in range(grid.n):
                mw = self.mons[j].conj() * self.wvec[j][:, None]
                t = np.tensordot(t, mw, axes=([0], [0]))  # consumes leading axis, appends k_j
            return t.reshape(-1)
        A, B = self.mons
        t = np.broadcast_to(values, grid.shape) * self.W
        return (A.conj().T @ t @ B.conj()).reshape(-1)

    def coefficients(self, values):
        return linalg.cho_solve(self.chol, self.moments(values))

    def subtract_projection(self, arr):
        """In place ``arr -= P(arr)``, evaluated in row blocks."""
        coeffs = self.coefficients(arr)
        step = max(1, (1 << 21) // max(1, arr[0].size))
        for s0 in range(0, arr.shape[0], step):
            arr[s0 : s0 + step] -= self.evaluate(coeffs, rows=slice(s0, s0 + step))
        return coeffs

    def evaluate(self, coeffs, rows=None):
        grid = self.grid
        k = self.d + 1
        c = coeffs.reshape((k,) * grid.n)
        t = c
        for j in range(grid.n):
            mj = self.mons[j] if (j > 0 or rows is None) else self.mons[0][rows]
            t = np.tensordot(t, mj, axes=([0], [1]))  # consumes leading k axis
        return t


def _projector(grid, weight, d):
    per = _bergman_cache.setdefault(grid, {})
    key = (_weight_key(weight), int(d))
    if key not in per:
        per[key] = _Projector(grid, weight, int(d))
    return per[key]


def bergman_project(u: SampledField, basis: HolomorphicBasis | None = None, weight=None) -> SampledField:
    """Weighted least-squares projection of ``u`` onto the monomial space."""
    basis = basis or HolomorphicBasis()
    proj = _projector(u.grid, weight, basis.degree)
    return SampledField(u.grid, proj.evaluate(proj.coefficients(u.values)))


def projection_coefficients(u: SampledField, basis: HolomorphicBasis | None = None, weight=None):
    basis = basis or HolomorphicBasis()
    proj = _projector(u.grid, weight, basis.degree)
    return proj.coefficients(u.values)


def orthogonality_defect(u: SampledField, basis: HolomorphicBasis | None = None, weight=None) -> float:
    """Largest ``|<u, m>| / (||u|| ||m||)`` over basis monomials (weighted L2)."""
    basis = basis or HolomorphicBasis()
    proj = _projector(u.grid, weight, basis.degree)
    mom = np.abs(proj.moments(u.values))
    mu = weight_values(weight, u.grid)
    grid = u.grid
    unorm = math.sqrt(max(integrate_array(grid, np.abs(np.broadcast_to(u.values, grid.shape)) ** 2 * mu).real, 0.0))
    if unorm == 0:
        return 0.0
    mnorm = np.sqrt(_gram_diag(proj))
    return float(np.max(mom / (unorm * mnorm)))


def _gram_diag(proj):
    L = np.tril(proj.chol[0])
    return np.sum(np.abs(L) ** 2, axis=1)


def canonical_solve(f: Form01, weight=None, basis: HolomorphicBasis | None = None, p: float = 2.0,
                    assume_closed: bool = False, tolerance: float = 1e-2) -> SolveResult:
    """``u_c = u - P_mu(u)`` for the iterated-Cauchy solution ``u``.

    The subtracted projection is an exact holomorphic polynomial, so the
    finite-difference residual of ``u_c`` equals that of ``u`` up to the
    stencil's truncation error on the polynomial; it is recomputed here.
    """
    basis = basis or HolomorphicBasis()
    grid = f.grid
    uc = _iterated_cauchy(f)
    proj = _projector(grid, weight, basis.degree)
    proj.subtract_projection(uc)
    rmax, rl2, worst = residuals(uc, f)
    if assume_closed and rmax > tolerance:
        raise NotClosedError(
            f"residual {rmax:.3e} exceeds tolerance {tolerance:.1e}; the datum "
            f"does not look d-bar-closed (worst component/node {worst})",
            node=worst,
            value=rmax,
        )
    uc_field = SampledField(grid, uc)
    fnorm = form_lp_norm(f, weight, p)
    unorm = weighted_lp_norm(uc_field, weight, p)
    ratio = unorm / fnorm if fnorm > 0 else 0.0
    return SolveResult(
        uc_field, rmax, rl2, CANONICAL, norm_ratio=ratio,
        extra={"u_norm": unorm, "f_norm": fnorm, "p": p, "gram_condition": proj.cond},
    )


# --------------------------------------------------------------------------
# Closed data with known potentials
# --------------------------------------------------------------------------

# name -> (potential u0, (d u0/d w1bar, d u0/d w2bar)); every datum is d-bar of u0.
CLOSED_FAMILY = {
    "conj-product": (
        lambda a, b: np.conj(a) * np.conj(b),
        (lambda a, b: np.conj(b) + 0 * a, lambda a, b: np.conj(a) + 0 * b),
    ),
    "modulus-w1": (
        lambda a, b: np.abs(a) ** 2 * b,
        (lambda a, b: a * b, lambda a, b: 0 * a * b),
    ),
    "conj-powers": (
        lambda a, b: np.conj(a) ** 2 + np.conj(b) ** 3,
        (lambda a, b: 2 * np.conj(a) + 0 * b, lambda a, b: 3 * np.conj(b) ** 2 + 0 * a),
    ),
    "exp-conj": (
        lambda a, b: np.exp(np.conj(a)) * np.conj(b),
        (lambda a, b: np.exp(np.conj(a)) * np.conj(b), lambda a, b: np.exp(np.conj(a)) + 0 * b),
    ),
    "modulus-both": (
        lambda a, b: np.abs(a) ** 2 * np.abs(b) ** 2,
        (lambda a, b: a * np.abs(b) ** 2, lambda a, b: np.abs(a) ** 2 * b),
    ),
}


def closed_datum(name: str, grid) -> Form01:
    """Sample a datum of ``CLOSED_FAMILY`` on a two-factor grid."""
    from .grid import sample

    if name not in CLOSED_FAMILY:
        raise ParameterError(f"unknown datum {name!r}; known: {sorted(CLOSED_FAMILY)}")
    if grid.n != 2:
        raise GridMismatchError("closed data live on a two-factor grid")
    _, comps = CLOSED_FAMILY[name]
    return Form01(grid, [sample(c, grid) for c in comps])
