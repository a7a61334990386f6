"""Polar tensor grids over products of discs and annuli.

Every planar factor is discretised by a cell-centred polar grid: rings are
midpoints of radial cells (arithmetic midpoints for uniform spacing, geometric
midpoints for geometric spacing) and angles are midpoints of equal angular
cells.  Area weights are exact cell areas, so the weights partition the factor
exactly and no node ever sits on the factor centre.

Values on a product grid are stored as a tensor with one axis per factor; the
axis of factor ``j`` enumerates its nodes ring-major (``index = i_r * n_theta +
i_theta``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GridMismatchError, InvalidDomainError, ParameterError, SamplingError

TWO_PI = 2.0 * np.pi

# Target size (complex entries) of the blocks used by chunked factor operators.
_BLOCK_ENTRIES = 1 << 21


def cut_power(w, a):
    """``w**a`` with ``arg(w)`` taken in ``[0, 2*pi)``.

    For points of the unit disc ``w = z - 1`` has negative real part, so the
    argument lies in ``(pi/2, 3*pi/2)``; the cut runs along ``z - 1 >= 0``.
    """
    w = np.asarray(w, dtype=complex)
    arg = np.mod(np.angle(w), TWO_PI)
    with np.errstate(divide="ignore"):
        logmod = np.log(np.abs(w))
    return np.exp(a * (logmod + 1j * arg))


@dataclass(frozen=True)
class DiscFactor:
    """Disc (``inner_radius == 0``) or annulus centred at ``center``."""

    center: complex = 0j
    radius: float = 1.0
    inner_radius: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise InvalidDomainError(f"radius must be positive, got {self.radius}")
        if not (0 <= self.inner_radius < self.radius):
            raise InvalidDomainError(
                f"need 0 <= inner_radius < radius, got inner_radius={self.inner_radius}, "
                f"radius={self.radius}"
            )
        object.__setattr__(self, "center", complex(self.center))

    @property
    def area(self) -> float:
        return math.pi * (self.radius**2 - self.inner_radius**2)

    @property
    def is_annulus(self) -> bool:
        return self.inner_radius > 0

    def contains(self, z) -> np.ndarray:
        d = np.abs(np.asarray(z) - self.center)
        return (d < self.radius) & (d > self.inner_radius)


def unit_disc() -> DiscFactor:
    return DiscFactor(0j, 1.0, 0.0)


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Midpoint polar grid on one factor.

    ``spacing`` is ``"uniform"`` (equal radial cells) or ``"geometric"``
    (equal ratios of consecutive ring edges; needs an annulus).
    """

    factor: DiscFactor
    n_r: int
    n_theta: int
    spacing: str = "uniform"
    r_edges: np.ndarray = field(init=False, repr=False)
    r: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.n_r) < 1 or int(self.n_theta) < 1:
            raise ParameterError(f"resolution must be positive, got ({self.n_r}, {self.n_theta})")
        a, b = self.factor.inner_radius, self.factor.radius
        if self.spacing == "uniform":
            edges = np.linspace(a, b, self.n_r + 1)
            r = 0.5 * (edges[:-1] + edges[1:])
        elif self.spacing == "geometric":
            if a <= 0:
                raise InvalidDomainError("geometric spacing needs an annulus (inner_radius > 0)")
            edges = a * (b / a) ** (np.arange(self.n_r + 1) / self.n_r)
            edges[-1] = b
            r = np.sqrt(edges[:-1] * edges[1:])
        else:
            raise ParameterError(f"unknown spacing {self.spacing!r}")
        dtheta = TWO_PI / self.n_theta
        object.__setattr__(self, "r_edges", edges)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", (np.arange(self.n_theta) + 0.5) * dtheta)

    @property
    def dtheta(self) -> float:
        return TWO_PI / self.n_theta

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @property
    def cell_area(self) -> np.ndarray:
        """Area of one cell on each ring."""
        e = self.r_edges
        return 0.5 * (e[1:] ** 2 - e[:-1] ** 2) * self.dtheta

    @property
    def weights(self) -> np.ndarray:
        return np.repeat(self.cell_area, self.n_theta)

    @property
    def nodes(self) -> np.ndarray:
        z = self.r[:, None] * np.exp(1j * self.theta[None, :])
        return (self.factor.center + z).ravel()

    def ring_values(self, values: np.ndarray) -> np.ndarray:
        """View flat per-node values (leading axis) as ``(n_r, n_theta, ...)``."""
        return values.reshape((self.n_r, self.n_theta) + values.shape[1:])

    def radial_interp_weights(self, radius: float, extrapolate: bool = True):
        """Two ring indices and weights for linear interpolation at ``radius``."""
        r = self.r
        if self.n_r == 1:
            return 0, 0, 1.0, 0.0
        if not extrapolate:
            radius = min(max(radius, r[0]), r[-1])
        i = int(np.clip(np.searchsorted(r, radius) - 1, 0, self.n_r - 2))
        t = (radius - r[i]) / (r[i + 1] - r[i])
        return i, i + 1, 1.0 - t, t

    def interpolation_stencil(self, points):
        """Flat node indices ``(m, 4)``, weights ``(m, 4)`` and an inside mask.

        Bilinear in ``(r, theta)``; radii are clamped to the ring range.
        """
        pts = np.atleast_1d(np.asarray(points, dtype=complex)) - self.factor.center
        rad = np.abs(pts)
        ang = np.mod(np.angle(pts), TWO_PI)
        inside = (rad < self.factor.radius) & (rad > self.factor.inner_radius)
        if self.n_r == 1:
            i0 = np.zeros(rad.shape, dtype=int)
            i1 = i0
            tr = np.zeros(rad.shape)
        else:
            rc = np.clip(rad, self.r[0], self.r[-1])
            i0 = np.clip(np.searchsorted(self.r, rc) - 1, 0, self.n_r - 2)
            i1 = i0 + 1
            tr = (rc - self.r[i0]) / (self.r[i1] - self.r[i0])
        u = ang / self.dtheta - 0.5
        j0 = np.floor(u).astype(int)
        tt = u - j0
        j0 = np.mod(j0, self.n_theta)
        j1 = np.mod(j0 + 1, self.n_theta)
        nt = self.n_theta
        idx = np.stack([i0 * nt + j0, i0 * nt + j1, i1 * nt + j0, i1 * nt + j1], axis=-1)
        w = np.stack([(1 - tr) * (1 - tt), (1 - tr) * tt, tr * (1 - tt), tr * tt], axis=-1)
        return idx, w, inside

    def interpolate(self, values: np.ndarray, points, outside: float = 0.0) -> np.ndarray:
        """Bilinear (r, theta) interpolation of flat node ``values`` at ``points``.

        Radii are clamped to the ring range inside the factor; points outside
        the factor get ``outside``.
        """
        shape = np.shape(points)
        idx, w, inside = self.interpolation_stencil(points)
        vals = np.asarray(values).reshape(-1)
        out = np.sum(w * vals[idx], axis=-1)
        return np.where(inside, out, outside).reshape(shape)


@dataclass(frozen=True, eq=False)
class ProductGrid:
    """Tensor product of polar factor grids.

    ``factor_weights`` overrides the per-factor quadrature weights (used by
    grids whose measure carries a product-form Jacobian).
    """

    factors: tuple
    factor_weights: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if len(self.factors) < 1:
            raise InvalidDomainError("a product grid needs at least one factor")
        if self.factor_weights is None:
            object.__setattr__(self, "factor_weights", tuple(g.weights for g in self.factors))
        else:
            fw = tuple(np.asarray(w, dtype=float) for w in self.factor_weights)
            if [w.size for w in fw] != [g.size for g in self.factors]:
                raise GridMismatchError("factor_weights sizes do not match the factors")
            object.__setattr__(self, "factor_weights", fw)

    @property
    def n(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> tuple:
        return tuple(g.size for g in self.factors)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def _broadcast(self, j: int, arr: np.ndarray) -> np.ndarray:
        shape = [1] * self.n
        shape[j] = arr.size
        return arr.reshape(shape)

    def coords(self) -> tuple:
        """Node coordinates, one array per factor, broadcastable to ``shape``."""
        return tuple(self._broadcast(j, g.nodes) for j, g in enumerate(self.factors))

    def weights(self) -> np.ndarray:
        """Full tensor of quadrature weights (materialised; small grids only)."""
        w = np.ones(self.shape)
        for j, fw in enumerate(self.factor_weights):
            w = w * self._broadcast(j, fw)
        return w

    def interior_slices(self) -> tuple:
        """Index mask selecting nodes away from the first and last ring of every factor."""
        masks = []
        for j, g in enumerate(self.factors):
            m = np.zeros((g.n_r, g.n_theta), dtype=bool)
            if g.n_r > 2:
                m[1:-1, :] = True
            masks.append(self._broadcast(j, m.ravel()))
        return tuple(masks)

    def interior_mask(self) -> np.ndarray:
        mask = np.ones([1] * self.n, dtype=bool)
        for m in self.interior_slices():
            mask = mask & m
        return mask

    def same_as(self, other) -> bool:
        return other is self


DomainSpec = Sequence[DiscFactor]


def build_grid(spec, resolution, spacing="uniform") -> ProductGrid:
    """Build a product grid over ``spec`` (a DiscFactor or a sequence of them).

    ``resolution`` is one ``(n_r, n_theta)`` pair used for every factor or a
    list of pairs; ``spacing`` likewise may be per factor.
    """
    factors = [spec] if isinstance(spec, DiscFactor) else list(spec)
    if not factors:
        raise InvalidDomainError("empty domain specification")
    for f in factors:
        if not isinstance(f, DiscFactor):
            raise InvalidDomainError(f"not a disc/annulus factor: {f!r}")
    res = list(resolution)
    if len(res) == 2 and all(np.isscalar(x) for x in res):
        res = [tuple(res)] * len(factors)
    if len(res) != len(factors):
        raise ParameterError(f"{len(res)} resolutions given for {len(factors)} factors")
    spacings = [spacing] * len(factors) if isinstance(spacing, str) else list(spacing)
    grids = [
        PolarGrid(f, int(nr), int(nt), sp) for f, (nr, nt), sp in zip(factors, res, spacings)
    ]
    return ProductGrid(tuple(grids))


class SampledField:
    """Complex values on every node of a grid.

    Values are kept read-only.  A broadcast view is accepted as storage, which
    keeps fields that depend on a single factor cheap on large grids.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        arr = np.asarray(values)
        if not np.iscomplexobj(arr) or arr.dtype != np.complex128:
            arr = arr.astype(np.complex128)
        if arr.shape != grid.shape:
            try:
                arr = np.broadcast_to(arr, grid.shape)
            except ValueError:
                raise GridMismatchError(
                    f"values of shape {arr.shape} do not fit grid shape {grid.shape}"
                ) from None
        bad = ~np.isfinite(arr)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise SamplingError(f"non-finite value at node {idx}")
        if arr.flags.writeable:
            arr.flags.writeable = False
        self.grid = grid
        self.values = arr

    @property
    def flat(self) -> np.ndarray:
        return np.ravel(self.values)

    def _check(self, other):
        if other.grid is not self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return SampledField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return SampledField(self.grid, self.values - other.values)

    def __mul__(self, c):
        return SampledField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return SampledField(self.grid, -self.values)

    def conj(self):
        return SampledField(self.grid, np.conj(self.values))


class Form01:
    """A (0,1)-form sum_j f_j dzbar_j: one SampledField per coordinate."""

    __slots__ = ("grid", "components")

    def __init__(self, grid, components):
        comps = tuple(components)
        if len(comps) != grid.n:
            raise GridMismatchError(f"{len(comps)} components for an {grid.n}-dimensional grid")
        out = []
        for c in comps:
            if isinstance(c, SampledField):
                if c.grid is not grid:
                    raise GridMismatchError("form components must share the form's grid")
                out.append(c)
            else:
                out.append(SampledField(grid, c))
        self.grid = grid
        self.components = tuple(out)

    def __getitem__(self, j):
        return self.components[j]

    def __len__(self):
        return len(self.components)

    def __add__(self, other):
        return Form01(self.grid, [a + b for a, b in zip(self.components, other.components)])

    def __mul__(self, c):
        return Form01(self.grid, [a * c for a in self.components])

    __rmul__ = __mul__


def sample(fn: Callable, grid) -> SampledField:
    """Evaluate ``fn(*coords)`` on the grid; ``fn`` must be vectorised."""
    with np.errstate(all="ignore"):
        vals = np.asarray(fn(*grid.coords()), dtype=complex)
    try:
        vals = np.broadcast_to(vals, grid.shape)
    except ValueError:
        raise GridMismatchError(f"function returned shape {vals.shape}, grid is {grid.shape}") from None
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        point = tuple(complex(np.broadcast_to(c, grid.shape)[idx]) for c in grid.coords())
        raise SamplingError(f"non-finite sample at node {idx} (point {point})")
    return SampledField(grid, vals)


def sample_form(fns: Sequence[Callable], grid) -> Form01:
    return Form01(grid, [sample(f, grid) for f in fns])


def _row_chunk(shape) -> int:
    rest = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    return max(1, _BLOCK_ENTRIES // max(rest, 1))


def integrate_array(grid, arr) -> complex:
    """Quadrature sum of ``arr`` (broadcastable to the grid) against the grid weights.

    Rows of the first axis are reduced with numpy's pairwise summation and the
    row totals are combined with ``math.fsum``; the order is fixed, so results
    are bit-reproducible.
    """
    arr = np.broadcast_to(np.asarray(arr), grid.shape)
    w0 = grid.factor_weights[0]
    if grid.n == 1:
        prod = arr * w0
        if np.iscomplexobj(prod):
            return complex(math.fsum(prod.real), math.fsum(prod.imag))
        return complex(math.fsum(prod), 0.0)
    rest = np.ones(grid.shape[1:])
    for k, fw in enumerate(grid.factor_weights[1:]):
        sh = [1] * (grid.n - 1)
        sh[k] = fw.size
        rest = rest * fw.reshape(sh)
    step = _row_chunk(grid.shape)
    partial = []
    for s in range(0, grid.shape[0], step):
        block = arr[s : s + step] * rest
        partial.append(block.reshape(block.shape[0], -1).sum(axis=1))
    rows = np.concatenate(partial) * w0
    if np.iscomplexobj(rows):
        return complex(math.fsum(rows.real), math.fsum(rows.imag))
    return complex(math.fsum(rows), 0.0)


def integrate(field: SampledField) -> complex:
    return integrate_array(field.grid, field.values)


def weight_values(weight, grid) -> np.ndarray | float:
    """Weight evaluated at the nodes (broadcastable array); ``None`` means 1."""
    if weight is None:
        return 1.0
    with np.errstate(all="ignore"):
        mu = np.asarray(weight(*grid.coords()), dtype=float)
    if not np.all(np.isfinite(mu)):
        raise SamplingError(f"weight {getattr(weight, 'name', weight)!r} is not finite at every node")
    if np.any(mu < 0):
        raise SamplingError(f"weight {getattr(weight, 'name', weight)!r} is negative somewhere")
    return mu


def _abs_power_integral(grid, values, mu, p) -> float:
    vals = np.broadcast_to(values, grid.shape)
    mu = np.broadcast_to(mu, grid.shape)
    if grid.n == 1:
        return integrate_array(grid, np.abs(vals) ** p * mu).real
    w0 = grid.factor_weights[0]
    rest = np.ones(grid.shape[1:])
    for k, fw in enumerate(grid.factor_weights[1:]):
        sh = [1] * (grid.n - 1)
        sh[k] = fw.size
        rest = rest * fw.reshape(sh)
    step = _row_chunk(grid.shape)
    partial = []
    for s in range(0, grid.shape[0], step):
        block = np.abs(vals[s : s + step]) ** p * mu[s : s + step] * rest
        partial.append(block.reshape(block.shape[0], -1).sum(axis=1))
    return math.fsum(np.concatenate(partial) * w0)


def weighted_lp_norm(field: SampledField, weight=None, p: float = 2.0) -> float:
    """``(sum |f|^p mu w)^(1/p)`` with the grid quadrature."""
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    mu = weight_values(weight, field.grid)
    return _abs_power_integral(field.grid, field.values, mu, p) ** (1.0 / p)


def form_lp_norm(form: Form01, weight=None, p: float = 2.0) -> float:
    """Norm of a (0,1)-form: ``(sum_j ||f_j||_p^p)^(1/p)``."""
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    mu = weight_values(weight, form.grid)
    total = math.fsum(_abs_power_integral(form.grid, c.values, mu, p) for c in form.components)
    return total ** (1.0 / p)


# --------------------------------------------------------------------------
# Factor-wise operators
# --------------------------------------------------------------------------

def iter_factor_blocks(grid, j: int):
    """Yield ``(pre_slice, post_slice)`` index pairs covering the grid in bounded blocks.

    Each pair addresses ``arr.reshape(pre, size_j, post)[pre_slice, :, post_slice]``.
    """
    g = grid.factors[j]
    shape = grid.shape
    pre = int(np.prod(shape[:j])) if j > 0 else 1
    post = int(np.prod(shape[j + 1 :])) if j + 1 < len(shape) else 1
    per = max(1, _BLOCK_ENTRIES // g.size)
    if post >= pre:
        for p0 in range(pre):
            for q0 in range(0, post, per):
                yield slice(p0, p0 + 1), slice(q0, min(q0 + per, post))
    else:
        for p0 in range(0, pre, max(1, per // post)):
            yield slice(p0, min(p0 + max(1, per // post), pre)), slice(0, post)


def as_factor_view(arr, grid, j: int) -> np.ndarray:
    """Reshape a grid tensor (or broadcastable array) to ``(pre, size_j, post)``."""
    shape = grid.shape
    pre = int(np.prod(shape[:j])) if j > 0 else 1
    post = int(np.prod(shape[j + 1 :])) if j + 1 < len(shape) else 1
    arr = np.broadcast_to(arr, shape)
    try:
        return arr.reshape(pre, shape[j], post)
    except ValueError:  # non-contiguous broadcast view
        return np.ascontiguousarray(arr).reshape(pre, shape[j], post)


def factor_block(view3, g, ps, qs) -> np.ndarray:
    """Extract a block as ``(n_r, n_theta, B)`` with a fresh contiguous buffer."""
    blk = view3[ps, :, qs]  # (P, size, Q)
    b = np.ascontiguousarray(np.moveaxis(blk, 1, 0)).reshape(g.n_r, g.n_theta, -1)
    return b


def put_factor_block(view3, ps, qs, res) -> None:
    P = view3[ps, :, qs].shape[0]
    size = view3.shape[1]
    view3[ps, :, qs] = np.moveaxis(res.reshape(size, P, -1), 0, 1)


def apply_along_factor(arr, grid, j: int, op: Callable, out=None) -> np.ndarray:
    """Apply ``op`` to every one-variable slice along factor ``j``.

    ``op`` maps a block of shape ``(n_r, n_theta, B)`` to a block of the same
    shape.  Blocks are processed in bounded chunks, so the only full-size
    allocation is ``out``; passing ``out=arr`` works in place.
    """
    g = grid.factors[j]
    a3 = as_factor_view(arr, grid, j)
    if out is None:
        out = np.empty(grid.shape, dtype=complex)
    o3 = out.reshape(a3.shape)
    for ps, qs in iter_factor_blocks(grid, j):
        put_factor_block(o3, ps, qs, op(factor_block(a3, g, ps, qs)))
    return out


def mode_operator(matrices: np.ndarray, shift: int = 0):
    """Block operator acting mode-by-mode in the angular Fourier variable.

    ``matrices[m]`` is an ``(n_r, n_r)`` matrix applied to angular mode ``m``
    (numpy FFT ordering).  The result of mode ``k`` is written to mode
    ``k + shift``; the angular cell-centre offset contributes the phase
    ``exp(i*shift*dtheta/2)``.  Outputs that would wrap around the mode range
    are dropped.
    """
    n_theta = matrices.shape[0]
    k = np.fft.fftfreq(n_theta, d=1.0 / n_theta).astype(int)
    dest_k = k + shift
    keep = (dest_k >= k.min()) & (dest_k <= k.max())
    dest = np.mod(dest_k, n_theta)
    phase = np.exp(1j * shift * np.pi / n_theta)

    real = not np.iscomplexobj(matrices)

    def op(block):
        F = np.fft.fft(block, axis=1)  # (n_r, n_theta, B)
        Ft = np.ascontiguousarray(np.moveaxis(F, 1, 0))  # (n_theta, n_r, B)
        if real:
            # a real matrix acts on real and imaginary parts independently
            R = np.matmul(matrices, Ft.view(float)).view(complex)
        else:
            R = np.matmul(matrices, Ft)
        out = np.zeros_like(Ft)
        out[dest[keep]] = R[keep] * phase
        return np.fft.ifft(np.moveaxis(out, 0, 1), axis=1)

    return op


def radial_derivative(block: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Second-order d/dr along axis 0 (centred inside, one-sided at the ends)."""
    if r.size < 3:
        if r.size == 1:
            return np.zeros_like(block)
        d = (block[1] - block[0]) / (r[1] - r[0])
        return np.broadcast_to(d, block.shape).copy()
    return np.gradient(block, r, axis=0, edge_order=2)


def angular_derivative(block: np.ndarray) -> np.ndarray:
    """Spectral d/dtheta along axis 1 (Nyquist mode dropped)."""
    n = block.shape[1]
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * block.ndim
    shape[1] = n
    return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(block, axis=1), axis=1)


def dbar_spectral(arr, grid, j: int, out=None) -> np.ndarray:
    """d/dzbar_j with second-order radial differences and spectral angular derivative."""
    g = grid.factors[j]
    ph = np.exp(1j * g.theta)[None, :, None]
    rr = g.r[:, None, None]

    def op(block):
        ur = radial_derivative(block, g.r)
        ut = angular_derivative(block)
        return 0.5 * ph * (ur + 1j * ut / rr)

    return apply_along_factor(arr, grid, j, op, out=out)


def fd_stencil_op(g):
    """Block operator for the centred finite-difference d/dzbar on factor ``g``."""
    ph = np.exp(1j * g.theta)[None, :, None]
    r = g.r
    dt = g.dtheta

    if g.n_r >= 3:
        hm = r[1:-1] - r[:-2]
        hp = r[2:] - r[1:-1]
        den = hm * hp * (hm + hp)
        cp = (hm**2 / den)[:, None, None]
        cm = (-(hp**2) / den)[:, None, None]
        c0 = ((hp**2 - hm**2) / den)[:, None, None]
        ang = (0.5j / (2 * dt * r[1:-1]))[:, None, None]
        ph_half = 0.5 * ph

    def op(block):
        res = np.full(block.shape, np.nan + 0j)
        if g.n_r < 3:
            return res
        mid = block[1:-1]
        d = cp * block[2:]
        d += cm * block[:-2]
        d += c0 * mid
        d *= 0.5
        dth = np.empty_like(mid)
        dth[:, 1:-1] = mid[:, 2:] - mid[:, :-2]
        dth[:, 0] = mid[:, 1] - mid[:, -1]
        dth[:, -1] = mid[:, 0] - mid[:, -2]
        d += ang * dth
        d *= ph_half * 2
        res[1:-1] = d
        return res

    return op


def dbar_fd(arr, grid, j: int, out=None) -> np.ndarray:
    """Centred finite-difference d/dzbar_j (residual stencil).

    Uses neighbouring rings in r and neighbouring angles in theta; values on
    the first and last ring of factor ``j`` are NaN.
    """
    return apply_along_factor(arr, grid, j, fd_stencil_op(grid.factors[j]), out=out)


# --------------------------------------------------------------------------
# CSV snapshots
# --------------------------------------------------------------------------

def field_csv_header(n: int) -> list:
    cols = []
    for j in range(1, n + 1):
        cols += [f"re_z{j}", f"im_z{j}"]
    return cols + ["weight", "re_val", "im_val"]


def write_field_csv(field: SampledField, path) -> None:
    """Write ``re_z1,im_z1,...,weight,re_val,im_val`` rows in grid node order."""
    grid = field.grid
    coords = [np.broadcast_to(c, grid.shape).ravel() for c in grid.coords()]
    w = grid.weights().ravel()
    vals = field.flat
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(field_csv_header(grid.n))
        for idx in range(vals.size):
            row = []
            for c in coords:
                row += [repr(float(c[idx].real)), repr(float(c[idx].imag))]
            row += [repr(float(w[idx])), repr(float(vals[idx].real)), repr(float(vals[idx].imag))]
            wr.writerow(row)


def read_field_csv(path) -> dict:
    """Read a snapshot back as arrays: ``coords`` (N, n), ``weight``, ``values``."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    n = (len(names) - 3) // 2
    coords = np.stack(
        [data[f"re_z{j}"] + 1j * data[f"im_z{j}"] for j in range(1, n + 1)], axis=1
    )
    return {
        "coords": coords,
        "weight": np.asarray(data["weight"]),
        "values": data["re_val"] + 1j * data["im_val"],
    }
