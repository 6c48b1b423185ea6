"""Grids, vector fields, positivity sets and the discrete energy.

Every field lives on a uniform Cartesian lattice covering a box. Nodal values
are stored component-first, ``values.shape == (k, n, ..., n)``. Cell-based
quantities (positivity fractions, Dirichlet densities) have shape
``(n - 1,) * d``.

The discrete Dirichlet energy uses a midpoint rule per cell on edge
differences: along each axis the cell's squared derivative is the mean of the
squared difference quotients over its ``2**(d-1)`` parallel edges. The rule is
exact for fields affine in each coordinate and its gradient is the standard
``2d + 1`` point Laplacian, which is what the relaxation and harmonic solvers
use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError

# inside corners always keep a sliver so that fraction == 0 <=> outside
_SLIVER = 1e-9


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def unit_sphere_area(d: int) -> float:
    """H^{d-1} measure of the unit sphere in R^d (2 for d = 1)."""
    return d * unit_ball_volume(d)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice with ``n`` nodes per axis over a box in R^d."""

    d: int
    n: int
    h: float
    origin: tuple[float, ...]

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"need at least 3 nodes per axis, got {self.n}")
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValueError(f"spacing must be positive, got {self.h}")
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        if len(origin) != self.d:
            raise ValueError("origin must have d coordinates")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "origin", origin)

    @classmethod
    def box(cls, d: int, n: int, lower: float = -1.0, upper: float = 1.0) -> Grid:
        """Grid on the cube ``[lower, upper]^d``."""
        return cls(d, n, (upper - lower) / (n - 1), (lower,) * d)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.n - 1,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + (self.n - 1) * self.h

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return ((self.n - 1) * self.h) ** self.d

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.h * np.arange(self.n)

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.d)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(d, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def cell_centers(self) -> np.ndarray:
        """Cell-center coordinates, shape ``(d, *cell_shape)``."""
        mids = [a[:-1] + 0.5 * self.h for a in self.axes()]
        return np.stack(np.meshgrid(*mids, indexing="ij"))

    def boundary_nodes(self) -> np.ndarray:
        """Boolean array marking nodes on the faces of the box."""
        b = np.zeros(self.shape, dtype=bool)
        for ax in range(self.d):
            idx = [slice(None)] * self.d
            idx[ax] = 0
            b[tuple(idx)] = True
            idx[ax] = -1
            b[tuple(idx)] = True
        return b

    def distance_to_boundary(self, x0) -> float:
        x0 = np.asarray(x0, dtype=float)
        return float(min(np.min(x0 - self.lower), np.min(self.upper - x0)))

    def ball_fits(self, x0, r: float) -> bool:
        """True when the closed ball stays strictly away from the box faces."""
        return r < self.distance_to_boundary(x0) - 1e-12 * self.h

    def require_ball(self, x0, r: float) -> None:
        if not self.ball_fits(x0, r):
            raise DomainError(
                f"ball of radius {r:.6g} at {tuple(np.round(np.asarray(x0, float), 12))} "
                "escapes the domain"
            )

    def node_index(self, x) -> tuple[int, ...]:
        """Index of the node nearest to ``x``."""
        i = np.rint((np.asarray(x, float) - self.lower) / self.h).astype(int)
        return tuple(int(v) for v in np.clip(i, 0, self.n - 1))

    def node_point(self, index) -> np.ndarray:
        return self.lower + self.h * np.asarray(index, dtype=float)


class VectorField:
    """``k`` scalar samples per grid node. Immutable once built."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == grid.d:
            arr = arr[None]
        if arr.ndim != grid.d + 1 or arr.shape[1:] != grid.shape or arr.shape[0] < 1:
            raise ValueError(f"values of shape {arr.shape} do not fit grid {grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("vector field contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("VectorField is immutable")

    def __repr__(self):
        return f"VectorField(k={self.k}, grid={self.grid})"

    @classmethod
    def from_function(cls, grid: Grid, fn) -> VectorField:
        """Evaluate ``fn(x)`` with ``x`` of shape ``(d, *shape)``."""
        return cls(grid, np.asarray(fn(grid.coords()), dtype=float))

    @classmethod
    def zeros(cls, grid: Grid, k: int = 1) -> VectorField:
        return cls(grid, np.zeros((k,) + grid.shape))

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def norm(self) -> np.ndarray:
        """Nodal |U|."""
        return np.sqrt(np.sum(self.values**2, axis=0))

    def with_values(self, values) -> VectorField:
        return VectorField(self.grid, values)

    def rotate(self, Q) -> VectorField:
        """Apply a k x k matrix to the component vector at every node."""
        return self.with_values(np.tensordot(np.asarray(Q, float), self.values, axes=1))

    def sample(self, points) -> np.ndarray:
        """Multilinear interpolation at ``points`` of shape ``(m, d)``; returns ``(m, k)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        interp = RegularGridInterpolator(
            tuple(self.grid.axes()), np.moveaxis(self.values, 0, -1),
            method="linear", bounds_error=False, fill_value=None,
        )
        return np.atleast_2d(interp(pts)).reshape(len(pts), self.k)


@dataclass(frozen=True, eq=False)
class PositivityMask:
    """Cells of ``{|U| > tau}`` with occupied volume fractions.

    ``crossings`` holds the points where |U| - tau changes sign along grid
    edges; they are the discrete free boundary used by the geometric
    diagnostics.
    """

    grid: Grid
    inside: np.ndarray
    fraction: np.ndarray
    tau: float
    crossings: np.ndarray

    def __post_init__(self):
        if self.inside.shape != self.grid.cell_shape or self.fraction.shape != self.grid.cell_shape:
            raise ValueError("mask arrays must have the grid's cell shape")
        if np.any(self.fraction < 0) or np.any(self.fraction > 1):
            raise ValueError("fractions must lie in [0, 1]")
        if np.any((self.fraction > 0) != self.inside):
            raise ValueError("fraction must vanish exactly on outside cells")

    @property
    def measure(self) -> float:
        return float(self.fraction.sum() * self.grid.cell_volume)

    def active_nodes(self) -> np.ndarray:
        """Interior nodes all of whose incident cells are inside."""
        g = self.grid
        pad = np.pad(self.inside, 1, constant_values=False)
        act = np.ones(g.shape, dtype=bool)
        for off in np.ndindex(*(2,) * g.d):
            act &= pad[tuple(slice(o, o + g.n) for o in off)]
        return act & ~g.boundary_nodes()

    @classmethod
    def full(cls, grid: Grid) -> PositivityMask:
        return cls(grid, np.ones(grid.cell_shape, bool), np.ones(grid.cell_shape),
                   0.0, np.zeros((0, grid.d)))

    @classmethod
    def empty(cls, grid: Grid) -> PositivityMask:
        return cls(grid, np.zeros(grid.cell_shape, bool), np.zeros(grid.cell_shape),
                   0.0, np.zeros((0, grid.d)))


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    measure: float
    lam: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.lam * self.measure

    def as_dict(self) -> dict:
        return {"dirichlet": self.dirichlet, "measure": self.measure,
                "lambda": self.lam, "total": self.total}


def default_tau(U: VectorField) -> float:
    """Relative positivity threshold that ignores floating-point dust."""
    m = float(np.max(U.norm())) if U.values.size else 0.0
    return max(1e-8 * m, 1e-12)


def gradient_sq(U: VectorField) -> np.ndarray:
    """Nodal sum over components of |grad u_i|^2.

    Central differences inside, one-sided first differences on box faces.
    """
    out = np.zeros(U.grid.shape)
    for comp in U.values:
        for ax in range(U.grid.d):
            out += np.gradient(comp, U.grid.h, axis=ax, edge_order=1) ** 2
    return out


def _take(a: np.ndarray, axis: int, start, stop) -> np.ndarray:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)]


def field_dirichlet_density(U: VectorField) -> np.ndarray:
    """Per-cell |grad U|^2 by the edge-average midpoint rule."""
    return _stacked_density(U.values, U.grid.h)


def _stacked_density(values: np.ndarray, h: float) -> np.ndarray:
    d = values.ndim - 1
    out = np.zeros(tuple(s - 1 for s in values.shape[1:]))
    for ax in range(d):
        sq = np.diff(values, axis=ax + 1) ** 2
        for other in range(d):
            if other != ax:
                sq = 0.5 * (_take(sq, other + 1, None, -1) + _take(sq, other + 1, 1, None))
        out += sq.sum(axis=0)
    return out / h**2


def scalar_dirichlet_density(values: np.ndarray, h: float) -> np.ndarray:
    return _stacked_density(np.asarray(values, float)[None], h)


def edge_crossings(phi: np.ndarray, axis: int) -> np.ndarray:
    """Sign-change location along every edge parallel to ``axis``.

    Returns ``t`` (in units of h, measured from the lower-index node) with NaN
    on edges without a crossing. ``phi > 0`` marks the inside. Because |U| is
    clamped at zero outside, plain linear interpolation drifts toward the
    outside node; the crossing is therefore also extrapolated from the slope
    on the inside and the estimate closer to the inside node is kept. Both
    agree for signed linear data and the extrapolation is exact for clamped
    linear data.
    """
    n = phi.shape[axis]
    lo = _take(phi, axis, None, -1)
    hi = _take(phi, axis, 1, None)
    t = np.full(lo.shape, np.nan)

    with np.errstate(divide="ignore", invalid="ignore"):
        up = (lo <= 0) & (hi > 0)
        t_up = lo / (lo - hi)
        ext = np.full(lo.shape, -np.inf)
        if n >= 3:
            beyond = _take(phi, axis, 2, None)
            mid = _take(hi, axis, None, n - 2)
            slope = beyond - mid
            cand = np.where((beyond > 0) & (slope > 0), 1.0 - mid / slope, -np.inf)
            ext[tuple(slice(0, n - 2) if a == axis else slice(None) for a in range(phi.ndim))] = cand
        t_up = np.clip(np.maximum(t_up, ext), 0.0, 1.0 - _SLIVER)
        t[up] = t_up[up]

        down = (lo > 0) & (hi <= 0)
        t_dn = lo / (lo - hi)
        ext = np.full(lo.shape, np.inf)
        if n >= 3:
            before = _take(phi, axis, None, -2)
            mid = _take(lo, axis, 1, None)
            slope = before - mid
            cand = np.where((before > 0) & (slope > 0), mid / slope, np.inf)
            ext[tuple(slice(1, None) if a == axis else slice(None) for a in range(phi.ndim))] = cand
        t_dn = np.clip(np.minimum(t_dn, ext), _SLIVER, 1.0)
        t[down] = t_dn[down]
    return t


def _crossing_points(grid: Grid, ts: list[np.ndarray]) -> np.ndarray:
    pts = []
    for ax, t in enumerate(ts):
        idx = np.argwhere(np.isfinite(t))
        if len(idx) == 0:
            continue
        p = grid.lower + grid.h * idx.astype(float)
        p[:, ax] += grid.h * t[tuple(idx.T)]
        pts.append(p)
    return np.concatenate(pts) if pts else np.zeros((0, grid.d))


def _polygon_area(pts) -> float:
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _fractions_2d(phi: np.ndarray, tx: np.ndarray, ty: np.ndarray) -> np.ndarray:
    c00 = phi[:-1, :-1]
    c10 = phi[1:, :-1]
    c11 = phi[1:, 1:]
    c01 = phi[:-1, 1:]
    pos = np.stack([c00 > 0, c10 > 0, c11 > 0, c01 > 0])
    npos = pos.sum(axis=0)
    frac = (npos == 4).astype(float)
    corners = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))
    for i, j in np.argwhere((npos > 0) & (npos < 4)):
        vals = (phi[i, j], phi[i + 1, j], phi[i + 1, j + 1], phi[i, j + 1])
        cross = (
            (tx[i, j], 0.0),
            (1.0, ty[i + 1, j]),
            (tx[i, j + 1], 1.0),
            (0.0, ty[i, j]),
        )
        inside = [v > 0 for v in vals]
        saddle = inside[0] == inside[2] and inside[1] == inside[3] and inside[0] != inside[1]
        if saddle and np.mean(vals) <= 0:
            area = 0.0
            for c in range(4):
                if inside[c]:
                    area += _polygon_area([cross[(c - 1) % 4], corners[c], cross[c]])
        else:
            poly = []
            for c in range(4):
                if inside[c]:
                    poly.append(corners[c])
                if inside[c] != inside[(c + 1) % 4]:
                    poly.append(cross[c])
            area = _polygon_area(poly)
        frac[i, j] = min(max(area, _SLIVER), 1.0)
    return frac


def level_set_fraction(grid: Grid, phi: np.ndarray):
    """Occupied fraction of ``{phi > 0}`` per cell plus the edge crossing points.

    Exact linear crossing in d = 1, marching-squares polygons in d = 2 and
    binary cells in d = 3.
    """
    ts = [edge_crossings(phi, ax) for ax in range(grid.d)]
    corners = [phi[tuple(slice(o, o + grid.n - 1) for o in off)]
               for off in np.ndindex(*(2,) * grid.d)]
    inside = np.max(corners, axis=0) > 0
    if grid.d == 1:
        lo, hi = phi[:-1], phi[1:]
        t = ts[0]
        frac = np.where((lo > 0) & (hi > 0), 1.0, 0.0)
        frac = np.where((lo <= 0) & (hi > 0), 1.0 - t, frac)
        frac = np.where((lo > 0) & (hi <= 0), t, frac)
        frac = np.nan_to_num(frac)
    elif grid.d == 2:
        frac = _fractions_2d(phi, ts[0], ts[1])
    else:
        frac = inside.astype(float)
    frac = np.where(inside, np.clip(frac, _SLIVER, 1.0), 0.0)
    return inside, frac, _crossing_points(grid, ts)


def free_boundary_nodes(U: VectorField, tau: float | None = None) -> np.ndarray:
    """Interior nodes with |U| <= tau that touch a node with |U| > tau."""
    g = U.grid
    if tau is None:
        tau = default_tau(U)
    pos = U.norm() > tau
    near = ndimage.binary_dilation(pos, structure=ndimage.generate_binary_structure(g.d, 1))
    return near & ~pos & ~g.boundary_nodes()


def positivity_mask(U: VectorField, tau: float | None = None) -> PositivityMask:
    """Cells of ``{|U| > tau}``; a cell is inside when some node exceeds tau."""
    if tau is None:
        tau = default_tau(U)
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    inside, frac, pts = level_set_fraction(U.grid, U.norm() - tau)
    return PositivityMask(U.grid, inside, frac, float(tau), pts)


def energy(U: VectorField, lam: float, tau: float | None = None,
           mask: PositivityMask | None = None) -> EnergyBreakdown:
    """Discrete ``int |grad U|^2 + lam |{|U| > 0}|`` over the grid box."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not np.all(np.isfinite(U.values)):
        raise ValueError("field contains non-finite values")
    if mask is None:
        mask = positivity_mask(U, tau)
    dirichlet = float(field_dirichlet_density(U).sum() * U.grid.cell_volume)
    return EnergyBreakdown(dirichlet, mask.measure, float(lam))


def rescale(U: VectorField, x0, r: float, n_out: int | None = None) -> VectorField:
    """``y -> U(x0 + r y) / r`` resampled on the box ``[-1, 1]^d``.

    The whole cube ``x0 + r [-1, 1]^d`` must lie inside the grid box.
    """
    g = U.grid
    x0 = np.asarray(x0, dtype=float)
    if not r > 0:
        raise ValueError("radius must be positive")
    if np.any(x0 - r < g.lower - 1e-12) or np.any(x0 + r > g.upper + 1e-12):
        raise DomainError(f"cube of half-width {r:.6g} around {tuple(x0)} escapes the domain")
    if n_out is None:
        n_out = int(np.clip(2 * round(r / g.h) + 1, 5, 2 * g.n + 1))
    out = Grid.box(g.d, n_out)
    y = out.coords().reshape(g.d, -1).T
    vals = U.sample(x0 + r * y).T.reshape((U.k,) + out.shape) / r
    return VectorField(out, vals)


def cell_ball_weights(grid: Grid, x0, r: float, sub: int | None = None):
    """Fraction of each cell covered by the ball, restricted to a window.

    Returns ``(window, weights)`` where ``window`` is a tuple of slices into
    cell-shaped arrays. Cells cut by the sphere are sub-sampled on a
    ``sub**d`` lattice; d = 1 is exact.
    """
    x0 = np.asarray(x0, dtype=float)
    h = grid.h
    lo = np.floor((x0 - r - grid.lower) / h).astype(int)
    hi = np.ceil((x0 + r - grid.lower) / h).astype(int)
    lo = np.clip(lo, 0, grid.n - 1)
    hi = np.clip(hi, 0, grid.n - 1)
    window = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))
    axes = [grid.lower[i] + h * (np.arange(window[i].start, window[i].stop) + 0.5)
            for i in range(grid.d)]
    if grid.d == 1:
        a = axes[0] - 0.5 * h
        overlap = np.minimum(a + h, x0[0] + r) - np.maximum(a, x0[0] - r)
        return window, np.clip(overlap / h, 0.0, 1.0)
    c = np.stack(np.meshgrid(*axes, indexing="ij"))
    dist = np.sqrt(np.sum((c - x0.reshape((-1,) + (1,) * grid.d)) ** 2, axis=0))
    half_diag = 0.5 * h * math.sqrt(grid.d)
    w = (dist <= r - half_diag).astype(float)
    cut = np.argwhere((dist > r - half_diag) & (dist < r + half_diag))
    if len(cut):
        if sub is None:
            sub = 8 if grid.d == 2 else 4
        offs = (np.arange(sub) + 0.5) / sub - 0.5
        lattice = np.stack(np.meshgrid(*([offs] * grid.d), indexing="ij")).reshape(grid.d, -1).T * h
        centers = c[(slice(None),) + tuple(cut.T)].T
        pts = centers[:, None, :] + lattice[None, :, :]
        inside = np.sum((pts - x0) ** 2, axis=-1) <= r * r
        w[tuple(cut.T)] = inside.mean(axis=1)
    return window, w


def node_ball(grid: Grid, x0, r: float):
    """``(window, bool)`` marking nodes within distance ``r`` of ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    lo = np.clip(np.ceil((x0 - r - grid.lower) / grid.h - 1e-9).astype(int), 0, grid.n - 1)
    hi = np.clip(np.floor((x0 + r - grid.lower) / grid.h + 1e-9).astype(int), 0, grid.n - 1)
    window = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))
    axes = [grid.lower[i] + grid.h * np.arange(window[i].start, window[i].stop)
            for i in range(grid.d)]
    c = np.stack(np.meshgrid(*axes, indexing="ij"))
    dist2 = np.sum((c - x0.reshape((-1,) + (1,) * grid.d)) ** 2, axis=0)
    return window, dist2 <= r * r * (1 + 1e-12)
