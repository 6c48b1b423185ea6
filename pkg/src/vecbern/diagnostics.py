"""Monotone quantities, densities and boundary geometry of discrete fields.

Ball integrals use cell weights equal to the covered fraction of each cell
and are rescaled by ``omega_d r^d / sum(weights) h^d`` so that the quadrature
ball has the exact volume. This keeps 1-homogeneous fields scale-free and
makes ``W = W0 + lam * omega_d * density`` hold to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoBoundaryError, NotFlatError, ResolutionError
from .fields import (
    Grid,
    PositivityMask,
    VectorField,
    cell_ball_weights,
    default_tau,
    field_dirichlet_density,
    level_set_fraction,
    node_ball,
    positivity_mask,
    scalar_dirichlet_density,
    unit_ball_volume,
    unit_sphere_area,
)

MIN_RADIUS_CELLS = 4


@dataclass(frozen=True)
class WeissSample:
    r: float
    W: float
    W0: float
    density_term: float
    density: float

    def as_dict(self) -> dict:
        return {"r": self.r, "W": self.W, "W0": self.W0,
                "density_term": self.density_term, "density": self.density}


@dataclass(frozen=True)
class FlatnessSample:
    r: float
    delta: float
    normal: np.ndarray

    def as_dict(self) -> dict:
        return {"r": self.r, "delta": self.delta, "normal": [float(v) for v in self.normal]}


@dataclass(frozen=True)
class CoareaEstimate:
    eps: float
    perimeter: float
    constant: float
    band_measure: float

    def as_dict(self) -> dict:
        return {"eps": self.eps, "perimeter": self.perimeter, "constant": self.constant,
                "band_measure": self.band_measure}


@dataclass(frozen=True)
class SlopeReading:
    slope: float
    normal: np.ndarray
    base_point: np.ndarray
    flat_radius: float
    satisfied: bool | None

    def as_dict(self) -> dict:
        return {"slope": self.slope, "normal": [float(v) for v in self.normal],
                "base_point": [float(v) for v in self.base_point],
                "flat_radius": self.flat_radius, "satisfied": self.satisfied}


@dataclass(frozen=True)
class ConstantSign:
    index: int
    sign: int
    c_sign: float


def _check_ball(grid: Grid, x0, r: float, min_cells: float = MIN_RADIUS_CELLS) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (grid.d,):
        raise ValueError(f"point must have {grid.d} coordinates")
    if r < min_cells * grid.h * (1 - 1e-9):
        raise ResolutionError(f"radius {r:.6g} is below {min_cells}h = {min_cells * grid.h:.6g}")
    grid.require_ball(x0, r)
    return x0


def _ball_quadrature(grid: Grid, x0, r: float):
    """Window, cell weights and the factor turning weighted sums into integrals."""
    window, w = cell_ball_weights(grid, x0, r)
    total = w.sum() * grid.cell_volume
    return window, w, unit_ball_volume(grid.d) * r**grid.d / total


def sphere_points(d: int, r: float, m: int | None = None) -> np.ndarray:
    """Equal-weight sample of the sphere of radius r (64 d^2 points by default)."""
    if m is None:
        m = 64 * d * d
    if d == 1:
        return np.array([[-r], [r]])
    if d == 2:
        th = 2 * np.pi * np.arange(m) / m
        return r * np.stack([np.cos(th), np.sin(th)], axis=1)
    i = np.arange(m) + 0.5
    z = 1 - 2 * i / m
    phi = np.pi * (1 + math.sqrt(5)) * i
    s = np.sqrt(1 - z * z)
    return r * np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def sphere_integral_sq(U: VectorField, x0, r: float) -> float:
    """``int_{dB_r(x0)} |U|^2`` by the equal-weight sphere rule."""
    d = U.grid.d
    pts = np.asarray(x0, float) + sphere_points(d, r)
    vals = U.sample(pts)
    return float(np.mean(np.sum(vals**2, axis=1)) * unit_sphere_area(d) * r ** (d - 1))


def weiss(U: VectorField, lam: float, x0, r: float, mask: PositivityMask | None = None) -> WeissSample:
    """Boundary-adjusted energy of U on ``B_r(x0)``.

    ``W0 = r^-d int_{B_r} |grad U|^2 - r^-(d+1) int_{dB_r} |U|^2`` and
    ``W = W0 + lam * |Omega cap B_r| / r^d``.
    """
    g = U.grid
    if not lam > 0:
        raise ValueError("lambda must be positive")
    x0 = _check_ball(g, x0, r)
    if mask is None:
        mask = positivity_mask(U)
    window, w, scale = _ball_quadrature(g, x0, r)
    dirichlet = float(np.sum(w * field_dirichlet_density(U)[window]) * g.cell_volume * scale)
    dens = float(np.sum(w * mask.fraction[window]) / np.sum(w))
    W0 = dirichlet / r**g.d - sphere_integral_sq(U, x0, r) / r ** (g.d + 1)
    density_term = lam * unit_ball_volume(g.d) * dens
    return WeissSample(float(r), W0 + density_term, W0, density_term, dens)


def weiss_profile(U: VectorField, lam: float, x0, radii, mask: PositivityMask | None = None):
    """Weiss samples at ascending radii and the largest decrease between neighbours."""
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly ascending")
    if mask is None:
        mask = positivity_mask(U)
    samples = [weiss(U, lam, x0, r, mask) for r in radii]
    drops = [max(a.W - b.W, 0.0) for a, b in zip(samples, samples[1:])]
    return samples, (max(drops) if drops else 0.0)


def density(mask: PositivityMask, x0, r: float) -> float:
    """``|Omega cap B_r(x0)| / |B_r|`` from the cell fractions."""
    g = mask.grid
    x0 = np.asarray(x0, dtype=float)
    if not r > 0:
        raise ValueError("radius must be positive")
    g.require_ball(x0, r)
    window, w = cell_ball_weights(g, x0, r)
    return float(np.clip(np.sum(w * mask.fraction[window]) / np.sum(w), 0.0, 1.0))


def acf(v, x0, r: float, grid: Grid | None = None) -> float:
    """Product of the weighted Dirichlet integrals of ``v+`` and ``v-`` over ``B_r(x0)``.

    Each factor is ``r^-2 int_{B_r} |grad v^pm|^2 |x - x0|^(2-d)``. Cells touching
    ``x0`` use the mean of ``|x|^(2-d)`` over a ball of one cell volume.
    ``v`` is a one-component VectorField or a nodal array with ``grid``.
    """
    if isinstance(v, VectorField):
        if v.k != 1:
            raise ValueError("acf takes a scalar field")
        grid, vals = v.grid, v.values[0]
    else:
        if grid is None:
            raise ValueError("a grid is needed for raw arrays")
        vals = np.asarray(v, dtype=float)
    d, h = grid.d, grid.h
    x0 = _check_ball(grid, x0, r, min_cells=2)
    window, w, scale = _ball_quadrature(grid, x0, r)
    centers = grid.cell_centers()[(slice(None),) + window]
    off = centers - x0.reshape((-1,) + (1,) * d)
    dist = np.sqrt(np.sum(off**2, axis=0))
    weight = dist ** (2 - d) if d != 2 else np.ones_like(dist)
    rho = (h**d / unit_ball_volume(d)) ** (1 / d)
    touching = np.all(np.abs(off) <= 0.5 * h * (1 + 1e-9), axis=0)
    weight = np.where(touching, 0.5 * d * rho ** (2 - d), weight)
    out = 1.0
    for part in (np.maximum(vals, 0.0), np.maximum(-vals, 0.0)):
        dens = scalar_dirichlet_density(part, h)[window]
        out *= float(np.sum(w * weight * dens) * grid.cell_volume * scale) / r**2
    return out


def coarea_perimeter(U: VectorField, lam: float, eps: float, tau: float | None = None) -> CoareaEstimate:
    """Mean level-set size of |U| over the band ``{tau < |U| <= eps}``.

    ``perimeter = eps^-1 int_band |grad |U||`` is the coarea average of
    ``H^{d-1}({|U| = t})`` for ``t`` in the band and bounds its minimum from
    above. ``constant = eps^-1 (int_band |grad U|^2 + lam |band|)``.
    """
    g = U.grid
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if tau is None:
        tau = default_tau(U)
    if not eps > tau:
        raise ValueError(f"band width {eps:g} must exceed the threshold {tau:g}")
    phi = U.norm()
    _, f_lo, _ = level_set_fraction(g, phi - tau)
    _, f_hi, _ = level_set_fraction(g, phi - eps)
    band = np.clip(f_lo - f_hi, 0.0, 1.0)
    slope = np.sqrt(scalar_dirichlet_density(phi, g.h))
    grad_sq = field_dirichlet_density(U)
    vol = g.cell_volume
    band_measure = float(band.sum() * vol)
    perimeter = float(np.sum(band * slope) * vol / eps)
    constant = float((np.sum(band * grad_sq) * vol + lam * band_measure) / eps)
    return CoareaEstimate(float(eps), perimeter, constant, band_measure)


def _plane_samples(x0: np.ndarray, normal: np.ndarray, r: float, step: float) -> np.ndarray:
    d = len(x0)
    if d == 1:
        return x0[None, :]
    _, _, vt = np.linalg.svd(normal[None, :])
    basis = vt[1:]
    m = int(math.ceil(r / step))
    ticks = np.arange(-m, m + 1) * step
    coef = np.stack(np.meshgrid(*([ticks] * (d - 1)), indexing="ij")).reshape(d - 1, -1).T
    coef = coef[np.sum(coef**2, axis=1) <= r * r]
    return x0 + coef @ basis


def flatness(mask: PositivityMask, x0, r: float) -> FlatnessSample:
    """Symmetric Hausdorff deviation of the boundary from a plane through x0, over r.

    The plane is the total-least-squares fit through x0 of the boundary
    crossing points inside ``B_r(x0)``.
    """
    g = mask.grid
    x0 = np.asarray(x0, dtype=float)
    g.require_ball(x0, r)
    pts = mask.crossings
    dist = np.sqrt(np.sum((pts - x0) ** 2, axis=1)) if len(pts) else np.zeros(0)
    local = pts[dist <= r]
    if len(local) == 0:
        raise NoBoundaryError(f"no free boundary within {r:.6g} of {tuple(x0)}")
    _, _, vt = np.linalg.svd(local - x0, full_matrices=True)
    normal = vt[-1] if len(local) >= g.d else vt[-1]
    normal = normal / np.linalg.norm(normal)
    to_plane = float(np.max(np.abs((local - x0) @ normal)))
    tree = cKDTree(pts[dist <= 2 * r])
    samples = _plane_samples(x0, normal, r, 0.5 * g.h)
    from_plane = float(np.max(tree.query(samples)[0]))
    return FlatnessSample(float(r), max(to_plane, from_plane) / r, normal)


def _crossing_along(phi_line: np.ndarray, ts: np.ndarray, level: float):
    above = phi_line > level
    for j in range(len(ts) - 1):
        if above[j] != above[j + 1]:
            a, b = phi_line[j] - level, phi_line[j + 1] - level
            return ts[j] + (ts[j + 1] - ts[j]) * a / (a - b)
    return None


def viscosity_slope(U: VectorField, mask: PositivityMask, x0, lam: float | None = None,
                    radii=None, max_flatness: float = 0.2) -> SlopeReading:
    """One-sided derivative of |U| along the inward normal at a flat boundary point.

    The point is first moved along the fitted normal onto the interpolated
    ``|U| = tau`` crossing. Difference quotients at steps h, 2h and 3h are
    extrapolated to zero step by a linear least-squares fit.
    """
    g = U.grid
    x0 = np.asarray(x0, dtype=float)
    h = g.h
    if radii is None:
        radii = (4 * h, 8 * h, 16 * h)
    chosen = None
    for r in radii:
        if not g.ball_fits(x0, r):
            continue
        try:
            fs = flatness(mask, x0, r)
        except NoBoundaryError:
            continue
        if fs.delta <= max_flatness:
            chosen = fs
            break
    if chosen is None:
        raise NotFlatError(f"boundary is not flat near {tuple(x0)} at any admissible radius")
    nu = chosen.normal
    probe = U.sample(np.stack([x0 + 2 * h * nu, x0 - 2 * h * nu]))
    if np.linalg.norm(probe[1]) > np.linalg.norm(probe[0]):
        nu = -nu
    ts = np.linspace(-2 * h, 2 * h, 33)
    line = np.linalg.norm(U.sample(x0 + ts[:, None] * nu), axis=1)
    t0 = _crossing_along(line, ts, mask.tau)
    base = x0 + (t0 if t0 is not None else 0.0) * nu
    steps = np.array([h, 2 * h, 3 * h])
    vals = np.linalg.norm(U.sample(np.vstack([base, base + steps[:, None] * nu])), axis=1)
    quotients = (vals[1:] - vals[0]) / steps
    slope = float(np.polyfit(steps, quotients, 1)[1])
    ok = None
    if lam is not None:
        ok = bool(abs(slope - math.sqrt(lam)) <= 0.1 * math.sqrt(lam))
    return SlopeReading(slope, nu, base, chosen.r, ok)


def _ball_nodes(U: VectorField, mask: PositivityMask, x0, r: float):
    g = U.grid
    x0 = np.asarray(x0, dtype=float)
    g.require_ball(x0, r)
    window, inball = node_ball(g, x0, r)
    vals = U.values[(slice(None),) + window][:, inball]
    return vals[:, np.linalg.norm(vals, axis=0) > mask.tau]


def constant_sign_components(U: VectorField, mask: PositivityMask, x0, r: float) -> list[ConstantSign]:
    """Every component with a strict fixed sign on ``{|U| > tau} cap B_r(x0)``."""
    vals = _ball_nodes(U, mask, x0, r)
    if vals.shape[1] == 0:
        return []
    norm = np.linalg.norm(vals, axis=0)
    out = []
    for i, comp in enumerate(vals):
        for sign in (1, -1):
            if np.all(sign * comp > 0):
                big = np.abs(comp) > mask.tau
                c = float(np.max(norm[big] / np.abs(comp[big])))
                out.append(ConstantSign(i, sign, c))
    return out


def constant_sign_component(U: VectorField, mask: PositivityMask, x0, r: float) -> ConstantSign | None:
    """The fixed-sign component with the smallest ``C_sign``, or None."""
    found = constant_sign_components(U, mask, x0, r)
    if not found:
        return None
    return min(found, key=lambda c: (c.c_sign, c.index))


def ratio_fields(U: VectorField, mask: PositivityMask, i: int):
    """Nodal ratios ``u_j / u_i`` and ``g = (1 + sum_{j != i} g_j^2)^(-1/2)``.

    Entries are NaN wherever ``|U| <= tau`` or ``|u_i| <= tau``.
    """
    if not 0 <= i < U.k:
        raise IndexError(f"component {i} out of range for k={U.k}")
    vals = U.values
    ok = (np.linalg.norm(vals, axis=0) > mask.tau) & (np.abs(vals[i]) > mask.tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = [np.where(ok, vals[j] / vals[i], np.nan) for j in range(U.k)]
    others = sum((ratios[j] ** 2 for j in range(U.k) if j != i), np.zeros(U.grid.shape))
    g = np.where(ok, 1.0 / np.sqrt(1.0 + others), np.nan)
    return ratios, g


def oscillation(values: np.ndarray, grid: Grid, x0, radii) -> list[float]:
    """``max - min`` of the finite entries of a nodal field on each ``B_r(x0)``."""
    out = []
    for r in radii:
        window, inball = node_ball(grid, x0, r)
        sel = np.asarray(values)[window][inball]
        sel = sel[np.isfinite(sel)]
        out.append(float(sel.max() - sel.min()) if sel.size else float("nan"))
    return out
