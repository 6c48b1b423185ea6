"""Closed-form and brute-force reference solutions."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .fields import EnergyBreakdown, Grid, VectorField, default_tau, energy, free_boundary_nodes

BUDGET_CELLS = 10.0


@dataclass
class OracleCase:
    """An exact field on a grid together with its closed-form energy on the box.

    ``boundary`` describes the free boundary: ``{"kind": "hyperplane",
    "normal": nu}``, ``{"kind": "point", "at": ..., "s": ...}`` or
    ``{"kind": "none"}``.
    """

    name: str
    d: int
    k: int
    lam: float
    grid: Grid
    exact_field: VectorField
    exact_energy: EnergyBreakdown
    exact_boundary: dict
    extra: dict = field(default_factory=dict)

    @property
    def energy_budget(self) -> float:
        """Allowed O(h) gap between the discrete and closed-form energies."""
        return BUDGET_CELLS * self.grid.h * max(1.0, abs(self.exact_energy.total))

    def discrete_energy(self) -> EnergyBreakdown:
        return energy(self.exact_field, self.lam)

    def consistency_gap(self) -> float:
        return abs(self.discrete_energy().total - self.exact_energy.total)

    def check(self) -> bool:
        return self.consistency_gap() <= self.energy_budget

    def manifest(self) -> dict:
        out = {
            "case": self.name, "d": self.d, "k": self.k, "lambda": self.lam,
            "exact_energy": self.exact_energy.as_dict(),
            "discrete_energy": self.discrete_energy().as_dict(),
            "energy_budget": self.energy_budget,
            "boundary": {key: (np.asarray(v).tolist() if isinstance(v, (np.ndarray, list, tuple)) else v)
                         for key, v in self.exact_boundary.items()},
        }
        out.update(self.extra)
        return out


def _halfspace_fraction(a, t) -> float:
    """Volume of ``{y in [0,1]^m : a . y > t}`` for ``a > 0`` componentwise.

    Inclusion-exclusion is summed in exact rational arithmetic; in floating
    point it cancels badly when one coefficient is tiny.
    """
    a = [Fraction(float(v)) for v in a]
    t = Fraction(t)
    m = len(a)
    if m == 0:
        return 1.0 if 0 > t else 0.0
    below = Fraction(0)
    for subset in itertools.product((0, 1), repeat=m):
        s = sum((ai for ai, bit in zip(a, subset) if bit), Fraction(0))
        below += (-1) ** sum(subset) * max(t - s, Fraction(0)) ** m
    below /= math.factorial(m) * math.prod(a)
    return float(min(max(1 - below, Fraction(0)), Fraction(1)))


def halfspace_box_volume(grid: Grid, nu) -> float:
    """Exact volume of ``{x . nu > 0}`` inside the grid box."""
    nu = np.asarray(nu, dtype=float)
    lo, hi = grid.lower, grid.upper
    side = hi - lo
    coef = [Fraction(float(c)) for c in nu * side]
    t = -sum((Fraction(float(n)) * Fraction(float(x)) for n, x in zip(nu, lo)), Fraction(0))
    # reflect negative directions so every coefficient is positive
    for i in range(grid.d):
        if coef[i] < 0:
            t -= coef[i]
            coef[i] = -coef[i]
    keep = [c for c in coef if c > 0]
    return _halfspace_fraction(keep, t) * float(np.prod(side))


def halfplane(xi, nu, grid: Grid, lam: float) -> OracleCase:
    """``x -> xi (x . nu)_+`` with ``|xi|^2 = lam``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if nu.shape != (grid.d,):
        raise ValueError(f"normal must have {grid.d} entries")
    if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
        raise ValueError("normal must be a unit vector")
    if abs(np.linalg.norm(xi) - math.sqrt(lam)) > 1e-12 * max(1.0, math.sqrt(lam)):
        raise ValueError("|xi| must equal sqrt(lambda)")
    X = grid.coords()
    s = np.maximum(np.tensordot(nu, X, axes=1), 0.0)
    U = VectorField(grid, xi.reshape((-1,) + (1,) * grid.d) * s[None])
    vol = halfspace_box_volume(grid, nu)
    exact = EnergyBreakdown(lam * vol, vol, float(lam))
    return OracleCase("halfplane", grid.d, len(xi), float(lam), grid, U, exact,
                      {"kind": "hyperplane", "normal": nu.tolist(), "offset": 0.0},
                      {"xi": xi.tolist(), "density": 0.5,
                       "weiss": float(lam * math.pi ** (grid.d / 2) / math.gamma(grid.d / 2 + 1) / 2),
                       "viscosity_slope": math.sqrt(lam)})


def frobenius_sq(A) -> float:
    return float(np.sum(np.asarray(A, float) ** 2))


def linear(A, grid: Grid, lam: float):
    """``x -> A x`` and whether it is known to minimize.

    Returns ``(case, flag)`` with ``flag = sum a_ij^2 >= lam``. When A has rank
    one the condition is also necessary, recorded as ``extra["definitive"]``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != grid.d:
        raise ValueError(f"matrix must have {grid.d} columns")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix must be finite")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    X = grid.coords()
    U = VectorField(grid, np.tensordot(A, X, axes=1))
    norm = frobenius_sq(A)
    rank = int(np.linalg.matrix_rank(A)) if norm > 0 else 0
    vol = grid.volume if rank > 0 else 0.0
    exact = EnergyBreakdown(norm * grid.volume, vol, float(lam))
    flag = bool(norm >= lam * (1 - 1e-12))
    kind = {"kind": "none"} if rank == 0 else {"kind": "nodal", "rank": rank}
    case = OracleCase("linear", grid.d, A.shape[0], float(lam), grid, U, exact, kind,
                      {"A": A.tolist(), "norm": norm, "rank": rank, "minimal": flag,
                       "definitive": bool(flag or rank == 1),
                       "weiss": float(lam * math.pi ** (grid.d / 2) / math.gamma(grid.d / 2 + 1))
                       if flag else None})
    return case, flag


def oned_closed_form(a: float, lam: float):
    """``(s_star, energy)`` for data ``u(0) = a``, ``u(1) = 0`` on (0, 1)."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    if a == 0:
        return 0.0, 0.0
    root = math.sqrt(lam)
    if a <= root:
        return a / root, 2 * a * root
    return 1.0, a * a + lam


def oned_brute_force(a: float, lam: float, grid: Grid):
    """Best detachment node by enumeration: ``(s, energy)`` over ``s = j h``."""
    if a == 0:
        return 0.0, 0.0
    s = grid.h * np.arange(1, grid.n)
    e = a * a / s + lam * s
    j = int(np.argmin(e))
    return float(s[j]), float(e[j])


def oracle_1d(a: float, lam: float, grid: Grid) -> OracleCase:
    """Exact 1-D minimizer with ``u(0) = a`` and ``u(1) = 0``."""
    if grid.d != 1 or abs(grid.lower[0]) > 1e-12 or abs(grid.upper[0] - 1.0) > 1e-12:
        raise ValueError("the 1-D oracle lives on the unit interval")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    s_star, e_star = oned_closed_form(a, lam)
    x = grid.axis(0)
    u = a * np.maximum(1.0 - x / s_star, 0.0) if s_star > 0 else np.zeros_like(x)
    dirichlet = a * a / s_star if s_star > 0 else 0.0
    exact = EnergyBreakdown(dirichlet, s_star, float(lam))
    s_bf, e_bf = oned_brute_force(a, lam, grid)
    return OracleCase("oned", 1, 1, float(lam), grid, VectorField(grid, u[None]), exact,
                      {"kind": "point", "at": [s_star]},
                      {"a": float(a), "s_star": s_star, "closed_energy": e_star,
                       "brute_s": s_bf, "brute_energy": e_bf})


def energy_compare(case: OracleCase, candidate: VectorField, lam: float | None = None) -> float:
    """``energy(candidate) - energy(exact)`` for a candidate with the same trace."""
    if lam is None:
        lam = case.lam
    ref = case.exact_field
    if candidate.grid != ref.grid or candidate.k != ref.k:
        raise ValueError("candidate does not live on the case grid")
    bnd = ref.grid.boundary_nodes()
    scale = max(1.0, float(np.max(np.abs(ref.values))))
    if np.max(np.abs(candidate.values[:, bnd] - ref.values[:, bnd]), initial=0.0) > 1e-12 * scale:
        raise ValueError("candidate boundary data differs from the case")
    return energy(candidate, lam).total - energy(ref, lam).total


def _bump(grid: Grid, center, radius: float) -> np.ndarray:
    X = grid.coords()
    r2 = np.sum((X - np.asarray(center).reshape((-1,) + (1,) * grid.d)) ** 2, axis=0) / radius**2
    with np.errstate(divide="ignore", over="ignore"):
        b = np.where(r2 < 1, np.exp(1 - 1 / np.maximum(1 - r2, 1e-300)), 0.0)
    return b


def _interior_point(grid: Grid, rng, margin: float, where=None) -> np.ndarray:
    lo = grid.lower + margin
    hi = grid.upper - margin
    if where is not None and where.any():
        idx = np.argwhere(where)
        pts = grid.lower + grid.h * idx
        ok = np.all((pts >= lo) & (pts <= hi), axis=1)
        if ok.any():
            pts = pts[ok]
            return pts[rng.integers(len(pts))]
    return lo + rng.random(grid.d) * (hi - lo)


PERTURBATIONS = (
    "bump_up", "bump_down", "bump_outside", "excise_row", "extend_row", "excise_ball",
    "scale_up", "scale_down", "rotate_components", "noise", "smooth", "shift",
)


def perturbation_battery(case: OracleCase, seed: int = 0) -> list[tuple[str, VectorField]]:
    """Twelve named competitors with the case's boundary data, seeded."""
    rng = np.random.default_rng(seed)
    U = case.exact_field
    g = U.grid
    h = g.h
    vals = U.values
    bnd = g.boundary_nodes()
    interior = ~bnd
    norm = U.norm()
    tau = default_tau(U)
    pos = norm > tau
    fb = free_boundary_nodes(U, tau)
    margin = 0.25 * float(np.min(g.upper - g.lower))
    radius = max(6 * h, 0.1 * margin)
    amp = 0.1 * radius * math.sqrt(case.lam)

    def fix(arr):
        arr = np.array(arr, dtype=float)
        arr[:, bnd] = vals[:, bnd]
        return VectorField(g, arr)

    direction = vals[:, pos].mean(axis=1) if pos.any() else np.ones(U.k)
    direction = direction / (np.linalg.norm(direction) or 1.0)
    dshape = direction.reshape((-1,) + (1,) * g.d)
    out = []
    b = _bump(g, _interior_point(g, rng, margin, pos), radius)
    out.append(("bump_up", fix(vals + amp * b[None] * dshape)))
    b = _bump(g, _interior_point(g, rng, margin, pos), radius)
    out.append(("bump_down", fix(vals - amp * b[None] * dshape)))
    b = _bump(g, _interior_point(g, rng, margin, ~pos & interior), radius)
    out.append(("bump_outside", fix(vals + amp * b[None] * dshape)))

    # drop the first layer of positive nodes next to the free boundary
    struct = ndimage.generate_binary_structure(g.d, 1)
    layer = ndimage.binary_dilation(fb, structure=struct) & pos & interior
    out.append(("excise_row", fix(np.where(layer[None], 0.0, vals))))
    # switch on the free-boundary layer by linear continuation from inside
    grown = np.array(vals)
    if fb.any():
        inner = np.where(pos[None], vals, 0.0)
        nb_sum = np.zeros_like(vals)
        nb_cnt = np.zeros(g.shape)
        for ax in range(g.d):
            for sh in (-1, 1):
                nb_sum += np.roll(inner, sh, axis=ax + 1)
                nb_cnt += np.roll(pos, sh, axis=ax)
        avg = nb_sum / np.maximum(nb_cnt, 1)[None]
        grown[:, fb] = 0.5 * avg[:, fb]
    out.append(("extend_row", fix(grown)))
    center = _interior_point(g, rng, margin, fb)
    ball = _bump(g, center, 4 * h) > 0
    out.append(("excise_ball", fix(np.where(ball[None], 0.0, vals))))
    out.append(("scale_up", fix(vals * 1.05)))
    out.append(("scale_down", fix(vals * 0.95)))

    theta = 0.3 * _bump(g, _interior_point(g, rng, margin), 2 * radius)
    rot = np.array(vals)
    if U.k >= 2:
        c, s = np.cos(theta), np.sin(theta)
        rot[0], rot[1] = c * vals[0] - s * vals[1], s * vals[0] + c * vals[1]
    else:
        rot = vals * np.cos(theta)[None]
    out.append(("rotate_components", fix(rot)))
    noise = 0.1 * h * math.sqrt(case.lam) * rng.standard_normal(vals.shape)
    out.append(("noise", fix(vals + np.where(pos[None], noise, 0.0))))
    acc = np.zeros_like(vals)
    for ax in range(g.d):
        for sh in (-1, 1):
            acc += np.roll(vals, sh, axis=ax + 1)
    out.append(("smooth", fix(acc / (2 * g.d))))
    ax = int(rng.integers(g.d))
    out.append(("shift", fix(np.roll(vals, 1, axis=ax + 1))))
    return out
