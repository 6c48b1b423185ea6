"""Blow-up limits, point classification, rank strata and the density decay fit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .diagnostics import (
    constant_sign_component,
    density,
    flatness,
    sphere_points,
    weiss,
)
from .errors import NoBoundaryError, NotLinearError, ResolutionError
from .fields import (
    PositivityMask,
    VectorField,
    free_boundary_nodes,
    positivity_mask,
    rescale,
    unit_ball_volume,
    unit_sphere_area,
)

REGULAR = "Regular"
SING1 = "Sing1"
BRANCHING = "Branching"
UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class ClassifyConfig:
    """Bands and tolerances used to classify free-boundary points."""

    delta: float = 0.05
    linear_tol: float = 0.05
    rank_cutoff: float = 0.05
    weiss_tol: float = 0.05
    stability_tol: float = 0.05
    min_radius_cells: float = 8.0
    radius_factor: float = math.sqrt(2.0)
    blowup_levels: int = 3

    def __post_init__(self):
        if not 0 < self.delta < 0.25:
            raise ValueError("delta must lie in (0, 1/4)")
        if self.radius_factor <= 1:
            raise ValueError("radius_factor must exceed 1")
        if self.blowup_levels < 2:
            raise ValueError("at least two blow-up levels are needed")


@dataclass
class BlowupResult:
    limit_field: VectorField
    radii_used: list
    cauchy_gap: float
    gaps: list
    converged: bool

    def as_dict(self) -> dict:
        return {"radii_used": list(self.radii_used), "cauchy_gap": self.cauchy_gap,
                "gaps": list(self.gaps), "converged": self.converged}


@dataclass
class BoundaryPointReport:
    point: tuple
    density: float
    weiss_limit: float
    cls: str
    rank: int | None = None
    flatness_at_finest: float | None = None
    constant_sign: tuple | None = None
    radii: list = field(default_factory=list)
    densities: list = field(default_factory=list)
    weiss_values: list = field(default_factory=list)
    weiss_consistent: bool = True
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "point": [float(c) for c in self.point],
            "class": self.cls,
            "density": self.density,
            "weiss_limit": self.weiss_limit,
            "weiss_consistent": self.weiss_consistent,
            "rank": self.rank,
            "flatness_at_finest": self.flatness_at_finest,
            "constant_sign": list(self.constant_sign) if self.constant_sign else None,
            "radii": [float(r) for r in self.radii],
            "densities": [float(v) for v in self.densities],
            "weiss": [float(v) for v in self.weiss_values],
            "note": self.note,
        }


@dataclass
class Stratum:
    j: int
    points: list
    isolated: list | None = None

    def as_dict(self) -> dict:
        return {"rank": self.j, "count": len(self.points),
                "points": [[float(c) for c in p] for p in self.points],
                "isolated": self.isolated}


@dataclass
class UniquenessFit:
    alpha: float
    C: float
    satisfied: bool
    residual: float
    radii: list
    complement: list
    W0: list
    w0_ratio: float

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "C": self.C, "satisfied": self.satisfied,
                "residual": self.residual, "radii": list(self.radii),
                "complement": list(self.complement), "W0": list(self.W0),
                "w0_ratio": self.w0_ratio}


def _sphere_l2(U: VectorField, x0, r: float, rho: float = 0.5) -> np.ndarray:
    """Samples of ``U(x0 + r y) / r`` on ``|y| = rho``."""
    d = U.grid.d
    return U.sample(np.asarray(x0, float) + r * sphere_points(d, rho)) / r


def blowup(U: VectorField, x0, r0: float, levels: int = 3, tol: float = 0.05) -> BlowupResult:
    """Rescalings at ``r0 2^-n`` and their Cauchy gaps in ``L2(dB_1/2)``.

    The gap between two levels is measured relative to the norm of the finer
    rescaling (absolute when that norm vanishes).
    """
    g = U.grid
    x0 = np.asarray(x0, dtype=float)
    if levels < 2:
        raise ValueError("need at least two levels")
    radii = [r0 * 2.0**-n for n in range(levels)]
    if radii[-1] < 8 * g.h * (1 - 1e-9):
        raise ResolutionError(f"finest blow-up radius {radii[-1]:.6g} is below 8h = {8 * g.h:.6g}")
    g.require_ball(x0, r0)
    area = unit_sphere_area(g.d) * 0.5 ** (g.d - 1)
    samples = [_sphere_l2(U, x0, r) for r in radii]
    gaps = [math.sqrt(float(np.mean(np.sum((a - b) ** 2, axis=1))) * area)
            for a, b in zip(samples, samples[1:])]
    ref = math.sqrt(float(np.mean(np.sum(samples[-1] ** 2, axis=1))) * area)
    last = gaps[-1] / ref if ref > 0 else gaps[-1]
    limit = rescale(U, x0, radii[-1])
    return BlowupResult(limit, radii, float(max(gaps)), [float(v) for v in gaps], bool(last <= tol))


def rank_estimate(limit: VectorField, linear_tol: float = 0.05, cutoff: float = 0.05) -> int:
    """Rank of the best affine fit ``y -> A y + b`` on the unit ball."""
    g = limit.grid
    y = g.coords().reshape(g.d, -1).T
    sel = np.sum(y**2, axis=1) <= 1.0
    y = y[sel]
    vals = limit.values.reshape(limit.k, -1).T[sel]
    design = np.hstack([y, np.ones((len(y), 1))])
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    resid = vals - design @ coef
    scale = np.linalg.norm(vals)
    if scale == 0:
        return 0
    rel = np.linalg.norm(resid) / scale
    if rel > linear_tol:
        raise NotLinearError(f"blow-up is not linear (relative residual {rel:.3g})")
    A = coef[: g.d].T
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > cutoff * sv[0]))


def default_radii(grid, x0, cfg: ClassifyConfig = ClassifyConfig()) -> list[float]:
    """Geometric ladder from ``min_radius_cells * h`` up to the distance to the box minus h."""
    rmax = grid.distance_to_boundary(x0) - grid.h
    r = cfg.min_radius_cells * grid.h
    out = []
    while r <= rmax * (1 + 1e-12):
        out.append(r)
        r *= cfg.radius_factor
    return out


def _extrapolate(r1: float, v1: float, r2: float, v2: float) -> float:
    """First-order Richardson to r = 0 from the two finest radii ``r1 < r2``."""
    return v1 + (v1 - v2) * r1 / (r2 - r1)


def classify(U: VectorField, lam: float, x0, radii=None, mask: PositivityMask | None = None,
             cfg: ClassifyConfig = ClassifyConfig()) -> BoundaryPointReport:
    """Density band classification of a free-boundary point.

    Densities and Weiss energies are extrapolated to zero radius from the two
    finest radii. Branching points also get the rank of their blow-up.
    """
    g = U.grid
    x0 = np.asarray(x0, dtype=float)
    if mask is None:
        mask = positivity_mask(U)
    if radii is None:
        radii = default_radii(g, x0, cfg)
        if len(radii) < 3:
            return BoundaryPointReport(tuple(x0), float("nan"), float("nan"), UNRESOLVED,
                                       radii=radii, note="fewer than three admissible radii")
    radii = sorted(float(r) for r in radii)
    if len(radii) < 3:
        raise ValueError("classification needs at least three radii")
    dens = [density(mask, x0, r) for r in radii]
    ws = [weiss(U, lam, x0, r, mask).W for r in radii]
    gamma = float(np.clip(_extrapolate(radii[0], dens[0], radii[1], dens[1]), 0.0, 1.0))
    w_lim = float(_extrapolate(radii[0], ws[0], radii[1], ws[1]))
    scale = lam * unit_ball_volume(g.d)
    consistent = bool(abs(w_lim - scale * gamma) <= cfg.weiss_tol * scale)
    report = BoundaryPointReport(tuple(x0), gamma, w_lim, UNRESOLVED, radii=radii,
                                 densities=dens, weiss_values=ws, weiss_consistent=consistent)
    try:
        report.flatness_at_finest = flatness(mask, x0, radii[0]).delta
    except NoBoundaryError:
        report.flatness_at_finest = None
    cs = constant_sign_component(U, mask, x0, radii[0])
    if cs is not None:
        report.constant_sign = (cs.index, cs.sign)

    delta = cfg.delta
    if abs(gamma - dens[0]) > cfg.stability_tol:
        report.note = "density not stable at the finest radii"
    elif abs(gamma - 0.5) <= delta:
        report.cls = REGULAR
    elif gamma >= 1 - delta:
        report.cls = BRANCHING
    elif 0.5 + delta < gamma < 1 - delta:
        report.cls = SING1
    else:
        report.note = "density below the regular band"

    if report.cls == BRANCHING:
        r0 = radii[-1]
        levels = cfg.blowup_levels
        while levels > 2 and r0 * 2.0 ** -(levels - 1) < 8 * g.h:
            levels -= 1
        try:
            bu = blowup(U, x0, r0, levels)
            report.rank = rank_estimate(bu.limit_field, cfg.linear_tol, cfg.rank_cutoff)
        except (ResolutionError, NotLinearError) as exc:
            report.note = str(exc)
    return report


def boundary_nodes_xy(U: VectorField, tau: float | None = None) -> np.ndarray:
    """Coordinates of the interior free-boundary nodes."""
    idx = np.argwhere(free_boundary_nodes(U, tau))
    return U.grid.lower + U.grid.h * idx.astype(float)


def boundary_points(U: VectorField, mask: PositivityMask | None = None) -> np.ndarray:
    """Free-boundary nodes moved onto the nearest edge crossing of ``|U| = tau``.

    Nodes with no crossing within one cell are kept as they are.
    """
    if mask is None:
        mask = positivity_mask(U)
    nodes = boundary_nodes_xy(U, mask.tau)
    if len(nodes) == 0 or len(mask.crossings) == 0:
        return nodes
    dist, j = cKDTree(mask.crossings).query(nodes)
    near = dist <= U.grid.h * (1 + 1e-9)
    out = nodes.copy()
    out[near] = mask.crossings[j[near]]
    return out


def classify_all(U: VectorField, lam: float, points=None, cfg: ClassifyConfig = ClassifyConfig()):
    """Classify every free-boundary node (or the given points) with enough room.

    Returns ``(reports, skipped)``; points without three admissible radii are
    skipped.
    """
    mask = positivity_mask(U)
    if points is None:
        points = boundary_points(U, mask)
    reports, skipped = [], []
    for p in points:
        radii = default_radii(U.grid, p, cfg)
        if len(radii) < 3:
            skipped.append(tuple(float(c) for c in p))
            continue
        reports.append(classify(U, lam, p, radii, mask, cfg))
    return reports, skipped


def stratify(U: VectorField, lam: float, branching, cfg: ClassifyConfig = ClassifyConfig()) -> list[Stratum]:
    """Group branching points by blow-up rank.

    ``branching`` holds BoundaryPointReports or bare points (which are
    classified here). Points of full rank ``d`` are checked for isolation: no
    other free-boundary node may lie within the finest blow-up radius.
    """
    g = U.grid
    reports = []
    for item in branching:
        if isinstance(item, BoundaryPointReport):
            reports.append(item)
        else:
            reports.append(classify(U, lam, item, cfg=cfg))
    groups: dict[int, list] = {}
    for rep in reports:
        if rep.cls != BRANCHING or rep.rank is None or rep.rank < 1:
            continue
        groups.setdefault(rep.rank, []).append(rep)
    fb = boundary_nodes_xy(U)
    out = []
    for j in sorted(groups):
        pts = [rep.point for rep in groups[j]]
        isolated = None
        if j == g.d:
            isolated = []
            for rep in groups[j]:
                r_fine = rep.radii[-1] * 2.0 ** -(cfg.blowup_levels - 1)
                r_fine = max(r_fine, 8 * g.h)
                dist = np.sqrt(np.sum((fb - np.asarray(rep.point)) ** 2, axis=1))
                isolated.append(bool(np.sum((dist > 0.5 * g.h) & (dist <= r_fine)) == 0))
        out.append(Stratum(j, pts, isolated))
    return out


def fit_power_law(radii, values, floor: float = 1e-9):
    """Least-squares fit of ``log v = log C + alpha log r``.

    Returns ``(alpha, C, rms_residual)``. When every value is below ``floor``
    the decay is faster than any power and ``(inf, 0, 0)`` is returned; with a
    single usable value the fit is undetermined and NaNs are returned.
    """
    r = np.asarray(radii, float)
    v = np.asarray(values, float)
    keep = v > floor
    if not keep.any():
        return math.inf, 0.0, 0.0
    if keep.sum() < 2:
        return math.nan, math.nan, math.nan
    lr, lv = np.log(r[keep]), np.log(v[keep])
    alpha, logc = np.polyfit(lr, lv, 1)
    resid = lv - (alpha * lr + logc)
    return float(alpha), float(math.exp(logc)), float(np.sqrt(np.mean(resid**2)))


def uniqueness_criterion(U: VectorField, lam: float, x0, radii, mask: PositivityMask | None = None,
                         tol: float = 0.1, floor: float = 1e-9) -> UniquenessFit:
    """Power-law fit of ``|B_r \\ Omega| / r^d`` against r.

    The criterion holds when the fitted exponent is positive and the fit's
    rms log-residual is below ``tol``. W0 samples are reported together with
    ``max |W0(r)| / r^(alpha/2)`` as a consistency figure.
    """
    g = U.grid
    if mask is None:
        mask = positivity_mask(U)
    radii = sorted(float(r) for r in radii)
    omega = unit_ball_volume(g.d)
    comp = [omega * (1.0 - density(mask, x0, r)) for r in radii]
    alpha, C, resid = fit_power_law(radii, comp, floor)
    satisfied = bool(alpha > 0 and resid < tol) if not math.isnan(alpha) else False
    w0 = [weiss(U, lam, x0, r, mask).W0 for r in radii]
    if math.isfinite(alpha) and alpha > 0:
        ratio = max(abs(w) / r ** (alpha / 2) for w, r in zip(w0, radii))
    else:
        ratio = max(abs(w) for w in w0)
    return UniquenessFit(alpha, C, satisfied, resid, radii, comp, w0, float(ratio))
