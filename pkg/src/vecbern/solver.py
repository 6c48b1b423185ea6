"""Discrete minimization of ``int |grad U|^2 + lam |{|U| > 0}|`` with fixed trace.

The solve proceeds in two stages.

1. Annealing. The measure term is replaced by ``lam * min(|U| / eps, 1)``
   and the surrogate is relaxed for a decreasing sequence of ``eps``. Each
   level is followed by a harmonic replacement on the current positivity
   set and non-degeneracy trimming; a level is kept only if it lowers the
   sharp discrete energy.
2. Boundary polishing. Nodes next to the free boundary are switched on or
   off in batches ranked by the first-order energy change
   ``(|grad |U||^2 - lam) h^d``; every batch is re-solved harmonically and
   accepted only if the sharp energy drops.

Both stages only ever accept energy decreases, so the recorded history is
non-increasing and the output never exceeds the energy of the harmonic
extension of the boundary data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ConvergenceError
from .fields import (
    EnergyBreakdown,
    Grid,
    PositivityMask,
    VectorField,
    default_tau,
    energy,
    free_boundary_nodes,
    positivity_mask,
)

log = logging.getLogger(__name__)


class BoundaryDatum:
    """Dirichlet data: ``k`` values per boundary node of a grid.

    Stored as a full nodal array whose interior entries are zero.
    """

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == grid.d:
            arr = arr[None]
        if arr.shape[1:] != grid.shape:
            raise ValueError("boundary values do not fit the grid")
        bnd = grid.boundary_nodes()
        if not np.all(np.isfinite(arr[:, bnd])):
            raise ValueError("boundary data must be finite")
        arr = np.where(bnd, arr, 0.0)
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def from_field(cls, U: VectorField) -> BoundaryDatum:
        return cls(U.grid, U.values)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> BoundaryDatum:
        return cls(grid, np.asarray(fn(grid.coords()), dtype=float))

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def max_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.values**2, axis=0))))

    def rotate(self, Q) -> BoundaryDatum:
        return BoundaryDatum(self.grid, np.tensordot(np.asarray(Q, float), self.values, axes=1))


@dataclass(frozen=True)
class SolveConfig:
    """Solver parameters. ``None`` entries are filled in from the grid and data."""

    lam: float = 1.0
    eps_schedule: tuple[float, ...] | None = None
    sweeps_per_eps: int | None = None
    trim_c0: float | None = None
    trim_r0: float | None = None
    tol: float = 1e-9
    max_outer: int = 200
    harmonic_tol: float = 1e-11
    relax: str = "psor"
    eps_levels: int = 6

    def __post_init__(self):
        if not (isinstance(self.lam, (int, float)) and math.isfinite(self.lam) and self.lam > 0):
            raise ConfigError(f"lambda must be a positive number, got {self.lam!r}")
        if self.eps_schedule is not None:
            eps = tuple(float(e) for e in self.eps_schedule)
            if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
                raise ConfigError("eps_schedule must be positive and strictly decreasing")
            object.__setattr__(self, "eps_schedule", eps)
        if self.sweeps_per_eps is not None and self.sweeps_per_eps < 0:
            raise ConfigError("sweeps_per_eps must be nonnegative")
        for name in ("trim_c0", "trim_r0"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.tol > 0 or not self.harmonic_tol > 0:
            raise ConfigError("tolerances must be positive")
        if self.max_outer < 1:
            raise ConfigError("max_outer must be at least 1")
        if self.relax not in ("psor", "explicit"):
            raise ConfigError("relax must be 'psor' or 'explicit'")
        if self.eps_levels < 1:
            raise ConfigError("eps_levels must be at least 1")

    _KEYS = {
        "lambda": "lam", "lam": "lam", "eps_schedule": "eps_schedule",
        "sweeps_per_eps": "sweeps_per_eps", "trim_c0": "trim_c0", "trim_r0": "trim_r0",
        "tol": "tol", "max_outer": "max_outer", "harmonic_tol": "harmonic_tol",
        "relax": "relax", "eps_levels": "eps_levels",
    }

    @classmethod
    def from_mapping(cls, data: dict) -> SolveConfig:
        unknown = set(data) - set(cls._KEYS)
        if unknown:
            raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
        kw = {cls._KEYS[k]: v for k, v in data.items()}
        try:
            for key in ("lam", "trim_c0", "trim_r0", "tol", "harmonic_tol"):
                if kw.get(key) is not None:
                    kw[key] = float(kw[key])
            for key in ("sweeps_per_eps", "max_outer", "eps_levels"):
                if kw.get(key) is not None:
                    kw[key] = int(kw[key])
            if kw.get("eps_schedule") is not None:
                kw["eps_schedule"] = tuple(float(e) for e in kw["eps_schedule"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver value: {exc}") from None
        return cls(**kw)

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "eps_schedule": list(self.eps_schedule) if self.eps_schedule else None,
            "sweeps_per_eps": self.sweeps_per_eps, "trim_c0": self.trim_c0,
            "trim_r0": self.trim_r0, "tol": self.tol, "max_outer": self.max_outer,
            "harmonic_tol": self.harmonic_tol, "relax": self.relax,
            "eps_levels": self.eps_levels,
        }

    def resolved(self, grid: Grid, phi: BoundaryDatum) -> SolveConfig:
        """Copy with every default made explicit."""
        eps = self.eps_schedule
        if eps is None:
            e0 = 0.5 * phi.max_norm()
            eps = tuple(e0 * 2.0**-i for i in range(self.eps_levels)) if e0 > 0 else ()
        sweeps = self.sweeps_per_eps
        if sweeps is None:
            sweeps = 4 * grid.n if self.relax == "psor" else 20 * grid.n
        return replace(
            self,
            eps_schedule=eps or None,
            sweeps_per_eps=sweeps,
            trim_c0=self.trim_c0 if self.trim_c0 is not None else 0.05 * math.sqrt(self.lam),
            trim_r0=self.trim_r0 if self.trim_r0 is not None else 8 * grid.h,
        )


@dataclass
class SolveReport:
    final_energy: EnergyBreakdown
    iterations: dict
    trim_events: list = field(default_factory=list)
    converged: bool = False
    energy_history: list = field(default_factory=list)
    config: SolveConfig | None = None

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "final_energy": self.final_energy.as_dict(),
            "iterations": dict(self.iterations),
            "energy_history": [float(e) for e in self.energy_history],
            "trim_events": [{"center": [float(c) for c in ctr], "radius": float(r)}
                            for ctr, r in self.trim_events],
            "config": self.config.as_dict() if self.config else None,
        }


# --- stencil helpers -------------------------------------------------------

def _laplacian(values: np.ndarray, h: float) -> np.ndarray:
    """Discrete Laplacian on interior nodes (zero on the box faces)."""
    d = values.ndim - 1
    out = np.zeros_like(values)
    core = (slice(None),) + (slice(1, -1),) * d
    acc = -2.0 * d * values[core]
    for ax in range(d):
        for shift in (-1, 1):
            idx = [slice(None)] + [slice(1, -1)] * d
            idx[ax + 1] = slice(1 + shift, values.shape[ax + 1] - 1 + shift)
            acc = acc + values[tuple(idx)]
    out[core] = acc / h**2
    return out


def sor_omega(grid: Grid) -> float:
    return 2.0 / (1.0 + math.sin(math.pi / (grid.n - 1)))


class _Stencil:
    """Flat indices of a node set split by red/black color, with neighbors."""

    def __init__(self, grid: Grid, nodes: np.ndarray):
        d, n = grid.d, grid.n
        idx = np.flatnonzero(nodes)
        multi = np.unravel_index(idx, grid.shape)
        parity = np.sum(multi, axis=0) % 2
        strides = [n ** (d - 1 - a) for a in range(d)]
        offsets = np.array([s * sign for s in strides for sign in (-1, 1)])
        self.colors = []
        for c in (0, 1):
            ic = idx[parity == c]
            self.colors.append((ic, ic[None, :] + offsets[:, None]))
        self.two_d = 2 * d
        self.size = idx.size


def sor_laplace(values: np.ndarray, nodes: np.ndarray, grid: Grid, tol: float,
         omega: float | None = None, max_iter: int | None = None) -> int:
    """Red-black SOR for the Laplace equation on ``nodes``; updates in place."""
    st = _Stencil(grid, nodes)
    if st.size == 0:
        return 0
    if omega is None:
        omega = sor_omega(grid)
    if max_iter is None:
        max_iter = 200 * grid.n + 2000
    k = values.shape[0]
    flat = values.reshape(k, -1)
    scale = max(float(np.max(np.abs(flat))), 1e-300)
    for it in range(1, max_iter + 1):
        res = 0.0
        for ic, nb in st.colors:
            if ic.size == 0:
                continue
            delta = flat[:, nb].sum(axis=1) / st.two_d - flat[:, ic]
            flat[:, ic] += omega * delta
            if it % 8 == 0:
                res = max(res, float(np.max(np.abs(delta))))
        if it % 8 == 0 and res <= tol * scale:
            return it
    raise ConvergenceError(f"SOR did not reach {tol:g} within {max_iter} sweeps")


def _prox_truncated(V: np.ndarray, mu: float, eps: float) -> np.ndarray:
    """Componentwise-group prox of ``mu * min(|W| / eps, 1)`` at ``V`` (axis 0 = components)."""
    t = np.sqrt(np.sum(V**2, axis=0))
    s = np.minimum(np.maximum(t - mu / eps, 0.0), eps)
    cost_shrink = 0.5 * (t - s) ** 2 + mu * s / eps
    keep = (t >= eps) & (mu <= cost_shrink)
    s = np.where(keep, t, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(t > 0, s / t, 0.0)
    return V * factor


def surrogate_energy(U: VectorField, lam: float, eps: float) -> float:
    """Dirichlet energy plus ``lam * sum_nodes h^d min(|U| / eps, 1)``."""
    from .fields import field_dirichlet_density

    g = U.grid
    dirichlet = field_dirichlet_density(U).sum() * g.cell_volume
    return float(dirichlet + lam * g.cell_volume * np.minimum(U.norm() / eps, 1.0).sum())


def relax_step(U: VectorField, lam: float, eps: float, dt: float | None = None) -> VectorField:
    """One explicit proximal-gradient sweep on the smoothed functional.

    The Dirichlet part takes a gradient step of size ``dt``; the concave
    measure surrogate ``lam * min(|U| / eps, 1)`` is applied through its exact
    proximal map, which lets small values reach zero instead of oscillating
    around it. ``dt`` defaults to ``h^2 / (8 d)``, the inverse Lipschitz
    constant of the discrete Dirichlet gradient, for which the surrogate energy
    cannot increase. Boundary nodes are untouched.
    """
    g = U.grid
    if not eps > 0:
        raise ValueError("eps must be positive")
    dt_max = g.h**2 / (4 * g.d)
    if dt is None:
        dt = g.h**2 / (8 * g.d)
    if not 0 < dt <= dt_max:
        raise ValueError(f"step {dt:g} exceeds the stability bound {dt_max:g}")
    vals = U.values
    V = vals + 2.0 * dt * _laplacian(vals, g.h)
    new = _prox_truncated(V, lam * dt, eps)
    bnd = g.boundary_nodes()
    new[:, bnd] = vals[:, bnd]
    return U.with_values(new)


def _psor_sweeps(values: np.ndarray, interior: np.ndarray, grid: Grid, lam: float,
                 eps: float, sweeps: int, omega: float) -> None:
    """Red-black nonlinear SOR on the smoothed functional; updates in place."""
    st = _Stencil(grid, interior)
    if st.size == 0:
        return
    k = values.shape[0]
    flat = values.reshape(k, -1)
    mu = lam * grid.h**2 / (4 * grid.d)
    for _ in range(sweeps):
        for ic, nb in st.colors:
            if ic.size == 0:
                continue
            avg = flat[:, nb].sum(axis=1) / st.two_d
            gs = _prox_truncated(avg, mu, eps)
            old = flat[:, ic]
            dead = np.all(gs == 0, axis=0)
            flat[:, ic] = np.where(dead, 0.0, old + omega * (gs - old))


def harmonic_replace(U: VectorField, mask: PositivityMask, tol: float = 1e-11,
                     omega: float | None = None, max_iter: int | None = None) -> VectorField:
    """Make every component discretely harmonic on the interior of the mask.

    Nodes all of whose cells are inside are solved for by red-black SOR;
    other interior nodes are set to zero; box-face nodes keep their values.
    """
    g = U.grid
    if mask.grid != g:
        raise ValueError("mask and field live on different grids")
    active = mask.active_nodes()
    vals = np.array(U.values)
    vals[:, ~active & ~g.boundary_nodes()] = 0.0
    sor_laplace(vals, active, g, tol, omega, max_iter)
    return U.with_values(vals)


def _disk(grid: Grid, r: float) -> np.ndarray:
    m = int(math.floor(r / grid.h + 1e-9))
    ax = np.arange(-m, m + 1) * grid.h
    c = np.meshgrid(*([ax] * grid.d), indexing="ij")
    return sum(ci**2 for ci in c) <= r * r * (1 + 1e-12)


def trim(U: VectorField, c0: float, r0: float, tau: float | None = None,
         events: list | None = None) -> VectorField:
    """Non-degeneracy trimming, iterated to a fixed point.

    At every free-boundary node ``x0`` and ``r`` in ``(r0, r0/2, r0/4)``: when
    the node average of |U| over ``B_r(x0)`` is below ``c0 * r``, U is set to
    zero on ``B_{r/2}(x0)``. Box-face nodes are never modified.
    """
    if not (c0 > 0 and r0 > 0):
        raise ValueError("trim constants must be positive")
    g = U.grid
    if tau is None:
        tau = default_tau(U)
    vals = np.array(U.values)
    interior = ~g.boundary_nodes()
    radii = [r for r in (r0, r0 / 2, r0 / 4) if r >= g.h]
    kernels = {r: (_disk(g, r), _disk(g, r / 2)) for r in radii}
    counts = {r: ndimage.correlate(np.ones(g.shape), kernels[r][0].astype(float),
                                   mode="constant", cval=0.0) for r in radii}
    while True:
        changed = False
        for r in radii:
            norm = np.sqrt(np.sum(vals**2, axis=0))
            fb = free_boundary_nodes(VectorField(g, vals), tau)
            if not fb.any():
                break
            mean = ndimage.correlate(norm, kernels[r][0].astype(float), mode="constant",
                                     cval=0.0) / counts[r]
            centers = fb & (mean < c0 * r)
            if not centers.any():
                continue
            zone = ndimage.binary_dilation(centers, structure=kernels[r][1]) & interior
            if not np.any(vals[:, zone] != 0):
                continue
            if events is not None:
                for idx in np.argwhere(centers):
                    events.append((tuple(g.node_point(idx)), r))
            vals[:, zone] = 0.0
            changed = True
        if not changed:
            return U.with_values(vals)


def harmonic_extension(grid: Grid, phi: BoundaryDatum, tol: float = 1e-11) -> VectorField:
    """Harmonic extension of the boundary data over the whole box."""
    vals = np.array(phi.values)
    sor_laplace(vals, ~grid.boundary_nodes(), grid, tol)
    return VectorField(grid, vals)


# --- boundary polishing ----------------------------------------------------

def _neighbor_max(a: np.ndarray, ax: int) -> np.ndarray:
    pad = np.pad(a, 1)
    core = [slice(1, -1)] * a.ndim
    lo = list(core)
    hi = list(core)
    lo[ax] = slice(0, -2)
    hi[ax] = slice(2, None)
    return np.maximum(pad[tuple(lo)], pad[tuple(hi)])


def _moves(U: VectorField, active: np.ndarray, lam: float, tau: float):
    """Candidate node switches with their predicted energy decrease."""
    g = U.grid
    phi = U.norm()
    interior = ~g.boundary_nodes()
    inactive = interior & ~active
    known = active | g.boundary_nodes()
    phi_known = np.where(known, phi, 0.0)
    struct = ndimage.generate_binary_structure(g.d, 1)
    touches_known = ndimage.binary_dilation(known & (phi > tau), structure=struct)

    s2_on = sum((_neighbor_max(phi_known, ax) / g.h) ** 2 for ax in range(g.d))
    on = inactive & touches_known & (s2_on > lam * (1 + 1e-3))
    gain_on = (s2_on - lam) * g.cell_volume

    s2_off = np.zeros(g.shape)
    edge = np.zeros(g.shape, dtype=bool)
    for ax in range(g.d):
        nb_inactive = _neighbor_max(inactive.astype(float), ax) > 0
        edge |= nb_inactive
        pad = np.pad(phi, 1, mode="edge")
        lo = [slice(1, -1)] * g.d
        hi = [slice(1, -1)] * g.d
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        central = (pad[tuple(hi)] - pad[tuple(lo)]) / (2 * g.h)
        s2_off += np.where(nb_inactive, (phi / g.h) ** 2, central**2)
    off = active & edge & (phi > tau) & (s2_off < lam * (1 - 1e-3))
    gain_off = (lam - s2_off) * g.cell_volume

    return ([(float(gain_on[i]), i) for i in zip(*np.nonzero(on))],
            [(float(gain_off[i]), i) for i in zip(*np.nonzero(off))])


def _polish(U: VectorField, lam: float, cfg: SolveConfig, budget: int, history: list,
            counters: dict):
    """Greedy batched boundary moves with exact energy acceptance."""
    g = U.grid
    active = positivity_mask(U).active_nodes()
    vals = np.array(U.values)
    vals[:, ~active & ~g.boundary_nodes()] = 0.0
    sor_laplace(vals, active, g, cfg.harmonic_tol)
    cur = U.with_values(vals)
    E = energy(cur, lam)
    rounds = 0
    while rounds < budget:
        rounds += 1
        tau = default_tau(cur)
        cand_on, cand_off = _moves(cur, active, lam, tau)
        improved = False
        for cands, turn_on in ((cand_on, True), (cand_off, False)):
            cands.sort(key=lambda c: -c[0])
            m = len(cands)
            while m >= 1:
                counters["polish_trials"] += 1
                trial = active.copy()
                tv = np.array(cur.values)
                for _, idx in cands[:m]:
                    trial[idx] = turn_on
                    if not turn_on:
                        tv[(slice(None),) + idx] = 0.0
                sor_laplace(tv, trial, g, cfg.harmonic_tol)
                cand = cur.with_values(tv)
                Et = energy(cand, lam)
                if Et.total < E.total - cfg.tol * max(abs(E.total), 1.0):
                    active, cur, E = trial, cand, Et
                    history.append(E.total)
                    improved = True
                    break
                m //= 2
            if improved:
                break
        if not improved:
            return cur, E, rounds, True
    return cur, E, rounds, False


def solve(grid: Grid, phi: BoundaryDatum, cfg: SolveConfig):
    """Discrete minimizer for boundary data ``phi``; returns ``(U, SolveReport)``."""
    if phi.grid != grid:
        raise ValueError("boundary datum lives on a different grid")
    cfg = cfg.resolved(grid, phi)
    lam = cfg.lam
    best = harmonic_extension(grid, phi, cfg.harmonic_tol)
    best_E = energy(best, lam)
    history = [best_E.total]
    events: list = []
    counters = {"relax_sweeps": 0, "anneal_levels": 0, "anneal_accepted": 0,
                "polish_rounds": 0, "polish_trials": 0}
    interior = ~grid.boundary_nodes()
    omega = min(sor_omega(grid), 1.9)
    outer = 0
    for eps in cfg.eps_schedule or ():
        if outer >= cfg.max_outer:
            break
        outer += 1
        counters["anneal_levels"] += 1
        if cfg.relax == "psor":
            vals = np.array(best.values)
            _psor_sweeps(vals, interior, grid, lam, eps, cfg.sweeps_per_eps, omega)
            V = VectorField(grid, vals)
        else:
            V = best
            for _ in range(cfg.sweeps_per_eps):
                V = relax_step(V, lam, eps)
        counters["relax_sweeps"] += cfg.sweeps_per_eps
        V = harmonic_replace(V, positivity_mask(V), cfg.harmonic_tol)
        level_events: list = []
        V = trim(V, cfg.trim_c0, cfg.trim_r0, events=level_events)
        if level_events:
            V = harmonic_replace(V, positivity_mask(V), cfg.harmonic_tol)
        E = energy(V, lam)
        log.debug("eps=%.4g energy=%.8g (best %.8g)", eps, E.total, best_E.total)
        if E.total < best_E.total:
            best, best_E = V, E
            history.append(E.total)
            events.extend(level_events)
            counters["anneal_accepted"] += 1

    converged = False
    if outer < cfg.max_outer:
        best, best_E, rounds, converged = _polish(best, lam, cfg, cfg.max_outer - outer,
                                                  history, counters)
        counters["polish_rounds"] = rounds
    report = SolveReport(best_E, counters, events, converged, history, cfg)
    return best, report
