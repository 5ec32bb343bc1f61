"""Nutrient harvest by a root density: Δu + f(x, u) − h(x) u = 0 on a rectangle.

The field u lives on the nodes of a uniform (Nx+1) x (Ny+1) grid; the root
density h is a cellwise GridDensity averaged onto the nodes.  Neumann sides
use ghost-node reflection, Dirichlet sides pin u = 0.  Integrals use
trapezoid node weights, under which the discrete Laplacian sums to zero
on a fully Neumann box, so the two harvest formulas agree exactly up to
the solver residual.

Only the affine reaction f(x, u) = a(x) − b u ships.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from .measure import BoxDomain, GridDensity, MeasureError

__all__ = [
    "SIDES",
    "DomainGrid2D",
    "ReactionSpec",
    "MeasureCoefficient",
    "HarvestSolution",
    "HarvestConvergenceError",
    "ComparisonReport",
    "solve",
    "harvest_value",
    "harvest_flux_form",
    "verify_comparison",
]

SIDES = ("left", "right", "bottom", "top")
BCS = ("neumann", "dirichlet")


class HarvestConvergenceError(RuntimeError):
    """Monotone iteration ran out of iterations."""

    def __init__(self, residual: float, iterations: int, message: str = ""):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message or f"no convergence after {iterations} iterations "
                                    f"(residual {residual:.3e})")


@dataclass(frozen=True)
class DomainGrid2D:
    """Node grid on a 2-D box with ``resolution`` cells per axis.

    ``dirichlet_sides`` lists the sides that carry u = 0 when a solve asks
    for Dirichlet conditions; the remaining sides stay Neumann.  The default
    is all four.
    """

    domain: BoxDomain
    resolution: tuple[int, int]
    dirichlet_sides: tuple[str, ...] = SIDES

    def __post_init__(self):
        if self.domain.d != 2:
            raise ValueError("harvest grids are two-dimensional")
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 2 or min(res) < 2:
            raise ValueError(f"need at least 2 cells per axis, got {self.resolution}")
        sides = tuple(s for s in SIDES if s in set(self.dirichlet_sides))
        unknown = set(self.dirichlet_sides) - set(SIDES)
        if unknown:
            raise ValueError(f"unknown sides {sorted(unknown)}")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "dirichlet_sides", sides)

    @classmethod
    def unit_square(cls, n: int, **kw) -> "DomainGrid2D":
        return cls(BoxDomain((0.0, 0.0), (1.0, 1.0)), (n, n), **kw)

    @property
    def shape(self) -> tuple[int, int]:
        """Node array shape."""
        return (self.resolution[0] + 1, self.resolution[1] + 1)

    @property
    def spacing(self) -> np.ndarray:
        return self.domain.extent / np.asarray(self.resolution)

    @property
    def h(self) -> float:
        return float(self.spacing.max())

    def node_coords(self, axis: int) -> np.ndarray:
        return np.linspace(self.domain.lower[axis], self.domain.upper[axis], self.shape[axis])

    def node_points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.node_coords(0), self.node_coords(1), indexing="ij")
        return np.stack([X, Y], axis=-1)

    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weight of every node."""
        wx = np.full(self.shape[0], self.spacing[0])
        wy = np.full(self.shape[1], self.spacing[1])
        wx[[0, -1]] *= 0.5
        wy[[0, -1]] *= 0.5
        return np.outer(wx, wy)

    def side_mask(self, side: str) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[{"left": (0, slice(None)), "right": (-1, slice(None)),
           "bottom": (slice(None), 0), "top": (slice(None), -1)}[side]] = True
        return m

    def boundary_mask(self, bc: str) -> np.ndarray:
        """Nodes where u is pinned to zero under ``bc``."""
        m = np.zeros(self.shape, dtype=bool)
        if bc == "dirichlet":
            for s in self.dirichlet_sides:
                m |= self.side_mask(s)
        return m

    def cell_density(self, values=0.0) -> GridDensity:
        cells = np.broadcast_to(np.asarray(values, dtype=float), self.resolution)
        return GridDensity(self.domain, np.array(cells))

    def to_nodes(self, g: GridDensity) -> np.ndarray:
        """Average of the (one, two or four) cells around every node.

        Preserves mass: sum(weights * to_nodes(g)) equals total_mass(g).
        """
        if g.domain != self.domain or g.resolution != self.resolution:
            raise MeasureError("density grid does not match the harvest grid")
        c = np.pad(g.cells, 1)
        s = c[:-1, :-1] + c[1:, :-1] + c[:-1, 1:] + c[1:, 1:]
        n = np.pad(np.ones(self.resolution), 1)
        cnt = n[:-1, :-1] + n[1:, :-1] + n[:-1, 1:] + n[1:, 1:]
        return s / cnt

    def to_json(self) -> dict:
        return {"domain": self.domain.to_json(), "resolution": list(self.resolution),
                "dirichlet_sides": list(self.dirichlet_sides)}


@dataclass(frozen=True)
class ReactionSpec:
    """f(x, u) = a(x) − b u, with 0 ≤ a ≤ b M so that 0 and M bracket u."""

    a: np.ndarray = field(repr=False)   # node field, or anything broadcastable to it
    b: float
    M: float
    family: str = "affine"

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        if self.family != "affine":
            raise ValueError(f"unsupported reaction family {self.family!r}")
        if not (self.b > 0 and np.isfinite(self.b)):
            raise ValueError(f"b must be positive, got {self.b}")
        if not (self.M > 0 and np.isfinite(self.M)):
            raise ValueError(f"M must be positive, got {self.M}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("a(x) must be finite and nonnegative")
        if np.any(a > self.b * self.M * (1 + 1e-12)):
            raise ValueError("a(x) <= b*M is required so that u = M is a supersolution")

    @property
    def K(self) -> float:
        return float(max(self.a.max(), self.b * self.M - self.a.min()))

    def a_nodes(self, grid: DomainGrid2D) -> np.ndarray:
        return np.broadcast_to(self.a, grid.shape)

    def f(self, grid: DomainGrid2D, u: np.ndarray) -> np.ndarray:
        return self.a_nodes(grid) - self.b * u

    def to_json(self) -> dict:
        a = self.a
        return {"family": self.family, "a": float(a) if a.ndim == 0 else a.tolist(),
                "b": self.b, "M": self.M}


@dataclass(frozen=True)
class MeasureCoefficient:
    """Absolutely continuous root density, one value per grid cell."""

    h_density: GridDensity

    def __post_init__(self):
        if self.h_density.d != 2:
            raise ValueError("harvest coefficients are two-dimensional")

    @classmethod
    def zero(cls, grid: DomainGrid2D) -> "MeasureCoefficient":
        return cls(grid.cell_density(0.0))

    def nodes(self, grid: DomainGrid2D) -> np.ndarray:
        return grid.to_nodes(self.h_density)


@dataclass(frozen=True)
class HarvestSolution:
    grid: DomainGrid2D
    u: np.ndarray = field(repr=False)
    bc: str
    residual: float
    iterations: int
    diffs: tuple[float, ...] = field(default=(), repr=False)

    def interpolate(self, points) -> np.ndarray:
        """Bilinear interpolation of u; points outside the box are clamped to it."""
        pts = np.asarray(points, dtype=float)
        lo, hi = np.asarray(self.grid.domain.lower), np.asarray(self.grid.domain.upper)
        interp = RegularGridInterpolator((self.grid.node_coords(0), self.grid.node_coords(1)),
                                         self.u, method="linear")
        return interp(np.clip(pts, lo, hi))

    def to_csv(self) -> str:
        return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in self.u)

    def header_json(self) -> dict:
        return {"grid": self.grid.to_json(), "bc": self.bc, "shape": list(self.u.shape),
                "layout": "row-major, first index along x", "residual": self.residual,
                "iterations": self.iterations}


def _laplacian(grid: DomainGrid2D, free: np.ndarray) -> sp.csr_matrix:
    """5-point Laplacian on the free nodes.

    Neighbours across a Neumann side are ghost reflections of the inner
    node; pinned (zero) neighbours simply drop out.
    """
    nx, ny = grid.shape
    hx, hy = grid.spacing
    idx = -np.ones(grid.shape, dtype=np.int64)
    idx[free] = np.arange(int(free.sum()))
    rows, cols, vals = [], [], []
    I, J = np.nonzero(free)
    me = idx[I, J]
    for axis, hh, size in ((0, hx, nx), (1, hy, ny)):
        c = 1.0 / hh ** 2
        rows.append(me)
        cols.append(me)
        vals.append(np.full(me.size, -2 * c))
        pos = (I, J)[axis]
        for step in (-1, 1):
            nb = pos + step
            # reflect across the box edge: ghost node equals the inner neighbour
            nb = np.where(nb < 0, 1, np.where(nb >= size, size - 2, nb))
            NI, NJ = (nb, J) if axis == 0 else (I, nb)
            k = idx[NI, NJ]
            ok = k >= 0
            rows.append(me[ok])
            cols.append(k[ok])
            vals.append(np.full(int(ok.sum()), c))
    n = me.size
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def residual_field(grid: DomainGrid2D, reaction: ReactionSpec, hn: np.ndarray,
                   u: np.ndarray, bc: str) -> np.ndarray:
    """Δu + f(x, u) − h u at the free nodes (zero on pinned nodes)."""
    free = ~grid.boundary_mask(bc)
    L = _laplacian(grid, free)
    r = np.zeros(grid.shape)
    r[free] = L @ u[free] + (reaction.f(grid, u) - hn * u)[free]
    return r


def solve(grid: DomainGrid2D, reaction: ReactionSpec, mu: Optional[MeasureCoefficient] = None,
          bc: str = "neumann", tol: float = 1e-8, max_iter: int = 10000,
          shift: str = "constant") -> HarvestSolution:
    """Monotone iteration from the supersolution u = M.

    Each step solves (Λ − Δ) u_new = a + (Λ − b − h) u_old, which keeps
    iterates in [0, M] and pointwise non-increasing since Λ ≥ b + h.
    ``shift="constant"`` uses Λ = b + max h; ``shift="pointwise"`` uses
    Λ(x) = b + h(x), for which the affine problem is solved in one step.
    Stops when successive iterates differ by less than ``tol`` and the
    residual is at most ``tol`` (max norms).
    """
    if bc not in BCS:
        raise ValueError(f"bc must be one of {BCS}, got {bc!r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if shift not in ("constant", "pointwise"):
        raise ValueError(f"unknown shift {shift!r}")
    mu = mu or MeasureCoefficient.zero(grid)
    hn = mu.nodes(grid)
    a = np.array(reaction.a_nodes(grid))
    b, M = reaction.b, reaction.M
    pinned = grid.boundary_mask(bc)
    free = ~pinned
    if not free.any():
        raise ValueError("no free nodes")
    L = _laplacian(grid, free)
    lam = b + (hn if shift == "pointwise" else hn.max())
    lam = np.broadcast_to(lam, grid.shape)[free]
    lu = splu((sp.diags(lam) - L).tocsc())
    coef = lam - b - hn[free]
    af = a[free]

    u = np.zeros(grid.shape)
    u[free] = M
    diffs = []
    res = np.inf
    for k in range(1, max_iter + 1):
        new = lu.solve(af + coef * u[free])
        step = float(np.max(np.abs(new - u[free])))
        diffs.append(step)
        u[free] = new
        # residual of the fixed-point equation at the new iterate
        res = float(np.max(np.abs(L @ new + af - (b + hn[free]) * new)))
        if step < tol and res <= tol:
            break
    else:
        raise HarvestConvergenceError(res, max_iter)
    lo, hi = u.min(), u.max()
    if lo < -1e-9 * M or hi > M * (1 + 1e-9):
        raise HarvestConvergenceError(res, k, f"iterate left [0, M]: [{lo}, {hi}]")
    np.clip(u, 0.0, M, out=u)   # remove rounding-level excursions only
    u.setflags(write=False)
    return HarvestSolution(grid, u, bc, res, k, tuple(diffs))


def harvest_value(sol: HarvestSolution, mu: MeasureCoefficient) -> float:
    """∫ u dμ: trapezoid sum of u·h over the nodes."""
    hn = mu.nodes(sol.grid)
    return float(np.sum(sol.grid.weights() * sol.u * hn))


def _normal_flux(grid: DomainGrid2D, u: np.ndarray, side: str) -> float:
    """∫ ∂u/∂n (outward) along one side, second-order one-sided differences."""
    hx, hy = grid.spacing
    lines = u if side in ("left", "right") else u.T
    first = side in ("left", "bottom")
    k0, k1, k2 = (0, 1, 2) if first else (-1, -2, -3)
    step, along = (hx, hy) if side in ("left", "right") else (hy, hx)
    # derivative pointing into the box; the outward one is its negative
    inward = (-3 * lines[k0] + 4 * lines[k1] - lines[k2]) / (2 * step)
    w = np.full(inward.size, along)
    w[[0, -1]] *= 0.5
    return float(-np.sum(w * inward))


def harvest_flux_form(sol: HarvestSolution, reaction: ReactionSpec,
                      grid: Optional[DomainGrid2D] = None) -> float:
    """∫ f(x, u) dx, plus the outward normal flux of u across Dirichlet sides.

    Equals ∫ u dμ for an exact solution (integrate the equation and apply
    the divergence theorem).
    """
    grid = grid or sol.grid
    total = float(np.sum(grid.weights() * reaction.f(grid, sol.u)))
    if sol.bc == "dirichlet":
        total += sum(_normal_flux(grid, sol.u, s) for s in grid.dirichlet_sides)
    return total


@dataclass(frozen=True)
class ComparisonReport:
    max_violation: float
    holds: bool
    tolerance: float
    small: HarvestSolution = field(repr=False)
    big: HarvestSolution = field(repr=False)


def verify_comparison(grid: DomainGrid2D, reaction: ReactionSpec, mu_small: MeasureCoefficient,
                      mu_big: MeasureCoefficient, bc: str = "neumann", tol: float = 1e-8,
                      max_iter: int = 10000, **kw) -> ComparisonReport:
    """More roots means less water left everywhere: u_big <= u_small."""
    if np.any(mu_small.h_density.cells > mu_big.h_density.cells):
        raise ValueError("mu_small must not exceed mu_big in any cell")
    s = solve(grid, reaction, mu_small, bc, tol, max_iter, **kw)
    g = solve(grid, reaction, mu_big, bc, tol, max_iter, **kw)
    viol = float(max(0.0, np.max(g.u - s.u)))
    return ComparisonReport(viol, viol <= 10 * tol, 10 * tol, s, g)
