"""Positive measures on R^d: finite atom lists and voxel densities.

Atoms are the optimization variable of the shape problems.  Densities are
what the sunlight and harvest functionals actually see, since point masses
have no (d-1)-dimensional projection density and zero capacity; atoms are
turned into densities with :func:`rasterize`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "MeasureError",
    "Atom",
    "DiscreteMeasure",
    "BoxDomain",
    "GridDensity",
    "total_mass",
    "dilate",
    "scale_mass",
    "add",
    "rasterize",
    "bump_profile",
]


class MeasureError(ValueError):
    """Raised for malformed measures or incompatible operands."""


@dataclass(frozen=True)
class Atom:
    position: tuple[float, ...]
    mass: float

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "mass", float(self.mass))
        if not np.all(np.isfinite(pos)):
            raise MeasureError(f"atom position must be finite, got {pos}")
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise MeasureError(f"atom mass must be positive and finite, got {self.mass}")


@dataclass(frozen=True)
class DiscreteMeasure:
    d: int
    atoms: tuple[Atom, ...] = ()

    def __post_init__(self):
        if int(self.d) < 2:
            raise MeasureError(f"dimension must be >= 2, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        atoms = tuple(self.atoms)
        for a in atoms:
            if len(a.position) != self.d:
                raise MeasureError(
                    f"atom {a.position} does not have {self.d} coordinates")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_arrays(cls, positions, masses) -> "DiscreteMeasure":
        positions = np.asarray(positions, dtype=float)
        masses = np.asarray(masses, dtype=float).ravel()
        if positions.ndim != 2 or positions.shape[0] != masses.size:
            raise MeasureError("positions must be (n, d) with one mass per row")
        return cls(positions.shape[1],
                   tuple(Atom(tuple(p), m) for p, m in zip(positions, masses)))

    @classmethod
    def empty(cls, d: int = 2) -> "DiscreteMeasure":
        return cls(d, ())

    def __len__(self):
        return len(self.atoms)

    @property
    def positions(self) -> np.ndarray:
        if not self.atoms:
            return np.zeros((0, self.d))
        return np.array([a.position for a in self.atoms], dtype=float)

    @property
    def masses(self) -> np.ndarray:
        return np.array([a.mass for a in self.atoms], dtype=float)

    def to_json(self) -> dict:
        return {"d": self.d,
                "atoms": [{"x": list(a.position), "m": a.mass} for a in self.atoms]}

    @classmethod
    def from_json(cls, data: dict) -> "DiscreteMeasure":
        try:
            d = int(data["d"])
            atoms = tuple(Atom(tuple(a["x"]), a["m"]) for a in data.get("atoms", []))
        except (KeyError, TypeError) as exc:
            raise MeasureError(f"bad measure JSON: {exc}") from exc
        return cls(d, atoms)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise MeasureError("box corners differ in dimension")
        if not all(a < b for a, b in zip(lo, hi)):
            raise MeasureError(f"box lower {lo} must be < upper {hi} componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        """Membership in the closed box, vectorized over rows of ``points``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.all((p >= lo - tol) & (p <= hi + tol), axis=-1)

    def corners(self) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        grids = np.meshgrid(*[[a, b] for a, b in zip(lo, hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def to_json(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class GridDensity:
    """Piecewise-constant density on a regular cell grid over a box.

    ``cells[i, j, ...]`` is the density (mass per unit volume) of the cell
    whose index along axis ``k`` is the k-th subscript.
    """

    domain: BoxDomain
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = np.array(self.cells, dtype=float)
        if cells.ndim != self.domain.d:
            raise MeasureError(
                f"cell array has {cells.ndim} axes for a {self.domain.d}-d box")
        if cells.size == 0:
            raise MeasureError("degenerate grid with zero cells")
        if not np.all(np.isfinite(cells)) or np.any(cells < 0):
            raise MeasureError("cell values must be finite and nonnegative")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def zeros(cls, domain: BoxDomain, resolution: Sequence[int]) -> "GridDensity":
        return cls(domain, np.zeros(tuple(int(r) for r in resolution)))

    @classmethod
    def constant(cls, domain: BoxDomain, resolution: Sequence[int], value: float) -> "GridDensity":
        return cls(domain, np.full(tuple(int(r) for r in resolution), float(value)))

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.cells.shape

    @property
    def cell_width(self) -> np.ndarray:
        return self.domain.extent / np.asarray(self.cells.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_width))

    def cell_centers(self, axis: int) -> np.ndarray:
        w = self.cell_width[axis]
        return self.domain.lower[axis] + w * (np.arange(self.cells.shape[axis]) + 0.5)

    def same_grid(self, other: "GridDensity") -> bool:
        return self.domain == other.domain and self.resolution == other.resolution

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Flat (row-major) index of the cell holding each point, -1 outside the closed box."""
        pts = np.asarray(points, dtype=float)
        lo = np.asarray(self.domain.lower)
        rel = (pts - lo) / self.cell_width
        shape = np.asarray(self.cells.shape)
        inside = np.all((rel >= 0) & (rel <= shape), axis=-1)
        # points exactly on the upper face belong to the last cell
        idx = np.clip(np.floor(rel).astype(np.int64), 0, shape - 1)
        flat = np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.cells.shape)
        return np.where(inside, flat, -1)

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Density at ``points`` (..., d); zero outside the closed box."""
        idx = self.cell_index(points)
        return np.where(idx >= 0, self.cells.ravel()[np.maximum(idx, 0)], 0.0)

    def header_json(self) -> dict:
        return {"domain": self.domain.to_json(), "resolution": list(self.resolution),
                "layout": "row-major", "units": "mass per unit volume"}

    def to_csv(self) -> str:
        """Row-major CSV: one row per index of all but the last axis."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        rows = self.cells.reshape(-1, self.cells.shape[-1])
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, header: dict, text: str) -> "GridDensity":
        domain = BoxDomain(tuple(header["domain"]["lower"]), tuple(header["domain"]["upper"]))
        res = tuple(int(r) for r in header["resolution"])
        rows = [[float(v) for v in r] for r in csv.reader(io.StringIO(text)) if r]
        arr = np.asarray(rows, dtype=float)
        if arr.size != int(np.prod(res)):
            raise MeasureError(f"CSV holds {arr.size} values, header promises {res}")
        return cls(domain, arr.reshape(res))


def total_mass(mu) -> float:
    if isinstance(mu, DiscreteMeasure):
        return float(sum(a.mass for a in mu.atoms))
    if isinstance(mu, GridDensity):
        return float(mu.cells.sum() * mu.cell_volume)
    raise TypeError(f"not a measure: {type(mu).__name__}")


def dilate(mu, lam: float):
    """Push ``mu`` forward through x -> lam*x, i.e. mu^lam(A) = mu(A/lam)."""
    if not lam > 0:
        raise MeasureError(f"dilation factor must be positive, got {lam}")
    if isinstance(mu, DiscreteMeasure):
        return DiscreteMeasure(mu.d, tuple(
            Atom(tuple(lam * x for x in a.position), a.mass) for a in mu.atoms))
    if isinstance(mu, GridDensity):
        dom = BoxDomain(tuple(lam * x for x in mu.domain.lower),
                        tuple(lam * x for x in mu.domain.upper))
        return GridDensity(dom, mu.cells / lam ** mu.d)
    raise TypeError(f"not a measure: {type(mu).__name__}")


def scale_mass(mu, lam: float):
    if not lam > 0:
        raise MeasureError(f"mass factor must be positive, got {lam}")
    if isinstance(mu, DiscreteMeasure):
        return DiscreteMeasure(mu.d, tuple(Atom(a.position, lam * a.mass) for a in mu.atoms))
    if isinstance(mu, GridDensity):
        return GridDensity(mu.domain, lam * mu.cells)
    raise TypeError(f"not a measure: {type(mu).__name__}")


def add(mu1, mu2):
    if isinstance(mu1, DiscreteMeasure) and isinstance(mu2, DiscreteMeasure):
        if mu1.d != mu2.d:
            raise MeasureError(f"dimension mismatch {mu1.d} vs {mu2.d}")
        return DiscreteMeasure(mu1.d, mu1.atoms + mu2.atoms)
    if isinstance(mu1, GridDensity) and isinstance(mu2, GridDensity):
        if not mu1.same_grid(mu2):
            raise MeasureError("grid mismatch")
        return GridDensity(mu1.domain, mu1.cells + mu2.cells)
    raise MeasureError(
        f"cannot add {type(mu1).__name__} and {type(mu2).__name__}")


def bump_profile(r: np.ndarray, radius: float) -> np.ndarray:
    """Unnormalized smearing kernel (1 - (r/R)^2)^2 on r < R."""
    s = np.clip(1.0 - (np.asarray(r) / radius) ** 2, 0.0, None)
    return s * s


def rasterize(mu: DiscreteMeasure, domain: BoxDomain, resolution: Sequence[int],
              radius: float) -> GridDensity:
    """Smear every atom into a compact bump and deposit it on the grid.

    Each bump is renormalized after clipping to the box, so the grid carries
    exactly the atom's mass.  Atoms may sit outside the box by less than
    ``radius`` as long as some cell center falls inside the bump.
    """
    res = tuple(int(r) for r in resolution)
    if len(res) != domain.d or any(r < 1 for r in res):
        raise MeasureError(f"resolution {resolution} does not fit a {domain.d}-d box")
    if mu.d != domain.d:
        raise MeasureError(f"measure is {mu.d}-d, grid is {domain.d}-d")
    grid = GridDensity.zeros(domain, res)
    width = grid.cell_width
    if radius < 2 * width.max() * (1 - 1e-12):
        raise MeasureError(
            f"smear radius {radius} is below two cell widths ({2 * width.max():.6g})")
    cells = np.zeros(res)
    lo = np.asarray(domain.lower)
    centers = [grid.cell_centers(k) for k in range(domain.d)]
    for a in mu.atoms:
        x = np.asarray(a.position)
        if not domain.contains(x, tol=radius)[0]:
            raise MeasureError(f"atom at {a.position} lies outside the grid domain")
        # index window that can intersect the bump
        i0 = np.maximum(np.floor((x - radius - lo) / width).astype(int), 0)
        i1 = np.minimum(np.ceil((x + radius - lo) / width).astype(int) + 1, np.asarray(res))
        sl = tuple(slice(a0, a1) for a0, a1 in zip(i0, i1))
        sub = np.meshgrid(*[centers[k][sl[k]] for k in range(domain.d)], indexing="ij")
        r2 = sum((sub[k] - x[k]) ** 2 for k in range(domain.d))
        w = bump_profile(np.sqrt(r2), radius)
        s = w.sum()
        if s <= 0:
            raise MeasureError(f"atom at {a.position} misses every cell center")
        cells[sl] += w * (a.mass / (s * grid.cell_volume))
    return GridDensity(domain, cells)
