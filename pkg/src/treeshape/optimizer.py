"""Seeded simulated annealing for the branch (sunlight) and root (harvest) problems.

Both maximize  payoff(mu) - c * I^alpha(mu)  over atomic measures of fixed
total mass kappa0.  Atoms are smeared onto a grid before the payoff is
evaluated; the irrigation cost uses the heuristic tree search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .harvest import (DomainGrid2D, HarvestConvergenceError, MeasureCoefficient,
                      ReactionSpec, harvest_value, solve)
from .irrigation import irrigation_cost
from .measure import BoxDomain, DiscreteMeasure, GridDensity, rasterize
from .sunlight import IntensityModel, sunlight_total

__all__ = [
    "PROPOSALS",
    "SearchOptions",
    "BranchProblem",
    "RootProblem",
    "Candidate",
    "Certificate",
    "OptReport",
    "support_radius",
    "evaluate",
    "optimize_branches",
    "optimize_roots",
    "certify",
    "best_report",
]

PROPOSALS = ("move", "split", "merge", "transfer")
MASS_TOL = 1e-9
COOLING = 0.999


def support_radius(kappa0: float, alpha: float, c: float, eta_norm: float) -> float:
    """r0 = kappa0**(1-alpha) * |eta| / (c alpha); maximizers live in B(0, r0)."""
    if not c > 0:
        raise ValueError("c must be positive")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return kappa0 ** (1 - alpha) * eta_norm / (c * alpha)


@dataclass(frozen=True)
class SearchOptions:
    """Annealing and tree-search knobs shared by both problems."""

    proposals: tuple[str, ...] = PROPOSALS
    max_atoms: int = 12
    initial: Optional[DiscreteMeasure] = None   # default: one atom, see initial_measure
    step: Optional[float] = None                # first move scale; default a quarter of the search radius
    temperature: Optional[float] = None         # T0; default 10% of the payoff bound
    max_proposals_factor: int = 20              # proposals are capped at factor * budget
    irrigation_tol: float = 1e-6
    irrigation_max_iter: int = 200
    irrigation_moves: int = 0

    def __post_init__(self):
        object.__setattr__(self, "proposals", tuple(self.proposals))
        bad = set(self.proposals) - set(PROPOSALS)
        if bad or not self.proposals:
            raise ValueError(f"proposals must be a nonempty subset of {PROPOSALS}")
        if self.max_atoms < 1:
            raise ValueError("max_atoms must be >= 1")

    def to_json(self) -> dict:
        return {"proposals": list(self.proposals), "max_atoms": self.max_atoms,
                "initial": self.initial.to_json() if self.initial is not None else None,
                "step": self.step, "temperature": self.temperature,
                "max_proposals_factor": self.max_proposals_factor,
                "irrigation_tol": self.irrigation_tol,
                "irrigation_max_iter": self.irrigation_max_iter,
                "irrigation_moves": self.irrigation_moves}


def _check_common(c, alpha, kappa0, smear_radius):
    if not (c >= 0 and math.isfinite(c)):
        raise ValueError(f"c must be a finite nonnegative number, got {c}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not kappa0 > 0:
        raise ValueError("kappa0 must be positive")
    if not smear_radius > 0:
        raise ValueError("smear_radius must be positive")


@dataclass(frozen=True)
class BranchProblem:
    """Maximize sunlight_total(smear(mu), eta, obstacle) - c I^alpha(mu)."""

    domain: BoxDomain
    eta: IntensityModel
    c: float
    alpha: float
    kappa0: float
    smear_radius: float
    resolution: tuple[int, ...]
    obstacle: Optional[GridDensity] = None

    def __post_init__(self):
        _check_common(self.c, self.alpha, self.kappa0, self.smear_radius)
        if not self.c > 0:
            raise ValueError("the branch problem needs c > 0")
        d = self.domain.d
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        if self.eta.d != d:
            raise ValueError("light directions and domain differ in dimension")
        if d > 2 and not self.alpha > 1 - 1 / (d - 1):
            raise ValueError(f"alpha must exceed 1 - 1/(d-1) = {1 - 1 / (d - 1):g} in d = {d}")
        if not self.domain.contains(np.zeros(d))[0]:
            raise ValueError("the origin must lie in the closed domain")
        if self.obstacle is not None and (self.obstacle.domain != self.domain
                                          or self.obstacle.resolution != self.resolution):
            raise ValueError("obstacle density must live on the problem grid")

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def r0(self) -> float:
        return support_radius(self.kappa0, self.alpha, self.c, self.eta.norm_l1)

    @property
    def payoff_bound(self) -> float:
        return self.eta.norm_l1 * self.kappa0

    def feasible(self, mu: DiscreteMeasure) -> bool:
        x = mu.positions
        return bool(np.all(self.domain.contains(x))
                    and np.all(np.linalg.norm(x, axis=1) <= self.r0))

    def search_center(self) -> np.ndarray:
        """Box center pulled into B(0, r0); the box is convex and holds the origin."""
        ctr = (np.asarray(self.domain.lower) + np.asarray(self.domain.upper)) / 2
        r = np.linalg.norm(ctr)
        lim = 0.5 * self.r0
        return ctr if r <= lim else ctr * (lim / r)

    def search_scale(self) -> float:
        return float(min(self.r0, np.linalg.norm(self.domain.extent)))

    def payoff(self, mu: DiscreteMeasure) -> float:
        f = rasterize(mu, self.domain, self.resolution, self.smear_radius)
        return sunlight_total(f, self.eta, self.obstacle)

    def to_json(self) -> dict:
        return {"kind": "branches", "domain": self.domain.to_json(), "eta": self.eta.to_json(),
                "c": self.c, "alpha": self.alpha, "kappa0": self.kappa0,
                "smear_radius": self.smear_radius, "resolution": list(self.resolution),
                "obstacle": self.obstacle is not None, "r0": self.r0}


@dataclass(frozen=True)
class RootProblem:
    """Maximize harvest(smear(mu)) - c I^alpha(mu) on a 2-D grid."""

    grid: DomainGrid2D
    reaction: ReactionSpec
    bc: str
    c: float
    alpha: float
    kappa0: float
    smear_radius: float
    tol: float = 1e-8
    max_iter: int = 5000
    shift: str = "pointwise"

    def __post_init__(self):
        _check_common(self.c, self.alpha, self.kappa0, self.smear_radius)
        # the dimension condition alpha > 1 - 1/(d-2) is vacuous in d = 2
        if self.bc not in ("neumann", "dirichlet"):
            raise ValueError(f"bc must be neumann or dirichlet, got {self.bc!r}")
        if not self.grid.domain.contains(np.zeros(2))[0]:
            raise ValueError("the origin must lie in the closed domain")

    @property
    def d(self) -> int:
        return 2

    @property
    def payoff_bound(self) -> float:
        return self.reaction.M * self.kappa0

    def feasible(self, mu: DiscreteMeasure) -> bool:
        return bool(np.all(self.grid.domain.contains(mu.positions)))

    def search_center(self) -> np.ndarray:
        D = self.grid.domain
        return (np.asarray(D.lower) + np.asarray(D.upper)) / 2

    def search_scale(self) -> float:
        return float(np.linalg.norm(self.grid.domain.extent))

    def coefficient(self, mu: DiscreteMeasure) -> MeasureCoefficient:
        return MeasureCoefficient(rasterize(mu, self.grid.domain, self.grid.resolution,
                                            self.smear_radius))

    def solve(self, mu: DiscreteMeasure):
        coef = self.coefficient(mu)
        return solve(self.grid, self.reaction, coef, self.bc, self.tol, self.max_iter,
                     shift=self.shift), coef

    def payoff(self, mu: DiscreteMeasure) -> float:
        sol, coef = self.solve(mu)
        return harvest_value(sol, coef)

    def to_json(self) -> dict:
        return {"kind": "roots", "grid": self.grid.to_json(), "reaction": self.reaction.to_json(),
                "bc": self.bc, "c": self.c, "alpha": self.alpha, "kappa0": self.kappa0,
                "smear_radius": self.smear_radius, "tol": self.tol, "max_iter": self.max_iter,
                "shift": self.shift}


@dataclass(frozen=True)
class Candidate:
    mu: DiscreteMeasure
    payoff: float
    cost: float
    c: float

    @property
    def objective(self) -> float:
        return self.payoff - self.c * self.cost

    def to_json(self) -> dict:
        return {"measure": self.mu.to_json(), "payoff": self.payoff, "cost": self.cost,
                "objective": self.objective}


@dataclass(frozen=True)
class Certificate:
    name: str
    passed: bool
    detail: str
    per_atom: tuple = ()

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "per_atom": [dict(a) for a in self.per_atom]}


@dataclass(frozen=True)
class OptReport:
    best: Candidate
    initial: Candidate
    trace: tuple[float, ...]
    counts: dict
    seed: int
    budget: int
    certificates: tuple[Certificate, ...] = ()

    def to_json(self) -> dict:
        return {"seed": self.seed, "budget": self.budget, "best": self.best.to_json(),
                "initial": self.initial.to_json(), "counts": dict(self.counts),
                "trace_length": len(self.trace),
                "certificates": [c.to_json() for c in self.certificates]}


def evaluate(problem, mu: DiscreteMeasure, opts: SearchOptions = SearchOptions()) -> Candidate:
    cost = irrigation_cost(mu, problem.alpha, mode="heuristic", seed=0,
                           tol=opts.irrigation_tol, max_iter=opts.irrigation_max_iter,
                           moves=opts.irrigation_moves).cost
    return Candidate(mu, float(problem.payoff(mu)), float(cost), problem.c)


def initial_measure(problem, opts: SearchOptions) -> DiscreteMeasure:
    if opts.initial is not None:
        return opts.initial
    return DiscreteMeasure.from_arrays(problem.search_center()[None], [problem.kappa0])


def _propose(kind: str, mu: DiscreteMeasure, rng: np.random.Generator, sigma: float,
             max_atoms: int) -> Optional[DiscreteMeasure]:
    x, m = mu.positions.copy(), mu.masses.copy()
    n = len(m)
    if kind == "move":
        i = rng.integers(n)
        x[i] += rng.normal(0.0, sigma, x.shape[1])
    elif kind == "split":
        if n >= max_atoms:
            return None
        i = rng.integers(n)
        t = rng.uniform(0.2, 0.8)
        dx = rng.normal(0.0, sigma, x.shape[1])
        x = np.vstack([x, x[i] + dx])
        x[i] -= dx
        m = np.append(m, (1 - t) * m[i])
        m[i] *= t
    elif kind == "merge":
        if n < 2:
            return None
        i, j = sorted(rng.choice(n, 2, replace=False))
        x[i] = (m[i] * x[i] + m[j] * x[j]) / (m[i] + m[j])
        m[i] += m[j]
        x, m = np.delete(x, j, axis=0), np.delete(m, j)
    elif kind == "transfer":
        if n < 2:
            return None
        i, j = rng.choice(n, 2, replace=False)
        dm = rng.uniform(0.0, 0.5) * m[i]
        m[i] -= dm
        m[j] += dm
    else:
        raise ValueError(kind)
    if np.any(m <= 0):
        return None
    return DiscreteMeasure.from_arrays(x, m)


def _anneal(problem, budget: int, seed: int, opts: SearchOptions,
            observer: Optional[Callable[[Candidate], None]] = None) -> OptReport:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    mu0 = initial_measure(problem, opts)
    if not problem.feasible(mu0):
        raise ValueError("initial measure violates the search constraints")
    if abs(float(mu0.masses.sum()) - problem.kappa0) > MASS_TOL:
        raise ValueError("initial measure must carry exactly kappa0")
    def evaluate_fn(mu):
        cand = evaluate(problem, mu, opts)
        if observer is not None:
            observer(cand)
        return cand

    cur = evaluate_fn(mu0)
    init = best = cur
    trace = [best.objective]
    counts = {"evaluations": 1, "proposals": 0, "accepted": 0, "infeasible": 0,
              "rejected": 0, "solver_failures": 0}
    T0 = opts.temperature if opts.temperature is not None else 0.1 * problem.payoff_bound
    sigma0 = opts.step if opts.step is not None else 0.25 * problem.search_scale()
    kinds = opts.proposals
    cap = opts.max_proposals_factor * budget
    k = 0
    while counts["evaluations"] < budget and counts["proposals"] < cap:
        T = T0 * COOLING ** k
        sigma = sigma0 * max(math.sqrt(COOLING ** k), 1e-3)
        kind = kinds[int(rng.integers(len(kinds)))]
        prop = _propose(kind, cur.mu, rng, sigma, opts.max_atoms)
        u = rng.random()   # drawn every step so the stream does not depend on outcomes
        counts["proposals"] += 1
        k += 1
        if prop is None or not problem.feasible(prop) \
                or abs(float(prop.masses.sum()) - problem.kappa0) > MASS_TOL:
            counts["infeasible"] += 1
            continue
        counts["evaluations"] += 1
        try:
            cand = evaluate_fn(prop)
        except HarvestConvergenceError:
            counts["solver_failures"] += 1
            trace.append(best.objective)
            continue
        delta = cand.objective - cur.objective
        if delta >= 0 or (T > 0 and u < math.exp(delta / T)):
            cur = cand
            counts["accepted"] += 1
        else:
            counts["rejected"] += 1
        if cand.objective > best.objective:
            best = cand
        trace.append(best.objective)
    report = OptReport(best, init, tuple(trace), counts, int(seed), int(budget))
    return replace(report, certificates=tuple(certify(report, problem)))


def optimize_branches(problem: BranchProblem, budget: int, seed: int = 0,
                      opts: SearchOptions = SearchOptions(),
                      observer: Optional[Callable[[Candidate], None]] = None) -> OptReport:
    """Anneal over leaf measures confined to B(0, r0) and the closed box.

    ``budget`` counts objective evaluations, the initial one included.
    ``observer`` (optional) sees every evaluated candidate.
    """
    return _anneal(problem, budget, seed, opts, observer)


def optimize_roots(problem: RootProblem, budget: int, seed: int = 0,
                   opts: SearchOptions = SearchOptions(),
                   observer: Optional[Callable[[Candidate], None]] = None) -> OptReport:
    """Anneal over root measures in the closed box; PDE failures count as rejections."""
    return _anneal(problem, budget, seed, opts, observer)


def certify(report: OptReport, problem, tol: float = 1e-6) -> list[Certificate]:
    mu = report.best.mu
    x = mu.positions
    out = []
    if isinstance(problem, BranchProblem):
        r = np.linalg.norm(x, axis=1)
        inside = problem.domain.contains(x)
        rows = tuple({"x": p.tolist(), "radius": float(ri), "inside": bool(ok)}
                     for p, ri, ok in zip(x, r, inside & (r <= problem.r0)))
        ok = bool(np.all(inside) and np.all(r <= problem.r0))
        out.append(Certificate("support_radius", ok,
                               f"all atoms within r0 = {problem.r0:.6g} and the domain"
                               if ok else "atom outside B(0, r0) or the domain", rows))
    elif isinstance(problem, RootProblem):
        sol, _ = problem.solve(mu)
        u = sol.interpolate(x)
        thr = problem.c * problem.alpha * problem.kappa0 ** (problem.alpha - 1) \
            * np.linalg.norm(x, axis=1)
        good = u >= thr - tol
        rows = tuple({"x": p.tolist(), "u": float(ui), "threshold": float(ti), "passed": bool(g)}
                     for p, ui, ti, g in zip(x, u, thr, good))
        n_bad = int(np.sum(~good))
        out.append(Certificate(
            "necessary_condition", n_bad == 0,
            "u(x) >= c alpha kappa0^(alpha-1) |x| at every atom" if n_bad == 0 else
            f"{n_bad} atom(s) violate u(x) >= c alpha kappa0^(alpha-1) |x|; "
            "the returned measure is not a maximizer", rows))
        inside = problem.grid.domain.contains(x)
        out.append(Certificate("support_domain", bool(np.all(inside)),
                               "all atoms in the closed domain"))
    else:
        raise TypeError(f"unknown problem type {type(problem).__name__}")
    return out


def best_report(reports: Sequence[OptReport]) -> OptReport:
    """Reduce independent chains: best objective, lowest seed on ties."""
    return max(sorted(reports, key=lambda r: r.seed), key=lambda r: r.best.objective)
