"""In-package property checks behind ``treeshape selftest``.

Each check is small, seeded and returns (passed, detail).  The full test
suite lives in tests/; this one ships with the package so an installed
copy can verify itself.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .harvest import (DomainGrid2D, MeasureCoefficient, ReactionSpec, harvest_flux_form,
                      harvest_value, solve, verify_comparison)
from .irrigation import irrigation_cost, lower_bound
from .measure import BoxDomain, DiscreteMeasure, GridDensity, add, rasterize, total_mass
from .optimizer import support_radius
from .sunlight import (Direction, hemisphere_intensity, sunlight_directional,
                       sunlight_with_obstacle)
from .svg import render_svg

__all__ = ["CHECKS", "run_selftest"]

UNIT = BoxDomain((0.0, 0.0), (1.0, 1.0))


def _random_density(rng, res=16, scale=2.0):
    return GridDensity(UNIT, rng.uniform(0, scale, (res, res)) * (rng.uniform(size=(res, res)) < 0.6))


def _random_direction(rng):
    t = rng.uniform(0, 2 * math.pi)
    return Direction((math.cos(t), math.sin(t)))


def check_sunlight_closed_forms(rng, quick):
    f = GridDensity.constant(UNIT, (40, 40), 1.0)
    down = Direction((0.0, 1.0))
    e1 = abs(sunlight_directional(f, down) - (1 - math.exp(-1)))
    e2 = abs(sunlight_with_obstacle(f, f, down) - 0.5 * (1 - math.exp(-2)))
    return max(e1, e2) <= 1e-3, f"errors {e1:.2e}, {e2:.2e}"


def check_sunlight_bounds(rng, quick):
    worst = 0.0
    for _ in range(3 if quick else 10):
        f1, f2, n = _random_density(rng), _random_density(rng), _random_direction(rng)
        s1, s2, s12 = (sunlight_directional(g, n) for g in (f1, f2, add(f1, f2)))
        worst = max(worst, s1 - total_mass(f1), s1 - s12, s12 - s1 - s2,
                    sunlight_with_obstacle(f1, f2, n) - s1)
    return worst <= 1e-6, f"largest violation {worst:.2e}"


def check_irrigation_alpha_one(rng, quick):
    worst = 0.0
    for _ in range(3 if quick else 8):
        n = int(rng.integers(1, 5))
        mu = DiscreteMeasure.from_arrays(rng.uniform(-1, 1, (n, 2)), rng.uniform(0.1, 1, n))
        exact = float(np.sum(mu.masses * np.linalg.norm(mu.positions, axis=1)))
        worst = max(worst, abs(irrigation_cost(mu, 1.0).cost - exact))
    return worst <= 1e-6, f"largest error {worst:.2e}"


def check_irrigation_fixture(rng, quick):
    mu = DiscreteMeasure.from_arrays([[1.0, 0.5], [1.0, -0.5]], [0.5, 0.5])
    r = irrigation_cost(mu, 0.5)
    s = r.tree.tree.positions[[i for i, k in enumerate(r.tree.tree.kinds) if k == "steiner"][0]]
    err = abs(r.cost - 1.5)
    return err <= 1e-4 and np.linalg.norm(s - [0.5, 0.0]) <= 1e-3, \
        f"cost {r.cost:.8f}, junction {s.round(6).tolist()}"


def check_irrigation_bounds(rng, quick):
    worst = 0.0
    for _ in range(3 if quick else 8):
        a = float(rng.uniform(0.2, 1.0))
        m1 = DiscreteMeasure.from_arrays(rng.uniform(-1, 1, (2, 2)), rng.uniform(0.1, 1, 2))
        m2 = DiscreteMeasure.from_arrays(rng.uniform(-1, 1, (2, 2)), rng.uniform(0.1, 1, 2))
        c1, c2, c12 = (irrigation_cost(m, a).cost for m in (m1, m2, add(m1, m2)))
        worst = max(worst, lower_bound(add(m1, m2), a) - c12, c1 - c12, c12 - c1 - c2)
    return worst <= 1e-6, f"largest violation {worst:.2e}"


def check_harvest_constant(rng, quick):
    g = DomainGrid2D.unit_square(16)
    coef = MeasureCoefficient(g.cell_density(1.0))
    sol = solve(g, ReactionSpec(1.0, 1.0, 1.0), coef, tol=1e-10)
    err = float(np.max(np.abs(sol.u - 0.5)))
    h = harvest_value(sol, coef)
    return err <= 1e-10 and abs(h - 0.5) <= 1e-9, f"u error {err:.2e}, H = {h:.12f}"


def check_harvest_identities(rng, quick):
    g = DomainGrid2D.unit_square(16)
    tol = 1e-9
    worst_flux, worst_cmp = 0.0, 0.0
    for _ in range(2 if quick else 5):
        reaction = ReactionSpec(rng.uniform(0, 1, g.shape), 1.0, 1.0)
        big = MeasureCoefficient(g.cell_density(rng.uniform(0, 5, g.resolution)))
        small = MeasureCoefficient(g.cell_density(big.h_density.cells * rng.uniform(0, 1, g.resolution)))
        rep = verify_comparison(g, reaction, small, big, "neumann", tol)
        worst_cmp = max(worst_cmp, rep.max_violation)
        s = rep.big
        worst_flux = max(worst_flux, abs(harvest_value(s, big) - harvest_flux_form(s, reaction)))
    return worst_flux <= 10 * tol and worst_cmp <= 10 * tol, \
        f"|HF1 - HF2| {worst_flux:.2e}, comparison violation {worst_cmp:.2e}"


def check_rasterize_mass(rng, quick):
    mu = DiscreteMeasure.from_arrays(rng.uniform(0, 1, (5, 2)), rng.uniform(0.1, 1, 5))
    f = rasterize(mu, UNIT, (32, 32), 0.1)
    err = abs(total_mass(f) - total_mass(mu)) / total_mass(mu)
    return err <= 1e-9, f"relative mass error {err:.2e}"


def check_support_radius(rng, quick):
    v1 = support_radius(1.0, 1.0, 2.0, 1.0)
    v2 = support_radius(2.0, 0.5, 1.0, math.pi ** 2)
    w = sum(hemisphere_intensity(2, 180).weights)
    ok = abs(v1 - 0.5) < 1e-15 and abs(v2 - 2 * math.sqrt(2) * math.pi ** 2) < 1e-12 \
        and abs(w - math.pi ** 2) < 1e-9
    return ok, f"r0 = {v1}, {v2:.6f}; hemisphere weight {w:.12f}"


def check_svg(rng, quick):
    mu = DiscreteMeasure.from_arrays([[1.0, 0.5], [1.0, -0.5]], [0.5, 0.5])
    tree = irrigation_cost(mu, 0.5).tree
    a, b = render_svg(tree=tree, alpha=0.5), render_svg(tree=tree, alpha=0.5)
    return a == b and a.count("<line") == 3, f"{a.count('<line')} edges drawn"


CHECKS: list[tuple[str, Callable]] = [
    ("sunlight closed forms", check_sunlight_closed_forms),
    ("sunlight bounds and monotonicity", check_sunlight_bounds),
    ("irrigation alpha = 1 straight lines", check_irrigation_alpha_one),
    ("irrigation two-atom fixture", check_irrigation_fixture),
    ("irrigation lower bound and subadditivity", check_irrigation_bounds),
    ("harvest constant solution", check_harvest_constant),
    ("harvest flux identity and comparison", check_harvest_identities),
    ("rasterize conserves mass", check_rasterize_mass),
    ("support radius and hemisphere weights", check_support_radius),
    ("svg determinism", check_svg),
]


def run_selftest(quick: bool = False, seed: int = 20240611) -> dict:
    rng = np.random.default_rng(seed)
    rows = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn(rng, quick)
        except Exception as exc:   # a crash is a failed check, not a crashed run
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append({"name": name, "passed": bool(ok), "detail": detail})
    passed = sum(r["passed"] for r in rows)
    return {"passed": passed, "failed": len(rows) - passed, "checks": rows}
