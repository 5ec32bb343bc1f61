"""Turn a validated ScenarioConfig into library objects, run it, write outputs."""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ScenarioConfig
from .harvest import (DomainGrid2D, MeasureCoefficient, ReactionSpec, harvest_flux_form,
                      harvest_value, solve)
from .io import StagedOutput, dumps_json, write_csv_rows
from .irrigation import irrigation_cost
from .measure import BoxDomain, DiscreteMeasure, GridDensity, rasterize
from .optimizer import (BranchProblem, RootProblem, SearchOptions, optimize_branches,
                        optimize_roots)
from .sunlight import IntensityModel, hemisphere_intensity, sunlight_per_direction
from .svg import render_svg

__all__ = ["RunManifest", "run_scenario", "build_branch_problem", "build_root_problem",
           "build_search_options", "versions"]


def versions() -> dict:
    import scipy
    return {"treeshape": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


@dataclass
class RunManifest:
    config: dict
    versions: dict
    wall_time_s: float
    outputs: list
    results: dict
    exit_code: int = 0
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"config": self.config, "versions": self.versions,
                "wall_time_s": self.wall_time_s, "outputs": self.outputs,
                "results": self.results, "exit_code": self.exit_code, "notes": self.notes}


# ---------------------------------------------------------------------------
# builders

def _box(spec) -> BoxDomain:
    return BoxDomain(tuple(spec["lower"]), tuple(spec["upper"]))


def _measure(spec, d: Optional[int] = None) -> DiscreteMeasure:
    if "d" not in spec:
        d = d or (len(spec["atoms"][0]["x"]) if spec["atoms"] else 2)
        spec = {**spec, "d": d}
    return DiscreteMeasure.from_json(spec)


def _density(spec, box: BoxDomain, res, base: Path) -> Optional[GridDensity]:
    if spec is None:
        return None
    if "constant" in spec:
        return GridDensity.constant(box, res, spec["constant"])
    if "measure" in spec:
        return rasterize(_measure(spec["measure"], box.d), box, res, spec["smear_radius"])
    text = (base / spec["csv"]).read_text()
    return GridDensity.from_csv({"domain": box.to_json(), "resolution": list(res)}, text)


def _light(spec, d: int) -> IntensityModel:
    if "hemisphere" in spec:
        eta = hemisphere_intensity(d, spec["hemisphere"])
    else:
        eta = IntensityModel(tuple(tuple(v) for v in spec["directions"]), tuple(spec["weights"]))
    scale = spec.get("scale", 1.0)
    return eta if scale == 1.0 else eta.scaled(scale)


def _grid2d(prob) -> DomainGrid2D:
    return DomainGrid2D(_box(prob["domain"]), tuple(prob["resolution"]),
                        tuple(prob.get("dirichlet_sides", ("left", "right", "bottom", "top"))))


def _reaction(spec) -> ReactionSpec:
    return ReactionSpec(np.asarray(spec["a"], dtype=float), spec["b"], spec["M"],
                        spec.get("family", "affine"))


def build_search_options(solver: dict, d: int = 2) -> SearchOptions:
    init = solver.get("initial")
    return SearchOptions(
        proposals=tuple(solver["proposals"]), max_atoms=solver["max_atoms"],
        initial=_measure(init, d) if init is not None else None,
        step=solver["step"], temperature=solver["temperature"],
        max_proposals_factor=solver["max_proposals_factor"],
        irrigation_tol=solver["irrigation_tol"],
        irrigation_max_iter=solver["irrigation_max_iter"],
        irrigation_moves=solver["irrigation_moves"])


def build_branch_problem(prob: dict, base: Path = Path(".")) -> BranchProblem:
    box = _box(prob["domain"])
    res = tuple(prob["resolution"])
    return BranchProblem(box, _light(prob["light"], box.d), prob["c"], prob["alpha"],
                         prob["kappa0"], prob["smear_radius"], res,
                         _density(prob.get("obstacle"), box, res, base))


def build_root_problem(prob: dict, solver: dict) -> RootProblem:
    return RootProblem(_grid2d(prob), _reaction(prob["reaction"]), prob["bc"], prob["c"],
                       prob["alpha"], prob["kappa0"], prob["smear_radius"],
                       tol=solver["pde_tol"], max_iter=solver["pde_max_iter"],
                       shift=solver["shift"])


# ---------------------------------------------------------------------------
# modes; each returns (result dict, staged files besides result.json)

def _run_sunlight(cfg: ScenarioConfig, base: Path, out: StagedOutput) -> dict:
    p = cfg.problem
    box = _box(p["domain"])
    res = tuple(p["resolution"])
    f = _density(p["density"], box, res, base)
    g = _density(p.get("obstacle"), box, res, base)
    eta = _light(p["light"], box.d)
    per = sunlight_per_direction(f, eta, g, p.get("pixel_width"))
    S = float(np.sum(np.asarray(eta.weights) * per))
    out.add("density.csv", f.to_csv())
    out.add_json("density.json", f.header_json())
    if box.d == 2:
        out.add("density.svg", render_svg(density=f, title="leaf density"))
    return {"S": S, "per_direction": [float(v) for v in per],
            "weights": list(eta.weights), "directions": [list(n.n) for n in eta.directions]}


def _run_irrigate(cfg: ScenarioConfig, base: Path, out: StagedOutput) -> dict:
    p, s = cfg.problem, cfg.solver
    mu = _measure(p["measure"])
    r = irrigation_cost(mu, p["alpha"], mode=s["mode"], seed=cfg.seed, tol=s["tol"],
                        max_iter=s["max_iter"], moves=s["moves"])
    if mu.d == 2:
        out.add("tree.svg", render_svg(tree=r.tree, alpha=p["alpha"], title="irrigation tree"))
    return {"cost": r.cost, "lower_bound": r.lower_bound, "mode": r.mode,
            "topologies": r.topologies, "certified_optimal": r.mode == "exhaustive",
            "tree": r.tree.to_json(p["alpha"])}


def _run_harvest(cfg: ScenarioConfig, base: Path, out: StagedOutput) -> dict:
    p, s = cfg.problem, cfg.solver
    grid = _grid2d(p)
    reaction = _reaction(p["reaction"])
    roots = _density(p.get("roots"), grid.domain, grid.resolution, base)
    coef = MeasureCoefficient(roots) if roots is not None else MeasureCoefficient.zero(grid)
    sol = solve(grid, reaction, coef, p["bc"], s["tol"], s["max_iter"], shift=s["shift"])
    out.add("u.csv", sol.to_csv())
    out.add_json("u.json", sol.header_json())
    return {"H": harvest_value(sol, coef), "H_flux_form": harvest_flux_form(sol, reaction),
            "iterations": sol.iterations, "residual": sol.residual,
            "u_min": float(sol.u.min()), "u_max": float(sol.u.max())}


def _opt_outputs(report, problem, out: StagedOutput, density: Optional[GridDensity], alpha: float):
    best = report.best.mu
    out.add_json("best_measure.json", best.to_json())
    out.add("trace.csv", write_csv_rows(["evaluation", "best_objective"],
                                        [(k, v) for k, v in enumerate(report.trace)]))
    if best.d == 2:
        tree = irrigation_cost(best, alpha, mode="heuristic", seed=0).tree
        out.add("overlay.svg", render_svg(tree=tree, density=density, alpha=alpha,
                                          measure=best, title="best measure"))


def _run_branches(cfg: ScenarioConfig, base: Path, out: StagedOutput) -> dict:
    problem = build_branch_problem(cfg.problem, base)
    opts = build_search_options(cfg.solver, problem.d)
    report = optimize_branches(problem, cfg.solver["budget"], cfg.seed, opts)
    dens = rasterize(report.best.mu, problem.domain, problem.resolution, problem.smear_radius) \
        if problem.d == 2 else None
    _opt_outputs(report, problem, out, dens, problem.alpha)
    return {"problem": problem.to_json(), "report": report.to_json(),
            "objective_bound": problem.payoff_bound}


def _run_roots(cfg: ScenarioConfig, base: Path, out: StagedOutput) -> dict:
    problem = build_root_problem(cfg.problem, cfg.solver)
    opts = build_search_options(cfg.solver, 2)
    report = optimize_roots(problem, cfg.solver["budget"], cfg.seed, opts)
    sol, coef = problem.solve(report.best.mu)
    out.add("u.csv", sol.to_csv())
    out.add_json("u.json", sol.header_json())
    _opt_outputs(report, problem, out, coef.h_density, problem.alpha)
    return {"problem": problem.to_json(), "report": report.to_json(),
            "objective_bound": problem.payoff_bound}


def _run_selftest(cfg: ScenarioConfig, base: Path, out: StagedOutput) -> dict:
    from .selftest import run_selftest
    return run_selftest(quick=cfg.solver.get("quick", False))


_RUNNERS = {"sunlight": _run_sunlight, "irrigate": _run_irrigate, "harvest": _run_harvest,
            "optimize-branches": _run_branches, "optimize-roots": _run_roots,
            "selftest": _run_selftest}

_KEY_SCALARS = {"sunlight": ("S",), "irrigate": ("cost", "lower_bound"),
                "harvest": ("H", "H_flux_form", "iterations", "residual"),
                "selftest": ("passed", "failed")}


def _scalars(mode: str, result: dict) -> dict:
    if mode.startswith("optimize"):
        rep = result["report"]
        return {"best_objective": rep["best"]["objective"], "payoff": rep["best"]["payoff"],
                "cost": rep["best"]["cost"], "atoms": len(rep["best"]["measure"]["atoms"]),
                "evaluations": rep["counts"]["evaluations"],
                "certificates_passed": all(c["passed"] for c in rep["certificates"])}
    return {k: result[k] for k in _KEY_SCALARS[mode]}


def run_scenario(cfg: ScenarioConfig, base_dir=".", output_dir=None) -> tuple[RunManifest, dict]:
    """Run one scenario and write its outputs; returns (manifest, result).

    result.json holds only deterministic content; timing and versions go
    to manifest.json, which is written last.  Solver exceptions propagate
    before anything is written.
    """
    t0 = time.perf_counter()
    base = Path(base_dir)
    out = StagedOutput(Path(output_dir or cfg.output_dir))
    result = _RUNNERS[cfg.mode](cfg, base, out)
    out.add_json("result.json", result)
    out.add_json("config.json", cfg.to_json())
    code = 0 if cfg.mode != "selftest" or result["failed"] == 0 else 1
    manifest = RunManifest(cfg.to_json(), versions(), 0.0, out.names + ["manifest.json"],
                           _scalars(cfg.mode, result), code)
    manifest.wall_time_s = round(time.perf_counter() - t0, 6)
    out.add("manifest.json", dumps_json(manifest.to_json()))
    out.commit(last=["manifest.json"])
    return manifest, result
