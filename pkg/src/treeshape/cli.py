"""Command line entry point.

    treeshape MODE [--config FILE] [--seed N] [--out DIR]

Exit codes: 0 success, 1 selftest failures or unexpected errors,
2 invalid configuration, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import MODES, ConfigError, ConfigIssue, parse_config_data
from .harvest import HarvestConvergenceError
from .io import dumps_json

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treeshape", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="mode", required=True, metavar="MODE")
    for mode in MODES:
        s = sub.add_parser(mode, help=f"run a {mode} scenario")
        s.add_argument("--config", type=Path, required=mode != "selftest",
                       help="scenario JSON file")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", type=Path, help="override the output directory")
        if mode == "selftest":
            s.add_argument("--quick", action="store_true", help="fewer random instances")
    return p


def _summary(mode: str, result: dict) -> dict:
    if mode == "sunlight":
        return {"S": result["S"], "per_direction": result["per_direction"]}
    if mode == "irrigate":
        return {"cost": result["cost"], "tree": result["tree"]}
    if mode == "harvest":
        return {k: result[k] for k in ("H", "H_flux_form", "iterations", "residual")}
    if mode == "selftest":
        return result
    best = result["report"]["best"]
    return {"objective": best["objective"], "payoff": best["payoff"], "cost": best["cost"],
            "measure": best["measure"],
            "certificates": [{"name": c["name"], "passed": c["passed"]}
                             for c in result["report"]["certificates"]]}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    base = Path(".")
    try:
        if args.config is not None:
            data = _load(args.config)
            base = args.config.resolve().parent
        else:
            data = {"mode": args.mode}
        if args.seed is not None:
            data["seed"] = args.seed
        if getattr(args, "quick", False):
            data.setdefault("solver", {})["quick"] = True
        cfg = parse_config_data(data, args.mode)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG

    from .scenario import run_scenario   # heavy imports only after validation
    try:
        manifest, result = run_scenario(cfg, base_dir=base, output_dir=args.out)
    except HarvestConvergenceError as exc:
        print(f"solver did not converge: {exc} (residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        # problems only detectable once objects are built (e.g. an unreadable CSV)
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(dumps_json(_summary(cfg.mode, result)))
    return manifest.exit_code


def _load(path: Path) -> dict:
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError([ConfigIssue("", f"cannot read {path}: {exc.strerror}")]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([ConfigIssue("", f"{path} is not valid JSON: {exc}")]) from exc
    if not isinstance(data, dict):
        raise ConfigError([ConfigIssue("", "config must be a JSON object")])
    return data


if __name__ == "__main__":
    sys.exit(main())
