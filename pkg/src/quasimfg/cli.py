"""Command line entry point: ``quasimfg run <config>`` and ``quasimfg list``.

Exit status is 0 on success, 2 when an experiment's checks fail and 1 on any
error (including an invalid config).
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_ERROR, EXIT_CHECK = 0, 1, 2


def list_experiments() -> str:
    from .experiments import REGISTRY

    width = max(len(k) for k in REGISTRY)
    return "\n".join(f"{name:<{width}}  {desc}" for name, (_, desc) in REGISTRY.items())


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__,
            "quasimfg": __version__}


def run(config_path, output_dir=None, seed=None) -> int:
    """Run one experiment; returns the exit status."""
    from .config import ConfigError, load_config
    from .experiments import REGISTRY
    from .output import write_json

    log = logging.getLogger("quasimfg")
    overrides = {} if seed is None else {"seed": seed}
    if output_dir is not None:
        overrides["output_dir"] = str(output_dir)
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as exc:
        print(f"{config_path}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = Path(cfg.output_dir) / cfg.experiment
    runner = REGISTRY[cfg.experiment][0]
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        log.info("running %s -> %s", cfg.experiment, out)
        summary = runner(cfg, out)
    except Exception as exc:  # reported, not re-raised: the exit code carries the outcome
        log.debug("experiment failed", exc_info=True)
        print(f"error: {cfg.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    wall = time.perf_counter() - start
    checks = summary.get("checks", {})
    passed = all(checks.values())
    summary.update(experiment=cfg.experiment, seed=cfg.seed, wall_time_s=wall, passed=passed)
    write_json(out / "summary.json", summary)
    meta = dict(_versions(), seed=cfg.seed, wall_time_s=round(wall, 3), passed=passed)
    (out / "manifest.toml").write_text(cfg.to_toml(meta), encoding="utf-8")
    for name, ok in checks.items():
        log.info("%s %s", "PASS" if ok else "FAIL", name)
    log.info("done in %.1f s", wall)
    return EXIT_OK if passed else EXIT_CHECK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quasimfg", description="Quasi-stationary mean field game experiments")
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config", help="flat TOML config (see quasimfg.config)")
    p_run.add_argument("--output-dir", help="override output_dir from the config")
    p_run.add_argument("--seed", type=int, help="override the seed from the config")
    p_run.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only report errors")
    sub.add_parser("list", help="list the registered experiments")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if args.command == "list":
        print(list_experiments())
        return EXIT_OK
    return run(args.config, args.output_dir, args.seed)


if __name__ == "__main__":
    sys.exit(main())
