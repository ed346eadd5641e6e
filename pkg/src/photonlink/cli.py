"""``photonlink`` command line: run scenario configs and named recipes."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import scenarios
from .config import load_config
from .exceptions import ConditioningError, ConfigError, PhotonLinkError, ReconstructionError
from .io import write_json

RECIPE_DIR = Path(__file__).parent / "recipes"

EXIT_OK, EXIT_CONFIG, EXIT_SIMULATION, EXIT_RECONSTRUCTION = 0, 2, 3, 4


def recipe_path(name: str) -> Path | None:
    p = RECIPE_DIR / f"{name}.yaml"
    return p if p.is_file() else None


def list_recipes() -> list[tuple[str, str]]:
    out = []
    for p in sorted(RECIPE_DIR.glob("*.yaml")):
        data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        out.append((p.stem, str(data.get("description", "")).strip()))
    return out


def resolve(target: str) -> Path:
    p = Path(target)
    if p.is_file():
        return p
    r = recipe_path(target)
    if r is None:
        raise ConfigError(f"{target!r} is neither a readable config file nor a recipe name")
    return r


def write_manifest(out: Path, started: float, elapsed: float) -> Path:
    files = []
    for f in sorted(out.rglob("*")):
        if f.is_file() and f.name != "manifest.json":
            data = f.read_bytes()
            files.append({"path": f.relative_to(out).as_posix(), "bytes": len(data),
                          "sha256": hashlib.sha256(data).hexdigest()})
    created = datetime.fromtimestamp(started, timezone.utc).isoformat(timespec="seconds")
    return write_json(out / "manifest.json", {"created": created, "elapsed_s": round(elapsed, 3), "files": files})


def cmd_run(args) -> int:
    cfg = load_config(resolve(args.config), args.set, args.output_dir)
    started = time.time()
    t0 = time.perf_counter()
    results = scenarios.run(cfg, args.workers)
    out = Path(cfg.output_dir)
    scenarios.write_summary(cfg, results, out)
    write_manifest(out, started, time.perf_counter() - t0)
    print(f"{cfg.kind}: wrote {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(resolve(args.config), args.set)
    print(f"ok: {cfg.kind} scenario, output_dir={cfg.output_dir}")
    return EXIT_OK


def cmd_recipes(args) -> int:
    rows = list_recipes()
    width = max((len(n) for n, _ in rows), default=0)
    for name, desc in rows:
        print(f"{name:<{width}}  {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="photonlink", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config or a named recipe")
    run.add_argument("config", help="path to a YAML config, or a recipe name")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config value, e.g. scenario.repeats=3 (repeatable)")
    run.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    run.add_argument("--output-dir", type=Path, default=None)
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="parse and check a config without running it")
    val.add_argument("config")
    val.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    val.set_defaults(func=cmd_validate)

    rec = sub.add_parser("recipes", help="list the shipped recipes")
    rec.set_defaults(func=cmd_recipes)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReconstructionError, ConditioningError) as exc:
        print(f"reconstruction failed: {exc}", file=sys.stderr)
        return EXIT_RECONSTRUCTION
    except (PhotonLinkError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"simulation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
