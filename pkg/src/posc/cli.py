"""Command line: ``posc run CONFIG`` and ``posc replay TRACE``.

Exit status is 0 when every selected check passes, 1 when one fails and 2
for unusable input (bad config, malformed trace, unreadable file).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .harness import evaluate, run_scenario
from .scenario import CHECKS, ConfigError, ScenarioConfig, make_registry, parse_config
from .trace_io import TraceSchemaError, load_trace, write_trace

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def parse_seeds(text: str) -> list[int]:
    """``"7"`` or an inclusive range ``"0..199"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            a, b = int(lo), int(hi)
            if b < a:
                raise ValueError
            return list(range(a, b + 1))
        return [int(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; expected N or A..B") from None


def parse_checks(text: str) -> tuple[str, ...]:
    names = tuple(c.strip() for c in text.split(",") if c.strip())
    unknown = [c for c in names if c not in CHECKS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    return names


def config_for_seed(raw: dict, seed: int | None) -> ScenarioConfig:
    if seed is None:
        return parse_config(raw)
    if "generator" in raw:
        return parse_config({**raw, "seed": seed})
    return parse_config(raw).with_seed(seed)


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def run_one(raw: dict, seed: int | None, checks: tuple[str, ...] | None, out_dir: str) -> dict:
    """Run one seed, write its artifacts and return a summary row."""
    cfg = config_for_seed(raw, seed)
    if checks:
        cfg = replace(cfg, checks=checks)
    result = run_scenario(cfg)
    where = Path(out_dir) / str(cfg.seed)
    where.mkdir(parents=True, exist_ok=True)
    with open(where / "trace.jsonl", "w") as fh:
        write_trace(result.trace, cfg.to_json(), fh)
    _dump({"scenario": cfg.name, "seed": cfg.seed, "pass": result.passed, "verdicts": result.verdicts},
          where / "verdicts.json")
    _dump(result.complexity, where / "complexity.json")
    return {"seed": cfg.seed, "name": cfg.name, "pass": result.passed,
            "failed": sorted(k for k, v in result.verdicts.items() if not v["pass"])}


def cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"error: {args.config}: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_INPUT
    seeds = args.seeds if args.seeds is not None else ([args.seed] if args.seed is not None else [None])
    try:
        for s in seeds[:1]:
            config_for_seed(raw, s)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    scenario = raw.get("name") if isinstance(raw, dict) and isinstance(raw.get("name"), str) else Path(args.config).stem
    root = Path(os.environ.get("POSC_OUT") or args.out) / scenario
    try:
        root.mkdir(parents=True, exist_ok=True)
        if args.jobs > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(run_one, [raw] * len(seeds), seeds, [args.checks] * len(seeds),
                                     [str(root)] * len(seeds)))
        else:
            rows = [run_one(raw, s, args.checks, str(root)) for s in seeds]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EXIT_INPUT
    failed = [r for r in rows if not r["pass"]]
    _dump({"scenario": scenario, "runs": len(rows), "passed": len(rows) - len(failed),
           "failed": failed, "seeds": [r["seed"] for r in rows]}, root / "report.json")
    for r in rows:
        status = "PASS" if r["pass"] else "FAIL " + ",".join(r["failed"])
        print(f"{scenario} seed={r['seed']} {status}")
    print(f"{len(rows) - len(failed)}/{len(rows)} runs passed; artifacts in {root}")
    return EXIT_OK if not failed else EXIT_FAIL


def replay(path: str, checks: tuple[str, ...] | None = None) -> tuple[ScenarioConfig, dict]:
    """Re-run the checkers on a recorded trace without simulating."""
    cfg, trace = load_trace(path)
    selected = list(checks or cfg.checks)
    if trace.fragments and "execution" not in selected:
        selected.append("execution")
    return cfg, evaluate(cfg, trace, make_registry(cfg), selected)


def cmd_replay(args) -> int:
    try:
        cfg, verdicts = replay(args.trace, args.checks)
    except OSError as exc:
        print(f"error: cannot read {args.trace}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except TraceSchemaError as exc:
        print(f"error: {args.trace}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    ok = all(v["pass"] for v in verdicts.values())
    report = {"scenario": cfg.name, "seed": cfg.seed, "pass": ok, "verdicts": verdicts}
    text = json.dumps(report, indent=2, sort_keys=True, default=str)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="posc", description="Seeded consensus simulations and property checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate a scenario config and check it")
    r.add_argument("config")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int)
    g.add_argument("--seeds", type=parse_seeds, help="inclusive range A..B")
    r.add_argument("--out", default="out", help="output root (POSC_OUT overrides)")
    r.add_argument("--checks", type=parse_checks, help=f"comma list from {','.join(CHECKS)}")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)
    p = sub.add_parser("replay", help="re-check a recorded trace")
    p.add_argument("trace")
    p.add_argument("--checks", type=parse_checks)
    p.add_argument("--out", help="also write the verdict report here")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
