"""Command-line runner: ``sdbridge validate|run|sweep|calibrate``.

Exit codes: 0 ok, 1 validation error, 2 runtime contract violation, 3 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import scenario as sc
from .errors import ConfigError, ContractViolation, Unreachable
from .metrics import RunMetrics, merge_csv

EXIT_OK, EXIT_INVALID, EXIT_CONTRACT, EXIT_IO = 0, 1, 2, 3
OUT_ENV = "SDBRIDGE_OUT"
_DURATION = re.compile(r"([0-9.eE+-]+)\s*(ns|us|ms|s)?")
_TO_US = {"ns": 1e-3, "us": 1.0, "ms": 1e3, "s": 1e6}


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def parse_duration_us(text: str) -> float:
    """``"200"`` (µs), ``"50us"``, ``"2ms"`` ... to microseconds."""
    m = _DURATION.fullmatch(text.strip())
    if not m:
        raise ConfigError(f"bad duration {text!r}")
    v = float(m.group(1)) * _TO_US[m.group(2) or "us"]
    if not v > 0:
        raise ConfigError(f"duration must be > 0, got {text!r}")
    return v


def _resolve(path: str) -> str:
    """A file path, or the name of a shipped scenario."""
    if os.path.exists(path) or path.endswith(".json"):
        return path
    return sc.shipped(path)


def _load(path: str) -> tuple[str, dict]:
    path = _resolve(path)
    try:
        return path, sc.load(path)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise _Fail(EXIT_INVALID, f"{path}: not valid JSON: {exc}") from None


def _prepare(args, path: str, doc: dict) -> dict:
    doc = copy.deepcopy(doc)
    try:
        for a in getattr(args, "set", None) or []:
            sc.apply_override(doc, a)
        if getattr(args, "seed", None) is not None:
            doc["seed"] = args.seed
        if getattr(args, "duration", None) is not None:
            doc["duration_us"] = parse_duration_us(args.duration)
    except (ConfigError, ValueError, IndexError) as exc:
        raise _Fail(EXIT_INVALID, f"{path}: {exc}") from None
    _check(path, doc)
    return doc


def _check(path: str, doc: dict) -> None:
    diags = sc.validate(doc, path)
    if diags:
        raise _Fail(EXIT_INVALID, "\n".join(str(d) for d in diags))


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "results")


def _run_dir(args, name: str, seed: int) -> Path:
    leaf = f"seed-{seed}" if args.deterministic_paths else time.strftime("%Y%m%dT%H%M%S")
    return _out_root(args) / name / leaf


def _write(outdir: Path, files: dict[str, str]) -> None:
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        for fname, text in files.items():
            with open(outdir / fname, "w", newline="") as fh:
                fh.write(text)
    except OSError as exc:
        raise _Fail(EXIT_IO, str(exc)) from None


def _execute(doc: dict, seed: int, label: str) -> tuple[RunMetrics, list[str]]:
    lines: list[str] = []
    metrics = sc.run(doc, seed=seed, label=label, log=lines.append)
    return metrics, lines


def _sweep_job(job):
    label, doc, seed = job
    try:
        return _execute(doc, seed, label)
    except ContractViolation as exc:
        return None, [f"{label}: {exc.contract}: {exc}"]


# commands ----------------------------------------------------------------

def cmd_validate(args) -> int:
    path, doc = _load(args.file)
    _check(path, doc)
    print(f"{path}: ok")
    return EXIT_OK


def cmd_run(args) -> int:
    path, doc = _load(args.file)
    doc = _prepare(args, path, doc)
    seed = doc.get("seed", 0)
    metrics, lines = _execute(doc, seed, doc["name"])
    for line in lines:
        print(line)
    outdir = _run_dir(args, doc["name"], seed)
    _write(outdir, {"results.csv": metrics.to_csv(), "results.json": metrics.to_json(),
                    "run.log": "".join(line + "\n" for line in lines)})
    print(f"wrote {outdir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    path, doc = _load(args.file)
    doc = _prepare(args, path, doc)
    try:
        axes = [sc.parse_axis(a) for a in args.axis or []]
    except ConfigError as exc:
        raise _Fail(EXIT_INVALID, str(exc)) from None
    jobs = list(sc.sweep_points(doc, axes))
    for label, d, _ in jobs:
        _check(f"{path} {label}", d)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    lines = [line for _, ls in results for line in ls]
    for line in lines:
        print(line)
    failed = [ls[-1] for m, ls in results if m is None]
    # jobs are in axis-product order, so the merge does not depend on scheduling
    done = [m for m, _ in results if m is not None]
    outdir = _run_dir(args, doc["name"], doc.get("seed", 0))
    merged = RunMetrics(doc["name"], doc.get("seed", 0))
    for m in done:
        merged.rows.extend(m.rows)
        merged.histograms.update(m.histograms)
        merged.counters.update(m.counters)
    _write(outdir, {"results.csv": merge_csv(done), "results.json": merged.to_json(),
                    "run.log": "".join(line + "\n" for line in lines)})
    print(f"wrote {outdir} ({len(done)} of {len(jobs)} points)")
    if failed:
        raise _Fail(EXIT_CONTRACT, "\n".join(failed))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    path, doc = _load(args.file)
    doc = _prepare(args, path, doc)
    tgt = dict(doc.get("calibrate") or {})
    try:
        for t in args.target or []:
            key, _, value = t.partition("=")
            if not _:
                raise ConfigError(f"target {t!r} is not key=value")
            tgt[key.strip()] = float(value)
    except ValueError as exc:
        raise _Fail(EXIT_INVALID, str(exc)) from None
    if "local_copy_mibs" not in tgt:
        raise _Fail(EXIT_INVALID, f"{path}: no local_copy_mibs target (use --target local_copy_mibs=...)")
    try:
        cal = sc.run_calibration(doc, tgt, log=print)
    except Unreachable as exc:
        raise _Fail(EXIT_INVALID, f"unreachable target: {exc}") from None
    text = json.dumps({"calibration": {"slave_latency_ns": cal.slave_latency_ns,
                                       "port_bandwidth_mibs": cal.port_bandwidth_mibs,
                                       "flop_ns": cal.flop_ns, "window": cal.window}},
                      sort_keys=True, indent=2) + "\n"
    print(text, end="")
    if args.out:
        _write(Path(args.out), {"calibration.json": text})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdbridge", description="Software-defined memory bridge simulator")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("file", help="scenario path or shipped name (e.g. dredbox-2node)")
    v.set_defaults(func=cmd_validate)

    def common(q):
        q.add_argument("file", help="scenario path or shipped name (e.g. dredbox-2node)")
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--duration", default=None, help="simulated time per point, e.g. 100us or 2ms")
        q.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a scenario field (dotted path, '*' for every list element)")

    def output(q):
        q.add_argument("--out", default=None, help=f"output root (default ${OUT_ENV} or ./results)")
        q.add_argument("--deterministic-paths", action="store_true",
                       help="name the run directory by seed instead of timestamp")

    r = sub.add_parser("run", help="execute a scenario")
    common(r)
    output(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run the Cartesian product of axis values")
    common(s)
    output(s)
    s.add_argument("--axis", action="append", metavar="KEY=V1,V2",
                   help="axis: cores, placement, kernel, link_rate, rate_limit or a dotted path")
    s.add_argument("--jobs", type=int, default=1, help="parallel sub-runs")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("calibrate", help="fit calibration constants to local targets")
    common(c)
    c.add_argument("--target", action="append", metavar="KEY=VALUE",
                   help="local_copy_mibs or local_scale_mibs")
    c.add_argument("--out", default=None, help="directory for calibration.json")
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except ContractViolation as exc:
        print(f"contract violated ({exc.contract}): {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
