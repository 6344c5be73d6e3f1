"""Command-line surface: dataset generation, evaluation, benchmarks, reports.

Exit codes: 0 success, 2 usage/config error, 3 data insufficiency,
4 numeric failure.

Every output file embeds a run manifest (command line, resolved config,
dataset checksums, tool version, per-stage wall-clock timings); ``nnfs
replay`` re-runs an evaluation from its manifest and verifies that the
per-episode scores reproduce exactly.
"""
from __future__ import annotations

import argparse
import gc
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .episodes import (
    METHODS,
    EpisodeConfig,
    EvalReport,
    compare_methods,
    markdown_table,
    run_evaluation,
    sample_episode,
    score_episode,
)
from .errors import (
    ConfigError,
    FormatError,
    InsufficientDataError,
    InvariantViolation,
    NnfsError,
    NumericError,
)
from .store import load_mean_vector, read_emb1
from .synthetic import SyntheticSpec, generate, write_dataset_dir

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INSUFFICIENT = 3
EXIT_NUMERIC = 4

BENCH_WARMUP_EPISODES = 10
BENCH_REPETITIONS = 9


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(argv, resolved: dict, checksums: dict, timings: dict) -> dict:
    return {
        "command_line": ["nnfs"] + list(argv),
        "resolved_config": resolved,
        "dataset_checksums": checksums,
        "tool_version": __version__,
        "timings": timings,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }


def _parse_preset(preset: str) -> tuple[int, int]:
    try:
        tag = preset.removeprefix("fs-")
        ways, shots = tag.split(".")
        return int(ways), int(shots)
    except ValueError as exc:
        raise ConfigError(
            f"bad preset {preset!r}; expected the form fs-<ways>.<shots>, "
            "e.g. fs-3.5 for 3-way-5-shot"
        ) from exc


def _default_threads() -> int:
    env = os.environ.get("NNFS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"NNFS_THREADS must be an integer, got {env!r}") from exc
    return 1


# ---------------------------------------------------------------- gen


def cmd_gen(args, argv) -> int:
    t0 = time.perf_counter()
    try:
        spec_dict = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read spec file {args.spec}: {exc}") from exc
    try:
        spec = SyntheticSpec.from_dict(spec_dict)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc
    data = generate(spec)
    t1 = time.perf_counter()
    out = Path(args.out)
    write_dataset_dir(data, out)
    t2 = time.perf_counter()

    checksums = {
        str(p.relative_to(out)): _sha256(p) for p in sorted(out.rglob("*.emb1"))
    }
    manifest = _manifest(
        argv,
        resolved={"spec": spec.to_dict(), "out": str(out)},
        checksums=checksums,
        timings={"generate_s": t1 - t0, "write_s": t2 - t1},
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote synthetic dataset to {out} ({len(checksums)} files)")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _load_eval_inputs(data_dir: Path, support_split: str, query_split: str):
    support_path = data_dir / f"{support_split}.emb1"
    query_path = data_dir / f"{query_split}.emb1"
    for p in (support_path, query_path):
        if not p.exists():
            raise ConfigError(f"dataset file not found: {p}")
    return read_emb1(support_path), read_emb1(query_path), support_path, query_path


def _run_eval_from_config(resolved: dict) -> list[EvalReport]:
    """Execute an evaluation run fully described by a resolved-config dict.

    This is the single entry point both `eval` and `replay` go through, so a
    manifest is sufficient to reproduce the score sequence.
    """
    data_dir = Path(resolved["data"])
    support, query, _, _ = _load_eval_inputs(
        data_dir, resolved["support_split"], resolved["query_split"]
    )
    m_s = None
    if resolved.get("mean"):
        m_s = load_mean_vector(Path(resolved["mean"]))
    config = EpisodeConfig.from_dict(resolved["episode_config"]).validate()
    methods = resolved["methods"]
    threads = int(resolved.get("threads", 1))
    return compare_methods(support, query, methods, m_s, config, threads=threads)


def _write_reports(path: Path, fmt: str, reports: list[EvalReport], manifest: dict):
    if fmt == "json":
        if len(reports) == 1:
            payload = reports[0].to_dict()
            payload["manifest"] = manifest
        else:
            payload = {"reports": [r.to_dict() for r in reports], "manifest": manifest}
        path.write_text(json.dumps(payload, indent=2) + "\n")
    elif fmt == "csv":
        lines = [
            "method,task,language,ways,shots,queries_per_class,episodes_run,"
            "base_seed,mean_accuracy,ci_half_width_95,wall_time_per_episode"
        ]
        for r in reports:
            c = r.config
            lines.append(
                f"{r.method},{r.task},{r.language},{c.ways},{c.shots},"
                f"{c.queries_per_class},{r.episodes_run},{c.base_seed},"
                f"{r.mean_accuracy!r},{r.ci_half_width_95!r},"
                f"{r.wall_time_per_episode!r}"
            )
        lines.append("# manifest: " + json.dumps(manifest))
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "md":
        body = markdown_table(reports)
        body += "\n\n<!-- manifest: " + json.dumps(manifest) + " -->\n"
        path.write_text(body)
    else:
        raise ConfigError(f"unknown format {fmt!r}; expected json, csv or md")


_EVAL_CONFIG_KEYS = (
    "data", "support_split", "query_split", "ways", "shots", "preset",
    "queries_per_class", "episodes", "seed", "ci_stop_threshold",
    "method", "mean", "format", "out", "threads",
)


def _eval_settings(args) -> dict:
    """Resolve eval options: explicit flags win over the JSON config file,
    which wins over built-in defaults."""
    from_file: dict = {}
    if args.config:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise ConfigError("config file must hold a JSON object of flag values")
        unknown = set(from_file) - set(_EVAL_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config file keys: {sorted(unknown)}")

    def pick(key, default=None):
        flag = getattr(args, key)
        if flag is not None:
            return flag
        return from_file.get(key, default)

    settings = {key: pick(key) for key in _EVAL_CONFIG_KEYS}
    settings["support_split"] = pick("support_split", "dev")
    settings["query_split"] = pick("query_split", "test")
    settings["queries_per_class"] = int(pick("queries_per_class", 15))
    settings["episodes"] = int(pick("episodes", 300))
    settings["seed"] = int(pick("seed", 42))
    settings["method"] = pick("method", "nn+norm+proto")
    settings["format"] = pick("format", "json")
    if settings["data"] is None:
        raise ConfigError("missing --data (or a 'data' entry in --config)")
    if settings["preset"]:
        p_ways, p_shots = _parse_preset(settings["preset"])
        settings["ways"] = p_ways if settings["ways"] is None else settings["ways"]
        settings["shots"] = p_shots if settings["shots"] is None else settings["shots"]
    settings["ways"] = int(settings["ways"]) if settings["ways"] is not None else 3
    settings["shots"] = int(settings["shots"]) if settings["shots"] is not None else 5
    return settings


def cmd_eval(args, argv) -> int:
    opts = _eval_settings(args)
    methods = list(METHODS) if opts["method"] == "all" else [opts["method"]]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {METHODS} or all")

    norm_methods = [m for m in methods if m in ("nn+norm", "nn+norm+proto")]
    if norm_methods and not opts["mean"]:
        raise ConfigError(
            f"method {norm_methods[0]!r} requires --mean (source mean vector file)"
        )

    config = EpisodeConfig(
        ways=opts["ways"],
        shots=opts["shots"],
        queries_per_class=opts["queries_per_class"],
        num_episodes=opts["episodes"],
        base_seed=opts["seed"],
        ci_stop_threshold=opts["ci_stop_threshold"],
    ).validate()

    threads = int(opts["threads"]) if opts["threads"] is not None else _default_threads()
    resolved = {
        "data": str(opts["data"]),
        "support_split": opts["support_split"],
        "query_split": opts["query_split"],
        "methods": methods,
        "episode_config": config.to_dict(),
        "mean": str(opts["mean"]) if opts["mean"] else None,
        "threads": threads,
        "format": opts["format"],
    }

    t0 = time.perf_counter()
    data_dir = Path(opts["data"])
    _, _, support_path, query_path = _load_eval_inputs(
        data_dir, opts["support_split"], opts["query_split"]
    )
    checksums = {
        str(support_path): _sha256(support_path),
        str(query_path): _sha256(query_path),
    }
    if opts["mean"]:
        checksums[str(opts["mean"])] = _sha256(Path(opts["mean"]))
    t1 = time.perf_counter()
    reports = _run_eval_from_config(resolved)
    t2 = time.perf_counter()

    manifest = _manifest(
        argv,
        resolved=resolved,
        checksums=checksums,
        timings={"load_s": t1 - t0, "evaluate_s": t2 - t1},
    )
    if opts["out"]:
        _write_reports(Path(opts["out"]), opts["format"], reports, manifest)
        print(f"wrote {len(reports)} report(s) to {opts['out']}")
    print(markdown_table(reports))
    return EXIT_OK


# ---------------------------------------------------------------- replay


def _read_report_file(path: Path) -> tuple[list[EvalReport], dict | None]:
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc
    if "reports" in payload:
        return [EvalReport.from_dict(r) for r in payload["reports"]], payload.get(
            "manifest"
        )
    report = EvalReport.from_dict(payload)
    return [report], payload.get("manifest")


def cmd_replay(args, argv) -> int:
    path = Path(args.report)
    originals, manifest = _read_report_file(path)
    if manifest is None:
        raise ConfigError(f"report {path} embeds no manifest; cannot replay")
    reports = _run_eval_from_config(manifest["resolved_config"])
    mismatches = 0
    for old, new in zip(originals, reports):
        same = old.per_episode_scores == new.per_episode_scores
        status = "reproduced" if same else "MISMATCH"
        mismatches += 0 if same else 1
        print(f"{old.method}: {status} ({new.episodes_run} episodes)")
    if args.out:
        new_manifest = _manifest(
            argv,
            resolved=manifest["resolved_config"],
            checksums=manifest.get("dataset_checksums", {}),
            timings={},
        )
        _write_reports(Path(args.out), "json", reports, new_manifest)
    if mismatches:
        raise NumericError(f"{mismatches} report(s) failed to reproduce")
    return EXIT_OK


# ---------------------------------------------------------------- bench


def _time_methods(support, query, methods, m_s, config, episodes: int) -> dict:
    """Median-of-repetitions per-episode wall time per method.

    Each episode's cost covers sampling, materialization and scoring. The
    methods are interleaved within every repetition so ambient machine noise
    hits all of them alike, and the per-method median is taken across
    repetitions.
    """

    def run_block(method: str, count: int) -> float:
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            start = time.perf_counter()
            for i in range(count):
                episode = sample_episode(support, query, config, i)
                score_episode(episode, support, query, method, m_s)
            return time.perf_counter() - start
        finally:
            if gc_was_enabled:
                gc.enable()

    for method in methods:
        run_block(method, BENCH_WARMUP_EPISODES)
    samples: dict[str, list[float]] = {m: [] for m in methods}
    for _ in range(BENCH_REPETITIONS):
        for method in methods:
            samples[method].append(run_block(method, episodes) / episodes)
    return {m: float(np.median(ts)) for m, ts in samples.items()}


def cmd_bench(args, argv) -> int:
    """Times the 2-way-5-shot protocol on dim-1024 synthetic data; reported
    multipliers (zero-shot = 1x) are stable across runs thanks to the
    interleaved median-of-runs protocol."""
    t0 = time.perf_counter()
    spec = SyntheticSpec(
        dim=args.dim,
        num_classes=2,
        class_separation=4.0,
        shift_vector_norm=4.0,
        per_split_counts=(256, args.pool, args.pool),
        noise_sigma=1.0,
        seed=args.seed,
    )
    data = generate(spec)
    support = data.target["dev"]
    query = data.target["test"]
    config = EpisodeConfig(
        ways=2, shots=5, queries_per_class=15,
        num_episodes=args.episodes, base_seed=args.seed,
    ).validate()
    t1 = time.perf_counter()

    seconds = _time_methods(
        support, query, METHODS, data.mean_src, config, args.episodes
    )
    t2 = time.perf_counter()

    base = seconds["zero-shot"]
    multipliers = {m: s / base for m, s in seconds.items()}
    resolved = {
        "dim": args.dim,
        "episodes": args.episodes,
        "pool": args.pool,
        "seed": args.seed,
        "repetitions": BENCH_REPETITIONS,
        "warmup_episodes": BENCH_WARMUP_EPISODES,
    }
    manifest = _manifest(
        argv,
        resolved=resolved,
        checksums={"synthetic_spec": json.dumps(spec.to_dict(), sort_keys=True)},
        timings={"generate_s": t1 - t0, "bench_s": t2 - t1},
    )
    payload = {
        "per_episode_seconds": seconds,
        "multipliers_vs_zero_shot": multipliers,
        "manifest": manifest,
    }
    lines = ["| method | s/episode | multiplier |", "|---|---|---|"]
    for m in METHODS:
        lines.append(f"| {m} | {seconds[m]:.6f} | {multipliers[m]:.2f}x |")
    table = "\n".join(lines)
    print(table)
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
        print(f"wrote benchmark to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- report


def cmd_report(args, argv) -> int:
    reports: list[EvalReport] = []
    checksums = {}
    for p in args.inputs:
        path = Path(p)
        batch, _ = _read_report_file(path)
        reports.extend(batch)
        checksums[str(path)] = _sha256(path)
    if not reports:
        raise ConfigError("no reports given")

    tasks = {r.task for r in reports}
    if len(tasks) > 1:
        raise ConfigError(f"cannot merge reports from different tasks: {sorted(tasks)}")
    warnings = []
    configs = {json.dumps(r.config.to_dict(), sort_keys=True) for r in reports}
    if len(configs) > 1:
        warnings.append("episode configs differ across merged reports")

    languages: list[str] = []
    methods: list[str] = []
    cells: dict[tuple[str, str], float] = {}
    for r in reports:
        if r.language not in languages:
            languages.append(r.language)
        if r.method not in methods:
            methods.append(r.method)
        if (r.method, r.language) in cells:
            warnings.append(f"duplicate report for ({r.method}, {r.language}); last wins")
        cells[(r.method, r.language)] = r.mean_accuracy

    header_lines = [f"task: {next(iter(tasks))}"]
    header_lines += [f"warning: {w}" for w in warnings]
    grid = [["method"] + languages + ["avg"]]
    for m in methods:
        row = [m]
        vals = []
        for lang in languages:
            v = cells.get((m, lang))
            row.append("" if v is None else f"{100 * v:.1f}")
            if v is not None:
                vals.append(v)
        row.append(f"{100 * float(np.mean(vals)):.1f}" if vals else "")
        grid.append(row)

    manifest = _manifest(argv, resolved={"inputs": list(args.inputs)},
                         checksums=checksums, timings={})
    if args.format == "csv":
        lines = [f"# {h}" for h in header_lines]
        lines += [",".join(row) for row in grid]
        lines.append("# manifest: " + json.dumps(manifest))
        text = "\n".join(lines) + "\n"
    else:
        lines = [f"> {h}" for h in header_lines] + [""]
        lines.append("| " + " | ".join(grid[0]) + " |")
        lines.append("|" + "---|" * len(grid[0]))
        lines += ["| " + " | ".join(row) + " |" for row in grid[1:]]
        lines.append("")
        lines.append("<!-- manifest: " + json.dumps(manifest) + " -->")
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote merged grid to {args.out}")
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nnfs",
        description="Nearest-neighbor few-shot inference and episodic "
        "evaluation on precomputed embedding datasets.",
    )
    parser.add_argument("--version", action="version", version=f"nnfs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="materialize a synthetic EMB1 dataset directory")
    g.add_argument("--spec", required=True, help="JSON file with generator parameters")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("eval", help="run episodic evaluation")
    e.add_argument("--data", default=None, help="directory with <split>.emb1 files")
    e.add_argument(
        "--config", default=None,
        help="JSON file mirroring the eval flags; explicit flags override it",
    )
    e.add_argument("--support-split", default=None)
    e.add_argument("--query-split", default=None)
    e.add_argument("--ways", type=int, default=None)
    e.add_argument("--shots", type=int, default=None)
    e.add_argument(
        "--preset", default=None,
        help="protocol preset like fs-3.5 (3-way-5-shot) or fs-2.5",
    )
    e.add_argument("--queries-per-class", type=int, default=None)
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--ci-stop-threshold", type=float, default=None)
    e.add_argument(
        "--method", default=None,
        help=f"one of {', '.join(METHODS)}, or all (default nn+norm+proto). "
        "head-ft is a linear probe on frozen features (lr 0.1, 300 epochs, "
        "full batch, zero init); the published fine-tuning rate targets a "
        "full LM and is not used here.",
    )
    e.add_argument("--mean", default=None, help="mean_src.emb1 file for norm methods")
    e.add_argument("--format", default=None, choices=(None, "json", "csv", "md"))
    e.add_argument("--out", default=None)
    e.add_argument(
        "--threads", type=int, default=None,
        help="episode workers; changes wall time only, never results "
        "(env NNFS_THREADS is the fallback)",
    )
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("replay", help="re-run an evaluation from its manifest")
    r.add_argument("report", help="report JSON produced by nnfs eval")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_replay)

    b = sub.add_parser("bench", help="per-episode timing comparison across methods")
    b.add_argument("--episodes", type=int, default=100)
    b.add_argument("--dim", type=int, default=1024)
    b.add_argument("--pool", type=int, default=3000,
                   help="rows per non-train split of the synthetic bench data")
    b.add_argument("--seed", type=int, default=7)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    m = sub.add_parser("report", help="merge per-language reports into a grid")
    m.add_argument("inputs", nargs="+", help="report JSON files")
    m.add_argument("--format", default="md", choices=("md", "csv"))
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, argv)
    except (ConfigError, InvariantViolation, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NnfsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
