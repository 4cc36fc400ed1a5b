"""Benchmark CLI: desk-scale experiment runs, sweeps, checks, and reports.

Experiments run the cluster harness with a generated workload through a
warm-up phase and a measurement phase (or a fixed batch count), averaging
over trials, and append one CSV row per configuration with throughput,
client latency percentiles, per-phase batch timings, and replication payload
sizes. ``sweep`` repeats that across one parameter's values, ``check`` runs
the property suites on small instances, and ``report`` renders tables and
line charts from a CSV.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import random
import statistics
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

from .cluster import (
    BatchTimings,
    ClusterConfig,
    ClusterHarness,
    ReplBackend,
    ReplMode,
    RunResult,
    SyncGranularity,
    TransportKind,
    latency_decompose,
)
from .core import TxnStatus, ValidationError
from .workload import WorkloadConfig

CSV_COLUMNS_FIXED = [
    "tput_tps",
    "p50_ms",
    "p99_ms",
    "t_pl_ms",
    "t_deliv_ms",
    "t_ex_ms",
    "t_repl_ms",
    "t_c_ms",
    "payload_raw_bytes",
    "payload_comp_bytes",
    "committed",
    "aborted",
]

_ENUM_FIELDS = {
    "sync_granularity": SyncGranularity,
    "repl_mode": ReplMode,
    "repl_backend": ReplBackend,
    "transport": TransportKind,
}


class ConfigError(ValueError):
    """A config file or override names an unknown key or a bad value."""


def default_bench_params() -> dict:
    return {"warmup_s": 5.0, "measure_s": 10.0, "trials": 3, "num_batches": 0}


def desk_defaults() -> tuple[ClusterConfig, WorkloadConfig, dict]:
    """Desk-scale defaults: trends, not the paper-scale absolute numbers."""
    cluster = ClusterConfig(
        partitions=4,
        rf=1,
        planners=1,
        executors=2,
        batch_size=2000,
        plan_timeout_s=5.0,
        retain_batches=False,
        records_per_partition=10_000,
    )
    workload = WorkloadConfig()
    return cluster, workload, default_bench_params()


def _coerce(section: str, key: str, value: str, current) -> object:
    if key in _ENUM_FIELDS:
        try:
            return _ENUM_FIELDS[key](value.upper())
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: unknown value {value!r}") from exc
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")
    if current is None or isinstance(current, int):
        try:
            return int(value)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}") from exc
    if isinstance(current, float):
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}") from exc
    return value


class BenchSpec:
    """Cluster, workload, and bench-phase parameters for one experiment."""

    def __init__(
        self,
        cluster: ClusterConfig | None = None,
        workload: WorkloadConfig | None = None,
        bench: dict | None = None,
    ) -> None:
        d_cluster, d_workload, d_bench = desk_defaults()
        self.cluster = cluster or d_cluster
        self.workload = workload or d_workload
        self.bench = dict(d_bench)
        if bench:
            self.bench.update(bench)

    def apply(self, section: str, key: str, raw: str) -> None:
        if section in ("cluster", "") and hasattr(self.cluster, key):
            setattr(self.cluster, key, _coerce("cluster", key, raw, getattr(self.cluster, key)))
        elif section in ("workload", "") and key in {f.name for f in dataclass_fields(WorkloadConfig)}:
            kwargs = {f.name: getattr(self.workload, f.name) for f in dataclass_fields(WorkloadConfig)}
            kwargs[key] = _coerce("workload", key, raw, kwargs[key])
            self.workload = WorkloadConfig(**kwargs)
        elif section in ("bench", "") and key in self.bench:
            self.bench[key] = _coerce("bench", key, raw, self.bench[key])
        else:
            raise ConfigError(f"unknown config key: [{section or '?'}] {key}")

    def sync(self) -> None:
        """Keep shared cluster/workload fields consistent."""
        self.cluster.records_per_partition = self.workload.records_per_partition
        self.cluster.record_size = self.workload.record_size
        self.cluster.validate()
        self.workload.validate(self.cluster.partitions)

    def flat(self) -> dict:
        row: dict = {}
        for f in dataclass_fields(ClusterConfig):
            value = getattr(self.cluster, f.name)
            row[f.name] = value.value if hasattr(value, "value") else value
        for f in dataclass_fields(WorkloadConfig):
            row[f.name] = getattr(self.workload, f.name)
        row.update(self.bench)
        return row

    def config_hash(self) -> str:
        blob = ";".join(f"{k}={v}" for k, v in sorted(self.flat().items()))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def copy(self) -> "BenchSpec":
        spec = BenchSpec(bench=dict(self.bench))
        spec.cluster = ClusterConfig(**self.cluster.__dict__)
        spec.workload = WorkloadConfig(
            **{f.name: getattr(self.workload, f.name) for f in dataclass_fields(WorkloadConfig)}
        )
        return spec


def load_config(path: str | Path) -> BenchSpec:
    spec = BenchSpec()
    section = ""
    for lineno, raw_line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw_line!r}")
        key, _, value = line.partition("=")
        spec.apply(section, key.strip(), value.strip())
    return spec


def apply_overrides(spec: BenchSpec, overrides: list[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        section = ""
        if "." in key:
            section, _, key = key.partition(".")
        spec.apply(section, key, value.strip())


def _percentile(values: list[float], pct: float) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    idx = min(len(ordered) - 1, int(round(pct / 100.0 * (len(ordered) - 1))))
    return ordered[idx]


def run_trial(spec: BenchSpec, seed_suffix: str = "") -> dict:
    """One trial: run the cluster, return measured metrics."""
    spec.sync()
    workload = spec.workload
    if seed_suffix:
        kwargs = {f.name: getattr(workload, f.name) for f in dataclass_fields(WorkloadConfig)}
        kwargs["seed"] = f"{workload.seed}/{seed_suffix}"
        workload = WorkloadConfig(**kwargs)
    harness = ClusterHarness(spec.cluster, workload=workload)
    num_batches = int(spec.bench.get("num_batches") or 0)
    warmup_s = float(spec.bench.get("warmup_s", 0.0))
    measure_s = float(spec.bench.get("measure_s", 0.0))

    if num_batches > 0:
        result = harness.run(num_batches)
        window = (0, None)
    else:
        harness.start()
        time.sleep(warmup_s)
        window_start = time.monotonic_ns()
        time.sleep(measure_s)
        harness.request_stop()
        try:
            harness.wait_leaders_done()
            if spec.cluster.defer_follower_apply:
                harness.release_followers()
            harness.wait_drained()
        finally:
            harness.stop()
        result = RunResult(harness)
        window = (window_start, None)

    start_tick, _ = window
    commit_rows = [
        (txn, status, tick)
        for node in harness.leader_nodes()
        for (txn, status, tick, _) in node.commit_log
        if tick >= start_tick
    ]
    committed = sum(1 for _, s, _ in commit_rows if s is TxnStatus.COMMITTED)
    aborted = sum(1 for _, s, _ in commit_rows if s is TxnStatus.ABORTED)
    latencies = [
        r.latency_ns / 1e6
        for node in harness.leader_nodes()
        for r in node.responses
        if r.tick >= start_tick
    ]
    ticks = [tick for _, _, tick in commit_rows]
    span_s = (max(ticks) - min(ticks)) / 1e9 if len(ticks) > 1 else 0.0
    timings = [t for t in result.timings if t.commit_done >= start_tick]
    raw, sent = result.payload_bytes()

    def mean_ms(attr: str) -> float:
        vals = [getattr(t, attr) for t in timings]
        return statistics.mean(vals) * 1e3 if vals else 0.0

    fits = [latency_decompose(t) for t in timings]
    fit_ok = sum(1 for f in fits if f.predicted_s > 0 and abs(f.ratio - 1.0) <= 0.2)
    return {
        "tput_tps": (committed + aborted) / span_s if span_s > 0 else 0.0,
        "p50_ms": _percentile(latencies, 50),
        "p99_ms": _percentile(latencies, 99),
        "t_pl_ms": mean_ms("t_pl"),
        "t_deliv_ms": mean_ms("t_deliv"),
        "t_ex_ms": mean_ms("t_ex"),
        "t_repl_ms": mean_ms("t_repl"),
        "t_c_ms": mean_ms("t_c"),
        "payload_raw_bytes": raw,
        "payload_comp_bytes": sent,
        "committed": committed,
        "aborted": aborted,
        "latency_fit": fit_ok / len(fits) if fits else 1.0,
        "message_counts": dict(harness.capture.counts_by_kind()) if harness.capture else {},
    }


def run_experiment(spec: BenchSpec) -> dict:
    """Average the configured number of trials into one CSV row."""
    spec.sync()
    trials = max(1, int(spec.bench.get("trials", 1)))
    results = [run_trial(spec, seed_suffix=f"t{i}" if i else "") for i in range(trials)]
    row = {"config_hash": spec.config_hash()}
    row.update(spec.flat())
    for col in CSV_COLUMNS_FIXED:
        values = [r[col] for r in results]
        row[col] = statistics.mean(values) if isinstance(values[0], float) else int(
            statistics.mean(values)
        )
    row["latency_fit"] = statistics.mean(r["latency_fit"] for r in results)
    return row


def write_csv(rows: list[dict], path: Path) -> None:
    if not rows:
        return
    columns = ["config_hash"] + [
        k for k in rows[0] if k not in ("config_hash", "message_counts")
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def format_table(rows: list[dict], columns: list[str]) -> str:
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in columns}
    lines = ["  ".join(c.ljust(widths[c]) for c in columns)]
    lines.append("  ".join("-" * widths[c] for c in columns))
    for row in rows:
        lines.append("  ".join(str(row.get(c, "")).ljust(widths[c]) for c in columns))
    return "\n".join(lines)


def _swept_column(rows: list[dict]) -> str | None:
    skip = {"config_hash", *CSV_COLUMNS_FIXED, "latency_fit", "seed"}
    for key in rows[0]:
        if key in skip:
            continue
        if len({r[key] for r in rows}) > 1:
            return key
    return None


def emit_report(csv_path: Path, out_dir: Path) -> list[Path]:
    """Tables plus simple line charts for the swept parameter."""
    rows = read_csv(csv_path)
    if not rows:
        print(f"warning: {csv_path} has no data rows; nothing to report")
        return []
    missing = [c for c in CSV_COLUMNS_FIXED if c not in rows[0]]
    if missing:
        raise ConfigError(f"{csv_path}: missing expected columns {missing}")
    out_dir.mkdir(parents=True, exist_ok=True)
    swept = _swept_column(rows)
    show = ([swept] if swept else []) + ["tput_tps", "p50_ms", "p99_ms", "committed", "aborted"]
    table = format_table(rows, ["config_hash"] + show)
    table_path = out_dir / (csv_path.stem + "_table.txt")
    table_path.write_text(table + "\n")
    print(table)
    produced = [table_path]
    if swept and len(rows) > 1:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        xs = [float(r[swept]) if _is_number(r[swept]) else i for i, r in enumerate(rows)]
        for metric, label in (("tput_tps", "throughput (txn/s)"), ("p99_ms", "p99 latency (ms)")):
            fig, ax = plt.subplots(figsize=(5, 3.2))
            ax.plot(xs, [float(r[metric]) for r in rows], marker="o")
            ax.set_xlabel(swept)
            ax.set_ylabel(label)
            ax.grid(True, alpha=0.3)
            fig.tight_layout()
            chart = out_dir / f"{csv_path.stem}_{metric}.png"
            fig.savefig(chart, dpi=150)
            plt.close(fig)
            produced.append(chart)
    return produced


def _is_number(value: str) -> bool:
    try:
        float(value)
        return True
    except (TypeError, ValueError):
        return False


def _cli_check(args) -> int:
    from .checks import run_property_checks

    ok = run_property_checks(seed=args.seed or "check", runs=args.runs)
    return 0 if ok else 1


def _build_spec(args) -> BenchSpec:
    spec = load_config(args.config) if args.config else BenchSpec()
    if args.seed:
        apply_overrides(spec, [f"workload.seed={args.seed}"])
    if args.transport:
        apply_overrides(spec, [f"cluster.transport={args.transport}"])
    apply_overrides(spec, args.set or [])
    spec.sync()
    return spec


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="queuetx",
        description="Queue-oriented deterministic replicated transaction engine benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value config file with [section] headers")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", default="bench_out", help="output directory")
        p.add_argument("--seed", help="workload seed override")
        p.add_argument(
            "--transport", choices=["loopback", "tcp"], help="message transport"
        )

    p_run = sub.add_parser("run", help="run one experiment configuration")
    common(p_run)
    p_run.add_argument("--check-invariants", action="store_true",
                       help="also run the property suites on small instances")

    p_sweep = sub.add_parser("sweep", help="run one experiment per value of a parameter")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True, help="config key to sweep (e.g. batch_size)")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")

    p_check = sub.add_parser("check", help="run the property suites on small instances")
    p_check.add_argument("--seed", default="check")
    p_check.add_argument("--runs", type=int, default=20)

    p_report = sub.add_parser("report", help="render tables and charts from a results CSV")
    p_report.add_argument("csv", help="CSV produced by run/sweep")
    p_report.add_argument("--out", default="bench_out")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            spec = _build_spec(args)
            row = run_experiment(spec)
            out = Path(args.out)
            write_csv([row], out / "results.csv")
            print(format_table([row], ["config_hash"] + CSV_COLUMNS_FIXED))
            print(f"wrote {out / 'results.csv'}")
            if args.check_invariants:
                return _cli_check(argparse.Namespace(seed=args.seed, runs=10))
            return 0
        if args.command == "sweep":
            spec = _build_spec(args)
            rows = []
            baseline_tput = None
            for value in args.values.split(","):
                trial_spec = spec.copy()
                apply_overrides(trial_spec, [f"{args.param}={value.strip()}"])
                row = run_experiment(trial_spec)
                if args.param.endswith("rf"):
                    if str(row.get("rf")) == "0":
                        baseline_tput = row["tput_tps"]
                    if baseline_tput:
                        row["overhead_vs_rf0"] = 1.0 - row["tput_tps"] / baseline_tput
                rows.append(row)
                print(f"{args.param}={value.strip()}: tput={row['tput_tps']:.0f} tps "
                      f"p99={row['p99_ms']:.1f} ms")
            out = Path(args.out)
            write_csv(rows, out / "sweep.csv")
            print(f"wrote {out / 'sweep.csv'}")
            return 0
        if args.command == "check":
            return _cli_check(args)
        if args.command == "report":
            emit_report(Path(args.csv), Path(args.out))
            return 0
    except (ConfigError, ValidationError) as exc:
        parser.exit(2, f"error: {exc}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
