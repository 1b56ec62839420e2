"""Command-line entry point: train, transfer, curriculum, report.

Artifacts are written under an output directory (flag --out, falling back
to $IMARL_OUT_ROOT or ./runs). All data files are byte-stable across
re-runs with the same flags; wall-clock timestamps are confined to
run_info.json.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import PolicyCheckpoint, load_checkpoint, save_checkpoint
from .engine import BUILTIN_SCENARIOS, Scenario, builtin_scenario, load_scenario_file
from .errors import ImarlError, ScenarioError
from .training import DEFAULT_HIDDEN_DIMS, EpsilonSchedule, RunConfig, RunResult
from .transfer import (RunStats, TransferOutcome, aggregate_stats,
                       run_transfer, running_average)

OUT_ROOT_ENV = "IMARL_OUT_ROOT"
CSV_HEADER = ["run_id", "episode", "reward", "win", "epsilon"]
SCRATCH_LABEL = "-"
TABLE_HEADER = ("Scenario", "Pretrained Policy", "Min", "Max", "Avg", "Std")


class _ArtifactTracker:
    """Remembers files and directories created by one command so a failing
    command can remove its partial outputs without touching anything else."""

    def __init__(self):
        self.files: list[Path] = []
        self.dirs: list[Path] = []

    def mkdir(self, path: Path) -> Path:
        if not path.exists():
            self.dirs.append(path)
            path.mkdir(parents=True)
        return path

    def created(self, path: Path) -> Path:
        self.files.append(path)
        return path

    def cleanup(self) -> None:
        for path in self.files:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass
        for path in reversed(self.dirs):
            try:
                path.rmdir()
            except OSError:
                pass


def _resolve_scenario(ref: str) -> Scenario:
    path = Path(ref)
    if path.is_file():
        return load_scenario_file(path)
    if ref in BUILTIN_SCENARIOS:
        return builtin_scenario(ref)
    raise ScenarioError(
        f"scenario descriptor not found: {ref} "
        f"(not a file, and not one of the builtins {', '.join(BUILTIN_SCENARIOS)})")


def _out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / command


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad hidden layer list: {text!r}")
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"bad hidden layer list: {text!r}")
    return dims


def _run_config(args, scenario: Scenario) -> RunConfig:
    schedule = EpsilonSchedule(
        epsilon_initial=args.eps_initial,
        epsilon_min=args.eps_min,
        decay_steps=args.gamma_steps,
    )
    return RunConfig(
        scenario=scenario,
        resolution=args.resolution,
        episodes=args.episodes,
        seeds=args.seeds,
        schedule=schedule,
        lr=args.lr,
        discount=args.discount,
        hidden_dims=args.hidden,
    )


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def _write_rewards_csv(path: Path, results: list[RunResult], run_ids: list[int],
                       tracker: _ArtifactTracker) -> None:
    with open(tracker.created(path), "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for run_id, result in zip(run_ids, results):
            for episode in range(result.rewards.size):
                writer.writerow([
                    run_id,
                    episode,
                    _fmt(result.rewards[episode]),
                    int(result.wins[episode]),
                    _fmt(result.epsilons[episode]),
                ])


def _write_meta(csv_path: Path, scenario: str, pretrained: str,
                tracker: _ArtifactTracker) -> None:
    meta_path = Path(str(csv_path) + ".meta.json")
    payload = {"scenario": scenario, "pretrained": pretrained}
    tracker.created(meta_path).write_text(
        json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def _read_meta(csv_path: Path) -> tuple[str, str]:
    meta_path = Path(str(csv_path) + ".meta.json")
    if meta_path.is_file():
        try:
            data = json.loads(meta_path.read_text(encoding="utf-8"))
            return str(data.get("scenario", csv_path.stem)), \
                str(data.get("pretrained", SCRATCH_LABEL))
        except (json.JSONDecodeError, UnicodeDecodeError):
            pass
    return csv_path.stem, SCRATCH_LABEL


def _stats_table(rows: list[tuple[str, str, RunStats]]) -> str:
    lines = [
        f"{TABLE_HEADER[0]:<10}{TABLE_HEADER[1]:<20}"
        f"{TABLE_HEADER[2]:>9}{TABLE_HEADER[3]:>9}{TABLE_HEADER[4]:>9}{TABLE_HEADER[5]:>9}"
    ]
    for scenario, pretrained, stats in rows:
        lines.append(
            f"{scenario:<10}{pretrained:<20}"
            f"{stats.minimum:>9.2f}{stats.maximum:>9.2f}"
            f"{stats.average:>9.2f}{stats.std:>9.2f}")
    return "\n".join(lines) + "\n"


def _write_stats_csv(path: Path, rows: list[tuple[str, str, RunStats]],
                     tracker: _ArtifactTracker) -> None:
    with open(tracker.created(path), "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "pretrained", "min", "max", "avg", "std"])
        for scenario, pretrained, stats in rows:
            writer.writerow([scenario, pretrained, _fmt(stats.minimum),
                             _fmt(stats.maximum), _fmt(stats.average),
                             _fmt(stats.std)])


def _write_batch_artifacts(out_dir: Path, outcome: TransferOutcome,
                           scenario_name: str, pretrained: str,
                           run_ids: list[int],
                           tracker: _ArtifactTracker) -> None:
    for run_id, result in zip(run_ids, outcome.runs):
        run_dir = tracker.mkdir(out_dir / f"run_{run_id:03d}")
        _write_rewards_csv(run_dir / "rewards.csv", [result], [run_id], tracker)
        _write_meta(run_dir / "rewards.csv", scenario_name, pretrained, tracker)
        save_checkpoint(result.checkpoint,
                        tracker.created(run_dir / "checkpoint.json"))
    _write_rewards_csv(out_dir / "all_runs.csv", outcome.runs, run_ids, tracker)
    _write_meta(out_dir / "all_runs.csv", scenario_name, pretrained, tracker)


def _write_run_info(out_dir: Path, command: str, tracker: _ArtifactTracker) -> None:
    # The only artifact carrying wall-clock time; everything else is
    # byte-stable across identical re-runs.
    payload = {
        "command": command,
        "completed_utc": datetime.now(timezone.utc).isoformat(),
    }
    tracker.created(out_dir / "run_info.json").write_text(
        json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    tracker = _ArtifactTracker()
    try:
        scenario = _resolve_scenario(args.scenario)
        config = _run_config(args, scenario)
        out_dir = tracker.mkdir(_out_dir(args, "train"))
        outcome = run_transfer(None, config, base_rng=args.rng,
                               workers=args.workers)
        run_ids = list(range(config.seeds))
        _write_batch_artifacts(out_dir, outcome, scenario.name, SCRATCH_LABEL,
                               run_ids, tracker)
        rows = [(scenario.name, SCRATCH_LABEL, outcome.stats)]
        table = _stats_table(rows)
        tracker.created(out_dir / "report.txt").write_text(table, encoding="utf-8")
        _write_stats_csv(out_dir / "stats.csv", rows, tracker)
        _write_run_info(out_dir, "train", tracker)
        print(table, end="")
        print(f"artifacts written to {out_dir}")
        return 0
    except (ImarlError, OSError) as exc:
        tracker.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_transfer(args) -> int:
    tracker = _ArtifactTracker()
    try:
        scenario = _resolve_scenario(args.scenario)
        config = _run_config(args, scenario)
        seed_ckpt = load_checkpoint(args.seed_checkpoint)
        pretrained = seed_ckpt.provenance[-1].scenario if seed_ckpt.provenance \
            else SCRATCH_LABEL
        out_dir = tracker.mkdir(_out_dir(args, "transfer"))
        outcome = run_transfer(seed_ckpt, config, base_rng=args.rng,
                               workers=args.workers)
        run_ids = list(range(config.seeds))
        _write_batch_artifacts(out_dir, outcome, scenario.name, pretrained,
                               run_ids, tracker)
        rows = [(scenario.name, pretrained, outcome.stats)]
        comparison = ""
        if args.baseline:
            baseline_series, skipped = _read_rewards_csv(Path(args.baseline))
            base_scenario, base_label = _read_meta(Path(args.baseline))
            base_stats = aggregate_stats(list(baseline_series.values()))
            rows.append((base_scenario, base_label, base_stats))
            if base_stats.average > 0:
                gain = 100.0 * (outcome.stats.average - base_stats.average) \
                    / base_stats.average
                comparison = f"seeded vs scratch average: {gain:+.1f}%\n"
            if skipped:
                print(f"warning: skipped {skipped} malformed baseline rows")
        table = _stats_table(rows) + comparison
        tracker.created(out_dir / "report.txt").write_text(table, encoding="utf-8")
        _write_stats_csv(out_dir / "stats.csv", rows, tracker)
        _write_run_info(out_dir, "transfer", tracker)
        print(table, end="")
        print(f"artifacts written to {out_dir}")
        return 0
    except (ImarlError, OSError) as exc:
        tracker.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_curriculum(args) -> int:
    stage_refs = [ref.strip() for ref in args.stages.split(",") if ref.strip()]
    outer = _ArtifactTracker()
    try:
        if len(stage_refs) < 2:
            raise ScenarioError(
                f"a curriculum needs at least 2 stages, got {len(stage_refs)}")
        scenarios = [_resolve_scenario(ref) for ref in stage_refs]
        configs = [_run_config(args, s) for s in scenarios]
        expected = configs[0].encoding_schema
        for index, cfg in enumerate(configs[1:], start=1):
            if cfg.encoding_schema != expected:
                raise ScenarioError(
                    f"stage {index} encoding schema does not match stage 0")
        out_dir = outer.mkdir(_out_dir(args, "curriculum"))
    except (ImarlError, OSError) as exc:
        outer.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1

    seed: PolicyCheckpoint | None = None
    stage_rows: list[tuple[str, str, RunStats]] = []
    for index, config in enumerate(configs):
        stage_tracker = _ArtifactTracker()
        try:
            outcome = run_transfer(seed, config, base_rng=args.rng,
                                   workers=args.workers, stage_index=index)
            pretrained = seed.provenance[-1].scenario if seed else SCRATCH_LABEL
            stage_dir = stage_tracker.mkdir(
                out_dir / f"stage_{index}_{config.scenario.name}")
            run_ids = list(range(config.seeds))
            _write_batch_artifacts(stage_dir, outcome, config.scenario.name,
                                   pretrained, run_ids, stage_tracker)
            rows = [(config.scenario.name, pretrained, outcome.stats)]
            stage_tracker.created(stage_dir / "report.txt").write_text(
                _stats_table(rows), encoding="utf-8")
            _write_stats_csv(stage_dir / "stats.csv", rows, stage_tracker)
            stage_rows.extend(rows)
            seed = outcome.checkpoint
        except (ImarlError, OSError) as exc:
            # Earlier stages' artifacts stay on disk; only this stage's
            # partial outputs are removed.
            stage_tracker.cleanup()
            print(f"error: curriculum aborted at stage {index}: {exc}",
                  file=sys.stderr)
            return 1
        print(f"stage {index} ({config.scenario.name}): "
              f"avg {outcome.stats.average:.2f}")

    tracker = _ArtifactTracker()
    try:
        save_checkpoint(seed, tracker.created(out_dir / "final_checkpoint.json"))
        chain = "→".join(p.scenario for p in seed.provenance)
        summary_lines = [f"curriculum: {chain}", f"stages: {len(configs)}"]
        summary_lines.append(_stats_table(stage_rows).rstrip("\n"))
        summary_lines.append("final checkpoint: final_checkpoint.json")
        summary = "\n".join(summary_lines) + "\n"
        tracker.created(out_dir / "curriculum_summary.txt").write_text(
            summary, encoding="utf-8")
        _write_run_info(out_dir, "curriculum", tracker)
        print(summary, end="")
        return 0
    except (ImarlError, OSError) as exc:
        tracker.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _read_rewards_csv(path: Path) -> tuple[dict[int, list[float]], int]:
    """Parse a rewards CSV into per-run reward series, counting bad rows."""
    if not path.is_file():
        raise ScenarioError(f"reward CSV not found: {path}")
    series: dict[int, list[float]] = {}
    skipped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ScenarioError(
                f"{path}: unexpected CSV header {header}, want {CSV_HEADER}")
        for row in reader:
            try:
                run_id = int(row[0])
                reward = float(row[2])
            except (IndexError, ValueError):
                skipped += 1
                continue
            series.setdefault(run_id, []).append(reward)
    if not series:
        raise ScenarioError(f"{path}: no data rows")
    return series, skipped


def cmd_report(args) -> int:
    tracker = _ArtifactTracker()
    try:
        out_dir = tracker.mkdir(_out_dir(args, "report"))
        rows = []
        total_skipped = 0
        plot_names: set[str] = set()
        for index, ref in enumerate(args.csvs):
            path = Path(ref)
            series, skipped = _read_rewards_csv(path)
            total_skipped += skipped
            scenario, pretrained = _read_meta(path)
            rows.append((scenario, pretrained,
                         aggregate_stats(list(series.values()))))
            # Inputs from different directories may share a file stem.
            name = f"{path.stem}.running_avg.csv"
            if name in plot_names:
                name = f"{path.stem}_{index}.running_avg.csv"
            plot_names.add(name)
            _write_plot_data(out_dir / name, series, tracker)
        table = _stats_table(rows)
        tracker.created(out_dir / "report.txt").write_text(table, encoding="utf-8")
        print(table, end="")
        if total_skipped:
            print(f"warning: skipped {total_skipped} malformed rows")
        return 0
    except (ImarlError, OSError) as exc:
        tracker.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _write_plot_data(path: Path, series: dict[int, list[float]],
                     tracker: _ArtifactTracker) -> None:
    # Plot series: per-episode mean across runs of the running average.
    curves = [running_average(series[run_id]) for run_id in sorted(series)]
    longest = max(curve.size for curve in curves)
    with open(tracker.created(path), "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "running_avg"])
        for episode in range(longest):
            points = [c[episode] for c in curves if episode < c.size]
            writer.writerow([episode, _fmt(float(np.mean(points)))])


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--episodes", type=int, default=2000,
                     help="episodes per run (default 2000)")
    sub.add_argument("--seeds", type=int, default=31,
                     help="independent seeded runs (default 31)")
    sub.add_argument("--resolution", type=int, choices=(19, 37, 55), default=37,
                     help="local influence grid side (default 37)")
    sub.add_argument("--out", type=str, default=None,
                     help=f"output directory (default ${OUT_ROOT_ENV} or ./runs)")
    sub.add_argument("--rng", type=int, default=0,
                     help="base RNG seed for run derivation (default 0)")
    sub.add_argument("--lr", type=float, default=1e-4,
                     help="learning rate (default 0.0001)")
    sub.add_argument("--discount", type=float, default=0.9,
                     help="reward discount (default 0.9)")
    sub.add_argument("--eps-initial", type=float, default=1.0,
                     help="initial exploration rate (default 1.0)")
    sub.add_argument("--eps-min", type=float, default=1e-4,
                     help="exploration floor (default 0.0001)")
    sub.add_argument("--gamma-steps", type=int, default=30_000,
                     help="environmental steps to reach the floor (default 30000)")
    sub.add_argument("--hidden", type=_parse_hidden,
                     default=DEFAULT_HIDDEN_DIMS,
                     help="hidden layer sizes, comma separated (default 256,128)")
    sub.add_argument("--workers", type=int, default=1,
                     help="parallel run workers (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imarl",
        description="Train, transfer and report on combat micromanagement policies "
                    "with scenario-independent influence-map state encoding.")
    subs = parser.add_subparsers(dest="command", required=True)

    train = subs.add_parser("train", help="train from scratch on one scenario")
    train.add_argument("--scenario", required=True,
                       help="descriptor path or builtin name (3m/8m/25m/2s3z)")
    _add_common_flags(train)
    train.set_defaults(func=cmd_train)

    transfer = subs.add_parser("transfer",
                               help="train seeded from an existing checkpoint")
    transfer.add_argument("--scenario", required=True,
                          help="target descriptor path or builtin name")
    transfer.add_argument("--seed-checkpoint", required=True,
                          help="checkpoint file to initialize every run from")
    transfer.add_argument("--baseline", default=None,
                          help="scratch rewards CSV for a comparison row")
    _add_common_flags(transfer)
    transfer.set_defaults(func=cmd_transfer)

    curriculum = subs.add_parser("curriculum",
                                 help="chain transfer runs through ordered stages")
    curriculum.add_argument("--stages", required=True,
                            help="comma-separated descriptor paths or builtin names")
    _add_common_flags(curriculum)
    curriculum.set_defaults(func=cmd_curriculum)

    report = subs.add_parser("report",
                             help="summarize reward CSVs into tables and plot data")
    report.add_argument("csvs", nargs="+", help="reward CSV files")
    report.add_argument("--out", type=str, default=None,
                        help=f"output directory (default ${OUT_ROOT_ENV} or ./runs)")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
