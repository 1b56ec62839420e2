"""Cross-scenario policy reuse: seed selection, transfer runs, curricula.

A batch of independently seeded runs trains on one scenario; the
best-performing checkpoint (by mean episode reward) can then seed a batch
on another scenario with the same encoding schema, or a whole chain of
scenarios ordered by difficulty.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .checkpoint import PolicyCheckpoint
from .errors import ContractError, TransferIncompatibilityError
from .training import RunConfig, RunResult, train_run


@dataclass(frozen=True)
class RunStats:
    """Across-seed summary of per-seed mean episode rewards."""

    minimum: float
    maximum: float
    average: float
    std: float
    per_seed_averages: tuple[float, ...]


def running_average(series) -> np.ndarray:
    """Cumulative mean of a reward series (the learning-curve metric)."""
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0:
        raise ContractError("cannot take the running average of an empty series")
    return np.cumsum(values) / np.arange(1, values.size + 1)


def aggregate_stats(series_list) -> RunStats:
    """Min/max/avg/population-std across seeds of per-seed average rewards."""
    if not series_list:
        raise ContractError("aggregate_stats requires at least one series")
    averages = [float(np.mean(np.asarray(s, dtype=np.float64))) for s in series_list]
    arr = np.array(averages)
    return RunStats(
        minimum=float(arr.min()),
        maximum=float(arr.max()),
        average=float(arr.mean()),
        std=float(arr.std()),
        per_seed_averages=tuple(averages),
    )


def select_seed(runs) -> PolicyCheckpoint:
    """Checkpoint of the run with the highest mean episode reward.

    ``runs`` is a sequence of (checkpoint, reward series) pairs; ties go to
    the earliest run.
    """
    runs = list(runs)
    if not runs:
        raise ContractError("select_seed requires at least one run")
    averages = [float(np.mean(np.asarray(series, dtype=np.float64)))
                for _, series in runs]
    return runs[int(np.argmax(averages))][0]


def run_seed_for(base_rng: int, stage_index: int, run_index: int) -> int:
    """Deterministic per-run seed derived from (base, stage, run) indices."""
    seq = np.random.SeedSequence((int(base_rng), int(stage_index), int(run_index)))
    return int(seq.generate_state(1, dtype=np.uint64)[0] % (2**63 - 1))


@dataclass
class TransferOutcome:
    """All artifacts of one batch of seeded-or-scratch runs."""

    checkpoint: PolicyCheckpoint  # best run, by select_seed
    stats: RunStats
    runs: list[RunResult]


def _execute_run(args) -> RunResult:
    config, seed_checkpoint, rng_seed = args
    return train_run(config, seed_checkpoint, rng_seed)


def run_transfer(seed_checkpoint: PolicyCheckpoint | None, target: RunConfig,
                 base_rng: int = 0, workers: int = 1,
                 stage_index: int = 0) -> TransferOutcome:
    """Launch target.seeds independent runs, optionally seeded by a checkpoint.

    A None seed means learning from scratch. Every seeded run starts from a
    copy of the same parameters; the input checkpoint is never mutated. A
    schema mismatch raises before any run starts.
    """
    if seed_checkpoint is not None and seed_checkpoint.schema != target.encoding_schema:
        raise TransferIncompatibilityError(
            f"seed checkpoint schema {seed_checkpoint.schema} does not match "
            f"target schema {target.encoding_schema}")
    jobs = [(target, seed_checkpoint, run_seed_for(base_rng, stage_index, i))
            for i in range(target.seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute_run, jobs))
    else:
        results = [_execute_run(job) for job in jobs]
    stats = aggregate_stats([r.rewards for r in results])
    best = select_seed([(r.checkpoint, r.rewards) for r in results])
    return TransferOutcome(checkpoint=best, stats=stats, runs=results)


@dataclass
class CurriculumOutcome:
    """Final checkpoint plus per-stage results of a curriculum chain."""

    checkpoint: PolicyCheckpoint
    stage_stats: list[RunStats]
    stage_outcomes: list[TransferOutcome]

    @property
    def provenance_chain(self) -> str:
        return "→".join(p.scenario for p in self.checkpoint.provenance)


def run_curriculum(stages, base_rng: int = 0, workers: int = 1) -> CurriculumOutcome:
    """Chain transfer runs through an ordered list of stage configs.

    Stage 0 learns from scratch; every later stage initializes from the
    best checkpoint of the previous stage. All stages must share one
    encoding schema, checked up front so a bad chain aborts naming the
    offending stage.
    """
    stages = list(stages)
    if len(stages) < 2:
        raise ContractError(
            f"a curriculum needs at least 2 stages, got {len(stages)}")
    expected = stages[0].encoding_schema
    for index, stage in enumerate(stages[1:], start=1):
        if stage.encoding_schema != expected:
            raise TransferIncompatibilityError(
                f"stage {index} schema {stage.encoding_schema} does not match "
                f"stage 0 schema {expected}")
    seed: PolicyCheckpoint | None = None
    outcomes: list[TransferOutcome] = []
    for index, stage in enumerate(stages):
        outcome = run_transfer(seed, stage, base_rng=base_rng, workers=workers,
                               stage_index=index)
        outcomes.append(outcome)
        seed = outcome.checkpoint
    return CurriculumOutcome(
        checkpoint=seed,
        stage_stats=[o.stats for o in outcomes],
        stage_outcomes=outcomes,
    )
