"""Default training recipe shared by the CLI and the acceptance tests."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .agent import (
    EvaluationSummary,
    TrainingConfig,
    TrainingResult,
    evaluate,
    reward_histogram,
    run_training,
    save_config,
    top_quartile_mass,
    write_histogram,
    write_reward_log,
)
from .env import MergeEnv, MergeEpisode, SyntheticConfig, episodes_from_instances, split_episodes, synthetic_episodes

log = logging.getLogger(__name__)

DEFAULT_SYNTHETIC = SyntheticConfig(
    merge_distance_range=(100.0, 180.0),
    m_offset_range=(-30.0, 10.0),
    taper_length=100.0,
    max_steps=400,
)
DEFAULT_TRAINING = TrainingConfig(
    max_steps=150_000,
    demonstration_episodes=300,
    eval_every=5_000,
    eval_episodes=100,
)
SYNTHETIC_EPISODES = 3_000
HELD_OUT = 100


@dataclass
class ExperimentReport:
    variant: str
    seed: int
    steps: int
    episodes: int
    seconds: float
    checkpoint_step: int | None
    test_episodes: int
    test_success_rate: float
    test_outcomes: dict
    top_quartile_mass_training: float
    top_quartile_mass_greedy: float | None

    def to_json(self) -> dict:
        return asdict(self)


def synthetic_splits(n: int = SYNTHETIC_EPISODES, seed: int = 0, cfg: SyntheticConfig = DEFAULT_SYNTHETIC):
    return split_episodes(synthetic_episodes(n, seed, cfg), seed)


def dataset_splits(dataset_dir: str | Path) -> dict[str, list[MergeEpisode]]:
    """Replay episodes keyed by the subset each instance was assigned at extraction."""
    from ..dataset.pipeline import load_instances

    out: dict[str, list[MergeEpisode]] = {}
    for subset in ("train", "test", "validation"):
        out[subset] = list(episodes_from_instances(load_instances(dataset_dir, subset)))
    return out


def train_and_evaluate(
    splits: dict[str, list[MergeEpisode]],
    variant: str = "positive",
    seed: int = 0,
    config: TrainingConfig = DEFAULT_TRAINING,
    held_out: int = HELD_OUT,
) -> tuple[TrainingResult, EvaluationSummary, ExperimentReport]:
    env = MergeEnv(splits["train"])
    result = run_training(env, variant, config, seed=seed, validation=splits.get("validation"))
    test = splits["test"][:held_out]
    summary = evaluate(result.net, test)
    hist = reward_histogram(result.reward_values(), variant) if result.rewards else None
    greedy = reward_histogram(summary.rewards, "positive") if summary.rewards else None
    report = ExperimentReport(
        variant=variant,
        seed=seed,
        steps=result.steps,
        episodes=result.episodes,
        seconds=result.seconds,
        checkpoint_step=result.checkpoint_step,
        test_episodes=summary.episodes,
        test_success_rate=summary.success_rate,
        test_outcomes=dict(sorted(summary.outcomes.items())),
        top_quartile_mass_training=top_quartile_mass(hist) if hist else 0.0,
        top_quartile_mass_greedy=top_quartile_mass(greedy) if greedy and variant == "positive" else None,
    )
    return result, summary, report


def write_outputs(out_dir: str | Path, result: TrainingResult, report: ExperimentReport, config: TrainingConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.net.save(out / "model.json")
    write_reward_log(result.rewards, out / "rewards.csv")
    if result.rewards:
        write_histogram(reward_histogram(result.reward_values(), result.variant), out / "reward_histogram.csv")
    save_config(config, out / "config.json")
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def with_overrides(config: TrainingConfig, **kw) -> TrainingConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
