"""Seeded experiment runs and the fixed sweep suites.

Directory layout produced by :func:`run_experiment`::

    <out_dir>/<name>/
        summary.json            final return per seed, mean, std, median
        seed_<s>/
            config.ini          snapshot that reproduces the run
            label               display label used by plots
            metrics.csv         one row per policy iteration
            result.json         final return and step count (written last)
            checkpoints/        phase_NNNN.npz every ``checkpoint_every`` phases

A seed directory whose ``result.json`` exists and whose ``config.ini`` matches
the requested configuration is reused rather than rerun.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import ExperimentConfig, build_config
from .envs import make_env
from .phasic import PhasicTrainer, final_return, format_metrics_header, format_metrics_row, read_metrics
from .plotting import plot_groups

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "PHASICPG_OUTPUT_ROOT"
FINAL_WINDOW = 10


def resolve_out_dir(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def run_seed(cfg: ExperimentConfig, seed: int, run_dir: str | Path, force: bool = False) -> dict:
    """Train one seed into ``run_dir``; returns the parsed ``result.json``."""
    run_dir = Path(run_dir)
    snap = dataclasses.replace(cfg, seeds=(seed,)).to_ini()
    result_path = run_dir / "result.json"
    if not force and result_path.exists() and (run_dir / "config.ini").exists():
        if (run_dir / "config.ini").read_text() == snap:
            log.info("reusing %s", run_dir)
            return json.loads(result_path.read_text())
    run_dir.mkdir(parents=True, exist_ok=True)
    result_path.unlink(missing_ok=True)
    (run_dir / "config.ini").write_text(snap)
    (run_dir / "label").write_text(cfg.name + "\n")
    env = make_env(cfg.env, cfg.hp.num_envs, seed, **cfg.env_params)
    trainer = PhasicTrainer(cfg.hp, env, seed, checkpoint_dir=run_dir / "checkpoints")
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        fh.write(format_metrics_header())

        def on_row(row):
            fh.write(format_metrics_row(row))
            fh.flush()

        rows = trainer.train(on_row=on_row, checkpoint_every=cfg.checkpoint_every)
    result = {
        "seed": seed,
        "label": cfg.name,
        "env_steps": trainer.env_steps,
        "iterations": trainer.iteration,
        "final_return": final_return(rows, FINAL_WINDOW),
    }
    result_path.write_text(json.dumps(result, sort_keys=True) + "\n")
    return result


def summarize(results: Sequence[dict]) -> dict:
    finals = np.array([r["final_return"] for r in results], dtype=float)
    return {
        "label": results[0]["label"] if results else "",
        "seeds": [r["seed"] for r in results],
        "final_returns": finals.tolist(),
        "mean": float(np.mean(finals)),
        "std": float(np.std(finals)),
        "median": float(np.median(finals)),
    }


def summary_line(summary: dict) -> str:
    return (
        f"{summary['label']}: final return {summary['mean']:.4f} +- {summary['std']:.4f} "
        f"(median {summary['median']:.4f}, {len(summary['seeds'])} seeds)"
    )


def run_experiment(cfg: ExperimentConfig, force: bool = False, jobs: int = 1) -> dict:
    base = resolve_out_dir(cfg.out_dir) / cfg.name
    tasks = [(cfg, s, base / f"seed_{s}", force) for s in cfg.seeds]
    results = _map(tasks, jobs)
    summary = summarize(results)
    base.mkdir(parents=True, exist_ok=True)
    (base / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _run_task(task):
    cfg, seed, run_dir, force = task
    return run_seed(cfg, seed, run_dir, force)


def _map(tasks, jobs: int) -> list[dict]:
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    import multiprocessing as mp

    with mp.get_context("spawn").Pool(jobs) as pool:
        return pool.map(_run_task, tasks)


# ---------------------------------------------------------------------------
# Sweep suites: label -> overrides applied on top of the base config


@dataclass(frozen=True)
class SweepSuite:
    name: str
    description: str
    configs: Mapping[str, Mapping[str, str]]


SUITES: dict[str, SweepSuite] = {
    s.name: s
    for s in [
        SweepSuite(
            "ppg-vs-ppo",
            "PPG against the shared-network PPO baseline",
            {"ppg": {"variant": "ppg-dual"}, "ppo": {"variant": "ppo-shared"}},
        ),
        SweepSuite(
            "policy-sr",
            "policy epochs per rollout, value epochs fixed",
            {f"e_pi={e}": {"variant": "ppg-dual", "e_pi": str(e)} for e in (1, 2, 3, 6)},
        ),
        SweepSuite(
            "value-sr",
            "auxiliary epochs per phase",
            {f"e_aux={e}": {"variant": "ppg-dual", "e_aux": str(e)} for e in (1, 2, 6, 9)},
        ),
        SweepSuite(
            "aux-freq",
            "policy iterations per auxiliary phase",
            {f"n_pi={n}": {"variant": "ppg-dual", "n_pi": str(n)} for n in (2, 4, 8, 16, 32)},
        ),
        SweepSuite(
            "kl-vs-clip",
            "fixed KL penalty against the clipped surrogate",
            {"clip": {"variant": "ppg-dual"}, "kl-penalty": {"variant": "ppg-kl-penalty"}},
        ),
        SweepSuite(
            "single-net",
            "dual-network PPG, single-network PPG, PPO for reference",
            {"ppg-dual": {"variant": "ppg-dual"}, "ppg-single-net": {"variant": "ppg-single-net"}, "ppo": {"variant": "ppo-shared"}},
        ),
        SweepSuite(
            "ppo-sr",
            "PPO epochs per rollout",
            {f"ppo_epochs={e}": {"variant": "ppo-shared", "ppo_epochs": str(e)} for e in range(1, 7)},
        ),
        SweepSuite(
            "shared-vs-separate",
            "PPO with a shared network against separate networks",
            {"shared": {"variant": "ppo-shared"}, "separate": {"variant": "ppo-separate"}},
        ),
        SweepSuite(
            "aux-value-skip",
            "PPG with and without value training in the auxiliary phase",
            {"ppg": {"variant": "ppg-dual"}, "no-aux-value": {"variant": "ppg-no-aux-value"}},
        ),
    ]
}


def suite_configs(
    suite: str,
    base_sections: Mapping[str, Mapping[str, str]] | None = None,
    overrides: Mapping[str, str] | None = None,
) -> list[ExperimentConfig]:
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; available: {', '.join(SUITES)}")
    configs = []
    for label, variant_overrides in SUITES[suite].configs.items():
        merged = {**(overrides or {}), **variant_overrides, "label": label}
        configs.append(build_config(base_sections, merged))
    return configs


def run_sweep(
    suite: str,
    configs: Sequence[ExperimentConfig],
    out_dir: str | Path,
    window: int = 10,
    force: bool = False,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> dict:
    """Run every (config, seed) pair, then draw ``comparison.svg`` and ``summary.json``."""
    root = resolve_out_dir(out_dir) / suite
    summaries = {}
    groups = {}
    for cfg in configs:
        cfg = dataclasses.replace(cfg, out_dir=str(root.absolute()))
        summary = run_experiment(cfg, force=force, jobs=jobs)
        summaries[cfg.name] = summary
        groups[cfg.name] = [read_metrics(root / cfg.name / f"seed_{s}" / "metrics.csv") for s in cfg.seeds]
        if progress:
            progress(summary_line(summary))
    plot_groups(groups, root / "comparison.svg", window, title=f"{suite}: {SUITES[suite].description}")
    (root / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return summaries
