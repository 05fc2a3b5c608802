"""Two-stage hyperparameter search.

Stage 1 fixes the learning rate and sweeps beta (DPO family) or beta x gamma
(SimPO). Stage 2 takes the two best stage-1 settings and sweeps the learning
rate. The overall best is the argmax over every completed run, ties going to
the earlier run.

Grid shapes are the full-scale ones. Learning rates for billion-parameter
models do not transfer to the toy policy, so the desk defaults multiply the
full-scale values by ``DESK_LR_SCALE``; both are written to the audit log.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidInputError
from .evaluation import EVAL_DECODING, pairwise_win_rate
from .model import ModelSnapshot
from .trainer import Method, TrainConfig, train_preference

log = logging.getLogger(__name__)

DPO_BETA_GRID = (0.005, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0)
SIMPO_BETA_GRID = (2.0, 2.5)
SIMPO_GAMMA_GRID = (0.3, 0.5, 1.0, 1.2, 1.4, 1.6)
FULL_SCALE_STAGE1_LR = 6e-7
FULL_SCALE_LR_GRID = (3e-7, 5e-7, 8e-7, 1e-6)
DESK_LR_SCALE = 1e4


@dataclass
class SearchSpace:
    method: Method = Method.DPO
    base_config: TrainConfig = field(default_factory=TrainConfig)
    stage1_fixed_lr: float = FULL_SCALE_STAGE1_LR * DESK_LR_SCALE
    beta_grid: tuple = DPO_BETA_GRID
    gamma_grid: tuple = ()
    lr_grid: tuple = tuple(lr * DESK_LR_SCALE for lr in FULL_SCALE_LR_GRID)
    lr_scale: float = DESK_LR_SCALE

    def __post_init__(self):
        self.method = Method.parse(self.method)
        if self.method is Method.SFT:
            raise ConfigError("cannot search over SFT", "search.method")
        if not self.beta_grid:
            raise ConfigError("empty grid", "search.beta_grid")
        if not self.lr_grid:
            raise ConfigError("empty grid", "search.lr_grid")
        if self.method is Method.SIMPO and not self.gamma_grid:
            raise ConfigError("SimPO needs a gamma grid", "search.gamma_grid")

    @classmethod
    def desk_default(cls, method, base_config: TrainConfig | None = None) -> "SearchSpace":
        method = Method.parse(method)
        base = base_config or TrainConfig(method=method)
        if method is Method.SIMPO:
            return cls(method, base, beta_grid=SIMPO_BETA_GRID, gamma_grid=SIMPO_GAMMA_GRID)
        return cls(method, base)

    def stage1_points(self) -> list:
        if self.method is Method.SIMPO:
            return [{"beta": b, "gamma": g} for b in self.beta_grid for g in self.gamma_grid]
        return [{"beta": b} for b in self.beta_grid]

    def audit(self) -> dict:
        return {
            "method": self.method.value,
            "stage1_fixed_lr": self.stage1_fixed_lr,
            "beta_grid": list(self.beta_grid),
            "gamma_grid": list(self.gamma_grid),
            "lr_grid": list(self.lr_grid),
            "lr_scale": self.lr_scale,
            "full_scale_stage1_lr": FULL_SCALE_STAGE1_LR,
            "full_scale_lr_grid": list(FULL_SCALE_LR_GRID),
        }


@dataclass
class RunRecord:
    index: int
    stage: int
    config: dict
    value: float | None = None
    snapshot_hash: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SearchResult:
    runs: list
    space: dict = field(default_factory=dict)
    dataset_hash: str = ""
    ref_label: str = ""

    @property
    def ranked(self) -> list:
        done = [r for r in self.runs if r.ok]
        return sorted(done, key=lambda r: (-r.value, r.index))

    @property
    def best(self) -> RunRecord | None:
        ranked = self.ranked
        return ranked[0] if ranked else None

    def stage_runs(self, stage: int) -> list:
        return [r for r in self.runs if r.stage == stage]

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "space": self.space,
            "dataset_hash": self.dataset_hash,
            "ref": self.ref_label,
            "runs": [dataclasses.asdict(r) for r in self.runs],
            "best": dataclasses.asdict(self.best) if self.best else None,
        }
        (out / "search_manifest.json").write_text(json.dumps(manifest, indent=2))
        with open(out / "summary.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["rank", "stage", "method", "ref", "beta", "gamma", "lr", "objective"])
            for rank, r in enumerate(self.ranked, start=1):
                c = r.config
                gamma = c["gamma"] if c["method"] == Method.SIMPO.value else "-"
                w.writerow([rank, r.stage, c["method"], self.ref_label, c["beta"], gamma,
                            c["learning_rate"], r.value])
        return out


def resolve_ref(ref_spec, sft: ModelSnapshot, method: Method):
    """``"sft"`` -> the SFT snapshot, ``None``/``"none"`` -> no reference, or a snapshot."""
    if isinstance(ref_spec, ModelSnapshot):
        ref, label = ref_spec, ref_spec.content_hash[:12]
    elif ref_spec in (None, "none"):
        ref, label = None, "none"
    elif ref_spec == "sft":
        ref, label = sft, "sft"
    else:
        raise ConfigError(f"unknown reference spec {ref_spec!r}", "search.ref")
    if method is Method.SIMPO:
        ref, label = None, "none"
    return ref, label


def winrate_objective(opponent: ModelSnapshot, prompts, oracle, decoding=EVAL_DECODING):
    """Oracle win rate of the trained snapshot against ``opponent``."""
    def objective(snapshot, config):
        return pairwise_win_rate(snapshot, opponent, prompts, oracle, decoding).win_rate
    return objective


def _execute(jobs_list, sft, ref, dataset, objective, trainer, jobs):
    def run(item):
        index, stage, cfg = item
        rec = RunRecord(index, stage, cfg.to_dict())
        try:
            report = trainer(sft, ref, dataset, cfg)
            rec.snapshot_hash = report.final_snapshot.content_hash
            rec.value = float(objective(report.final_snapshot, cfg))
        except Exception as e:  # noqa: BLE001 - one failed run must not stop the sweep
            log.warning("run %d failed: %s", index, e)
            rec.error = f"{type(e).__name__}: {e}"
        return rec

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(run, jobs_list))
    return [run(item) for item in jobs_list]


def stage1(space: SearchSpace, sft, ref_spec, dataset, objective, trainer=train_preference,
           jobs: int = 1) -> SearchResult:
    ref, label = resolve_ref(ref_spec, sft, space.method)
    base = space.base_config.replace(method=space.method, learning_rate=space.stage1_fixed_lr)
    work = [(i, 1, base.replace(**pt)) for i, pt in enumerate(space.stage1_points())]
    runs = _execute(work, sft, ref, dataset, objective, trainer, jobs)
    return SearchResult(runs, space.audit(), dataset.content_hash(), label)


def stage2(stage1_result: SearchResult, space: SearchSpace, sft, ref_spec, dataset, objective,
           trainer=train_preference, jobs: int = 1, top_k: int = 2) -> SearchResult:
    top = stage1_result.ranked[:top_k]
    if not top:
        raise InvalidInputError("stage 1 produced no successful runs")
    if len(top) < top_k:
        log.warning("only %d successful stage-1 configs; stage 2 runs %d x %d",
                    len(top), len(top), len(space.lr_grid))
    ref, _ = resolve_ref(ref_spec, sft, space.method)
    start = len(stage1_result.runs)
    work, i = [], start
    for rec in top:
        cfg = TrainConfig(**rec.config)
        for lr in space.lr_grid:
            work.append((i, 2, cfg.replace(learning_rate=lr)))
            i += 1
    runs = _execute(work, sft, ref, dataset, objective, trainer, jobs)
    return SearchResult(stage1_result.runs + runs, stage1_result.space,
                        stage1_result.dataset_hash, stage1_result.ref_label)


def two_stage_search(space, sft, ref_spec, dataset, objective, trainer=train_preference,
                     jobs: int = 1) -> SearchResult:
    first = stage1(space, sft, ref_spec, dataset, objective, trainer, jobs)
    return stage2(first, space, sft, ref_spec, dataset, objective, trainer, jobs)
