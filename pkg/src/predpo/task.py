"""The synthetic desk task: SFT a fresh policy, then build on-policy pairs against the oracle."""

from __future__ import annotations

from dataclasses import dataclass

from .data import GenerationConfig, PreferenceDataset, build_on_policy_dataset, synthetic_prompts, synthetic_sft_corpus
from .evaluation import RewardOracle
from .model import ArchConfig, ModelSnapshot, init_model
from .trainer import TrainConfig, TrainReport, sft_train


@dataclass
class DeskTask:
    arch: ArchConfig
    oracle: RewardOracle
    prompts: list
    eval_prompts: list
    sft: ModelSnapshot
    sft_report: TrainReport
    dataset: PreferenceDataset


def build_desk_task(seed: int = 0, arch: ArchConfig | None = None, n_prompts: int = 256,
                    n_eval_prompts: int = 200, sft_epochs: int = 10,
                    gen: GenerationConfig | None = None) -> DeskTask:
    arch = arch or ArchConfig()
    oracle = RewardOracle(arch.vocab, seed=seed)
    prompts = synthetic_prompts(n_prompts, arch.vocab, seed=seed)
    eval_prompts = synthetic_prompts(n_eval_prompts, arch.vocab, seed=seed + 10_000)
    corpus = synthetic_sft_corpus(prompts, oracle, seed=seed)
    model = init_model(arch, seed)
    report = sft_train(model, corpus, TrainConfig(method="sft", learning_rate=1e-2,
                                                  epochs=sft_epochs, batch_size=32, seed=seed))
    gen = gen or GenerationConfig(seed=seed + 1)
    dataset = build_on_policy_dataset(report.final_snapshot, prompts, gen, oracle)
    return DeskTask(arch, oracle, prompts, eval_prompts, report.final_snapshot, report, dataset)
