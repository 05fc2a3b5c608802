"""Guiding-reference DPO.

1. Reference for the first round: the SFT snapshot for reference-based
   methods, ``None`` for SimPO.
2. First round: optimize the SFT snapshot with the chosen method on ``D``.
3. The first-round output becomes the guiding reference.
4. Run DPO again *from the SFT snapshot* against that guide on the same ``D``.

The final policy is never initialized from the first-round output; only the
reference changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .data import PreferenceDataset
from .errors import ConfigError
from .model import ModelSnapshot, save_snapshot
from .trainer import Method, TrainConfig, TrainReport, train_preference

FIRST_METHODS = (Method.DPO, Method.SIMPO, Method.SDPO, Method.TR_DPO)


@dataclass
class PreDpoPlan:
    sft: ModelSnapshot
    first_config: TrainConfig
    second_config: TrainConfig
    dataset: PreferenceDataset

    @property
    def first_method(self) -> Method:
        return self.first_config.method

    @classmethod
    def default(cls, sft, dataset, first_config: TrainConfig, second_config=None) -> "PreDpoPlan":
        """Second round defaults to DPO with the first round's settings and ``seed + 1``."""
        if second_config is None:
            second_config = first_config.replace(method=Method.DPO, seed=first_config.seed + 1)
        return cls(sft, first_config, second_config, dataset)

    def validate(self):
        if self.first_method not in FIRST_METHODS:
            raise ConfigError(f"unsupported first-round method {self.first_method.value}",
                              "first_config.method")
        if self.second_config.method is not Method.DPO:
            raise ConfigError("second round must be DPO", "second_config.method")
        self.dataset.require_nonempty()


@dataclass
class PreDpoResult:
    sft: ModelSnapshot
    pi_m: ModelSnapshot
    pi_guide: ModelSnapshot
    pi_final: ModelSnapshot
    first_report: TrainReport | None
    second_report: TrainReport
    dataset_hash: str
    first_ref: ModelSnapshot | None = None

    def manifest(self) -> dict:
        return {
            "sft_hash": self.sft.content_hash,
            "first_method": (self.first_report.config["method"] if self.first_report else None),
            "first_ref_hash": self.first_ref.content_hash if self.first_ref else None,
            "pi_m_hash": self.pi_m.content_hash,
            "guide_hash": self.pi_guide.content_hash,
            "final_hash": self.pi_final.content_hash,
            "second_initial_hash": self.second_report.initial_hash,
            "second_ref_hash": self.second_report.ref_hashes[0][1],
            "dataset_hash": self.dataset_hash,
        }

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        snaps = out / "snapshots"
        save_snapshot(self.sft, snaps / "sft.snap")
        save_snapshot(self.pi_guide, snaps / "guide.snap")
        save_snapshot(self.pi_final, snaps / "final.snap")
        if self.first_report is not None:
            self.first_report.save(out / "round1")
        self.second_report.save(out / "round2")
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))
        return out


def initial_reference(method: Method, sft: ModelSnapshot):
    return sft if method.uses_reference else None


def guided_dpo(sft: ModelSnapshot, guide: ModelSnapshot, dataset, config: TrainConfig) -> TrainReport:
    """DPO from ``sft`` with ``guide`` as the reference."""
    if config.method is not Method.DPO:
        raise ConfigError("guided round must be DPO", "second_config.method")
    return train_preference(sft, guide, dataset, config)


def run_pre_dpo(plan: PreDpoPlan) -> PreDpoResult:
    plan.validate()
    ref = initial_reference(plan.first_method, plan.sft)
    first = train_preference(plan.sft, ref, plan.dataset, plan.first_config)
    pi_m = first.final_snapshot
    guide = pi_m
    second = guided_dpo(plan.sft, guide, plan.dataset, plan.second_config)
    return PreDpoResult(plan.sft, pi_m, guide, second.final_snapshot, first, second,
                        plan.dataset.content_hash(), ref)


def run_pre_dpo_round2(prev: PreDpoResult, plan2: PreDpoPlan) -> PreDpoResult:
    """Another guided round: reference = previous final policy, start again from SFT."""
    if plan2.second_config.method is not Method.DPO:
        raise ConfigError("second round must be DPO", "second_config.method")
    if plan2.sft.content_hash != prev.sft.content_hash:
        raise ConfigError("round-2 SFT snapshot differs from round 1", "sft")
    if plan2.dataset.content_hash() != prev.dataset_hash:
        raise ConfigError("round-2 dataset differs from round 1", "dataset")
    guide = prev.pi_final
    second = guided_dpo(plan2.sft, guide, plan2.dataset, plan2.second_config)
    return PreDpoResult(plan2.sft, guide, guide, second.final_snapshot, prev.second_report,
                        second, prev.dataset_hash, prev.pi_guide)
