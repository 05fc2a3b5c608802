"""SFT and preference-optimization loops with a warmup + cosine schedule.

Methods: ``sft``, ``dpo``, ``simpo``, ``tr-dpo`` (reference hard-reset to the
current policy every ``tr_dpo_update_every`` steps) and ``sdpo`` (sequential DPO
over contiguous dataset parts, each stage referencing the previous output).
Updates use Adam; parameters are rounded to float32 after every step.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import telemetry
from .data import PreferenceDataset, split
from .errors import ConfigError, InvalidInputError
from .losses import DpoConfig, LambdaRecord, SimpoConfig, dpo_value_and_grad, simpo_value_and_grad
from .model import ModelSnapshot, PolicyModel, load_snapshot, restore, save_snapshot, weighted_log_prob_grad

log = logging.getLogger(__name__)


class Method(str, Enum):
    SFT = "sft"
    DPO = "dpo"
    SIMPO = "simpo"
    TR_DPO = "tr-dpo"
    SDPO = "sdpo"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        key = {"trdpo": "tr-dpo"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown method {value!r}", "method") from None

    @property
    def uses_reference(self) -> bool:
        return self in (Method.DPO, Method.TR_DPO, Method.SDPO)


@dataclass(frozen=True)
class TrainConfig:
    method: Method = Method.DPO
    beta: float = 0.1
    gamma: float = 0.0
    learning_rate: float = 5e-3
    warmup_ratio: float = 0.06
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0
    tr_dpo_update_every: int = 32
    sdpo_stages: int = 2
    grad_clip: float | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if not self.learning_rate > 0:
            raise ConfigError("must be > 0", "learning_rate")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError("must lie in [0, 1)", "warmup_ratio")
        if self.epochs < 1:
            raise ConfigError("must be >= 1", "epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")
        if self.method is not Method.SFT and not self.beta > 0:
            raise ConfigError("must be > 0", "beta")
        if self.gamma < 0:
            raise ConfigError("must be >= 0", "gamma")
        if self.tr_dpo_update_every < 1:
            raise ConfigError("must be >= 1", "tr_dpo_update_every")
        if self.sdpo_stages < 1:
            raise ConfigError("must be >= 1", "sdpo_stages")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("must be > 0 or null", "grad_clip")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["method"] = self.method.value
        return d

    @classmethod
    def from_dict(cls, d: dict, path: str = "train") -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        for key in d:
            if key not in names:
                raise ConfigError("unknown key", f"{path}.{key}")
        try:
            return cls(**d)
        except ConfigError as e:
            raise ConfigError(str(e).split(": ", 1)[-1], f"{path}.{e.field}") from None
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e), path) from None


@dataclass
class TrainReport:
    final_snapshot: ModelSnapshot
    loss_curve: list = field(default_factory=list)  # (step, lr, loss)
    lambda_records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    initial_hash: str = ""
    ref_hashes: list = field(default_factory=list)  # (step, hash) whenever the reference is set

    @property
    def total_steps(self) -> int:
        return len(self.loss_curve)

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "csv").mkdir(parents=True, exist_ok=True)
        save_snapshot(self.final_snapshot, out / "snapshots" / "final.snap")
        with open(out / "csv" / "loss_curve.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "lr", "loss"])
            for step, lr, loss in self.loss_curve:
                w.writerow([step, repr(float(lr)), repr(float(loss))])
        telemetry.export_lambda_csv(self.lambda_records, out / "csv" / "lambdas.csv")
        (out / "config.json").write_text(json.dumps(self.config, indent=2, sort_keys=True))
        manifest = {
            "final_hash": self.final_snapshot.content_hash,
            "initial_hash": self.initial_hash,
            "ref_hashes": [list(r) for r in self.ref_hashes],
            "total_steps": self.total_steps,
            "wall_time": self.wall_time,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return out

    @classmethod
    def load(cls, out_dir) -> "TrainReport":
        out = Path(out_dir)
        manifest = json.loads((out / "manifest.json").read_text())
        with open(out / "csv" / "loss_curve.csv") as f:
            curve = [(int(r["step"]), float(r["lr"]), float(r["loss"])) for r in csv.DictReader(f)]
        return cls(
            load_snapshot(out / "snapshots" / "final.snap"),
            curve,
            telemetry.read_lambda_csv(out / "csv" / "lambdas.csv"),
            json.loads((out / "config.json").read_text()),
            manifest["wall_time"],
            manifest["initial_hash"],
            [tuple(r) for r in manifest["ref_hashes"]],
        )


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_ratio: float) -> float:
    """Linear warmup over ``ceil(warmup_ratio * total_steps)`` steps, then cosine to zero."""
    if total_steps < 1:
        raise InvalidInputError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise InvalidInputError(f"step {step} outside [0, {total_steps}]")
    warmup = min(math.ceil(warmup_ratio * total_steps - 1e-9), total_steps - 1)
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def make_batches(dataset, batch_size: int, seed: int, epoch: int) -> list:
    """Seeded permutation of ``dataset`` cut into batches; the last one may be short."""
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    items = list(dataset)
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    return [[items[i] for i in order[s : s + batch_size]] for s in range(0, len(items), batch_size)]


def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


class Adam:
    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _optimize(model: PolicyModel, items, cfg: TrainConfig, objective, step0=0, curve=None):
    """Generic loop. ``objective(global_step, batch) -> (loss, grad)``."""
    curve = [] if curve is None else curve
    total = cfg.epochs * steps_per_epoch(len(items), cfg.batch_size)
    opt = Adam(model.params.size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    step = 0
    for epoch in range(cfg.epochs):
        for batch in make_batches(items, cfg.batch_size, cfg.seed, epoch):
            lr = cosine_lr(step, total, cfg.learning_rate, cfg.warmup_ratio)
            loss, grad = objective(step0 + step, batch)
            if cfg.grad_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > cfg.grad_clip:
                    grad = grad * (cfg.grad_clip / norm)
            model.set_params(opt.step(model.params, grad, lr))
            curve.append((step0 + step, lr, loss))
            step += 1
    return curve


def _echo(cfg: TrainConfig, **extra) -> dict:
    d = cfg.to_dict()
    d["optimizer"] = {"name": "adam", "beta1": cfg.adam_beta1, "beta2": cfg.adam_beta2,
                      "eps": cfg.adam_eps}
    d.update(extra)
    return d


def sft_loss_and_grad(model, batch):
    """Mean next-token cross-entropy over response tokens plus the closing EOS."""
    n_tok = sum(len(y) + 1 for _, y in batch)
    seq, grad = weighted_log_prob_grad(model, batch, np.full(len(batch), -1.0 / n_tok),
                                       append_eos=True)
    return float(-seq.sum() / n_tok), grad


def _as_pair(item):
    if isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], (tuple, list)):
        return tuple(item[0]), tuple(item[1])
    return (), tuple(item)


def sft_train(model: PolicyModel, corpus, config: TrainConfig) -> TrainReport:
    """Supervised training in place. ``corpus`` holds ``(prompt, response)`` pairs or bare responses."""
    corpus = [_as_pair(c) for c in corpus]
    if not corpus:
        raise InvalidInputError("SFT corpus is empty")
    t0 = time.perf_counter()
    initial = model.snapshot().content_hash
    curve = _optimize(model, corpus, config, lambda s, b: sft_loss_and_grad(model, b))
    return TrainReport(model.snapshot(), curve, [], _echo(config, method="sft"),
                       time.perf_counter() - t0, initial)


def _check_method_ref(cfg: TrainConfig, ref):
    if cfg.method is Method.SFT:
        raise ConfigError("use sft_train for supervised training", "method")
    if cfg.method is Method.SIMPO and ref is not None:
        raise ConfigError("SimPO is reference-free; ref must be None", "ref")
    if cfg.method.uses_reference and ref is None:
        raise ConfigError(f"{cfg.method.value} requires a reference snapshot", "ref")


def _dpo_objective(model, ref_holder, cfg, records, ref_hashes, reset_every=None):
    dcfg = DpoConfig(cfg.beta)

    def objective(step, batch):
        local = step - ref_holder["start"]
        if reset_every and local > 0 and local % reset_every == 0:
            ref_holder["ref"] = model.snapshot()
            ref_hashes.append((step, ref_holder["ref"].content_hash))
        loss, grad, lams = dpo_value_and_grad(model, ref_holder["ref"], batch, dcfg)
        records.append(LambdaRecord(step, lams.tolist()))
        return loss, grad

    return objective


def train_preference(policy_init: ModelSnapshot, ref: ModelSnapshot | None,
                     dataset: PreferenceDataset, config: TrainConfig) -> TrainReport:
    """Preference optimization from ``policy_init`` against ``ref`` (``None`` for SimPO)."""
    _check_method_ref(config, ref)
    dataset.require_nonempty()
    t0 = time.perf_counter()
    model = restore(policy_init)
    curve, records, ref_hashes = [], [], []
    m = config.method

    if m is Method.SIMPO:
        scfg = SimpoConfig(config.beta, config.gamma)
        _optimize(model, dataset.triples, config,
                  lambda s, b: simpo_value_and_grad(model, b, scfg), curve=curve)
    elif m in (Method.DPO, Method.TR_DPO):
        holder = {"ref": ref, "start": 0}
        ref_hashes.append((0, ref.content_hash))
        every = config.tr_dpo_update_every if m is Method.TR_DPO else None
        _optimize(model, dataset.triples, config,
                  _dpo_objective(model, holder, config, records, ref_hashes, every), curve=curve)
    else:  # sDPO
        parts = split(dataset, config.sdpo_stages)
        stage_ref = ref
        for i, part in enumerate(parts):
            if i > 0:
                stage_ref = model.snapshot()
            ref_hashes.append((len(curve), stage_ref.content_hash))
            holder = {"ref": stage_ref, "start": len(curve)}
            stage_cfg = config.replace(seed=config.seed + i)
            _optimize(model, part.triples, stage_cfg,
                      _dpo_objective(model, holder, stage_cfg, records, ref_hashes),
                      step0=len(curve), curve=curve)
            log.info("sDPO stage %d/%d done (%d triples)", i + 1, len(parts), len(part))

    return TrainReport(
        model.snapshot(), curve, records,
        _echo(config, dataset_hash=dataset.content_hash(),
              ref_hash=ref.content_hash if ref is not None else None),
        time.perf_counter() - t0, policy_init.content_hash, ref_hashes,
    )

