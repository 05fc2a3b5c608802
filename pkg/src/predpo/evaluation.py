"""Synthetic reward oracle and pairwise win-rate evaluation.

The oracle stands in for a learned reward model: each prompt owns a small set
of target tokens, a response earns credit for every target token it contains,
and loses credit for tokens beyond a length cap. The KL-regularized reward
objective that DPO implicitly solves is never optimized directly here; the
oracle only supplies ``r(x, y)`` for building pairs and for judging.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import EVAL_DECODING, GenerationConfig
from .errors import InvalidInputError
from .model import Vocabulary, sample_response


@dataclass(frozen=True)
class RewardOracle:
    vocab: Vocabulary = field(default_factory=Vocabulary)
    seed: int = 0
    n_targets: int = 3
    target_weight: float = 1.0
    length_cap: int = 6
    length_penalty: float = 0.5

    def targets(self, prompt) -> frozenset:
        digest = hashlib.sha256(
            json.dumps([self.seed, [int(t) for t in prompt]]).encode()
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        content = np.array(self.vocab.content_ids)
        k = min(self.n_targets, len(content))
        return frozenset(int(t) for t in rng.choice(content, size=k, replace=False))

    def score(self, prompt, response) -> float:
        targets = self.targets(prompt)
        hits = sum(1 for t in response if t in targets)
        overflow = max(0, len(response) - self.length_cap)
        return self.target_weight * hits - self.length_penalty * overflow

    __call__ = score

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = asdict(self.vocab)
        return d


def oracle_score(oracle, prompt, response) -> float:
    return float(oracle(prompt, response))


@dataclass
class EvalReport:
    win_rate: float
    tie_rate: float
    loss_rate: float
    avg_len_a: float
    avg_len_b: float
    n_prompts: int
    decoding: dict

    def summary(self) -> str:
        return (
            f"WR={self.win_rate:.4f} tie={self.tie_rate:.4f} loss={self.loss_rate:.4f} "
            f"len_a={self.avg_len_a:.2f} len_b={self.avg_len_b:.2f} n={self.n_prompts}"
        )

    def to_json(self) -> dict:
        return asdict(self)


def decode(model, prompt, decoding: GenerationConfig, index: int):
    return sample_response(
        model, prompt, decoding.temperature, decoding.top_p, decoding.max_len,
        rng_seed=(decoding.seed, index),
    )


def tally(outcomes) -> tuple:
    """``(win_rate, tie_rate, loss_rate)`` from +1/0/-1 outcomes; ties count half a win."""
    outcomes = list(outcomes)
    n = len(outcomes)
    wins = sum(1 for o in outcomes if o > 0)
    ties = sum(1 for o in outcomes if o == 0)
    losses = n - wins - ties
    return (wins + 0.5 * ties) / n, ties / n, (losses + 0.5 * ties) / n


def pairwise_win_rate(model_a, model_b, prompts, oracle,
                      decoding: GenerationConfig = EVAL_DECODING) -> EvalReport:
    """One seeded response per model and prompt; ``a`` wins when its oracle score is higher.

    ``loss_rate`` is reported symmetrically to ``win_rate`` (ties split in half),
    so ``win_rate + loss_rate == 1``.
    """
    prompts = [tuple(p) for p in prompts]
    if not prompts:
        raise InvalidInputError("no prompts given")
    outcomes, len_a, len_b = [], [], []
    for i, p in enumerate(prompts):
        ya, yb = decode(model_a, p, decoding, i), decode(model_b, p, decoding, i)
        sa, sb = oracle(p, ya), oracle(p, yb)
        outcomes.append((sa > sb) - (sa < sb))
        len_a.append(len(ya))
        len_b.append(len(yb))
    win, tie, loss = tally(outcomes)
    return EvalReport(win, tie, loss, float(np.mean(len_a)), float(np.mean(len_b)),
                      len(prompts), asdict(decoding))


def avg_response_length(model, prompts, decoding: GenerationConfig = EVAL_DECODING) -> float:
    prompts = [tuple(p) for p in prompts]
    if not prompts:
        raise InvalidInputError("no prompts given")
    return float(np.mean([len(decode(model, p, decoding, i)) for i, p in enumerate(prompts)]))


def mean_oracle_score(model, prompts, oracle, decoding: GenerationConfig = EVAL_DECODING) -> float:
    return float(np.mean([oracle(p, decode(model, p, decoding, i)) for i, p in enumerate(prompts)]))
