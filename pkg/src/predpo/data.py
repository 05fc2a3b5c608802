"""Preference triples, JSONL I/O, on-policy pair construction and length metrics."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetParseError, EmptyDatasetError, InvalidInputError, ValidationError
from .model import Vocabulary, sample_response

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreferenceTriple:
    prompt: tuple
    chosen: tuple
    rejected: tuple
    meta: dict | None = None

    def __post_init__(self):
        for name in ("prompt", "chosen", "rejected"):
            object.__setattr__(self, name, tuple(int(t) for t in getattr(self, name)))
        if self.chosen == self.rejected:
            raise ValidationError("chosen and rejected responses are identical")
        if not self.chosen or not self.rejected:
            raise ValidationError("responses must be nonempty")
        meta = self.meta or {}
        cs, rs = meta.get("chosen_score"), meta.get("rejected_score")
        if cs is not None and rs is not None and not cs > rs:
            raise ValidationError(
                f"score inversion: chosen_score={cs} is not above rejected_score={rs}"
            )

    def to_json(self) -> dict:
        return {
            "prompt": list(self.prompt),
            "chosen": list(self.chosen),
            "rejected": list(self.rejected),
            "meta": self.meta,
        }


@dataclass
class PreferenceDataset:
    triples: list = field(default_factory=list)
    name: str = "dataset"
    provenance: str = "offline"

    def __len__(self):
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)

    def __getitem__(self, i):
        return self.triples[i]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for t in self.triples:
            h.update(json.dumps(t.to_json(), sort_keys=True).encode())
            h.update(b"\n")
        return h.hexdigest()

    def require_nonempty(self):
        if not self.triples:
            raise EmptyDatasetError(f"dataset {self.name!r} is empty")


@dataclass(frozen=True)
class GenerationConfig:
    n_samples: int = 6
    temperature: float = 0.8
    top_p: float = 0.95
    max_len: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise InvalidInputError("n_samples must be >= 2")
        if self.max_len < 1:
            raise InvalidInputError("max_len must be >= 1")


# decoding used for evaluation, as opposed to data generation
EVAL_DECODING = GenerationConfig(n_samples=2, temperature=0.7, top_p=0.9)


def save_jsonl(dataset: PreferenceDataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for t in dataset.triples:
            f.write(json.dumps(t.to_json(), sort_keys=True) + "\n")
    return path


def load_jsonl(path, name=None, provenance="offline") -> PreferenceDataset:
    triples = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                triple = PreferenceTriple(
                    obj["prompt"], obj["chosen"], obj["rejected"], obj.get("meta")
                )
            except ValidationError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from e
            except (ValueError, KeyError, TypeError) as e:
                raise DatasetParseError(f"{path}:{lineno}: malformed record ({e})") from e
            triples.append(triple)
    return PreferenceDataset(triples, name or Path(path).stem, provenance)


def normalized_length_difference(triple) -> float:
    """``|len(y+) - len(y-)| / max(len(y+), len(y-))``; accepts a triple or a length pair."""
    if isinstance(triple, PreferenceTriple):
        a, b = len(triple.chosen), len(triple.rejected)
    else:
        a, b = triple
    if a < 1 or b < 1:
        raise InvalidInputError("response lengths must be >= 1")
    return abs(a - b) / max(a, b)


def dataset_avg_nld(dataset) -> float:
    items = list(dataset)
    if not items:
        raise EmptyDatasetError("average NLD of an empty dataset")
    return float(np.mean([normalized_length_difference(t) for t in items]))


def split(dataset: PreferenceDataset, k: int) -> list:
    """Contiguous, order-preserving partition into ``k`` parts; remainder goes first."""
    n = len(dataset)
    if n == 0 or not 1 <= k <= n:
        raise InvalidInputError(f"cannot split {n} triples into {k} parts")
    base, extra = divmod(n, k)
    parts, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        parts.append(PreferenceDataset(
            dataset.triples[start : start + size],
            f"{dataset.name}[{i + 1}/{k}]",
            dataset.provenance,
        ))
        start += size
    return parts


def pair_by_score(responses, scores):
    """Indices of the best and worst response, earliest index winning ties.

    Returns ``None`` when every score is equal.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if np.all(scores == scores[0]):
        return None
    return int(np.argmax(scores)), int(np.argmin(scores))


def _prompt_triple(model, i, prompt, gen, oracle):
    responses = [
        sample_response(model, prompt, gen.temperature, gen.top_p, gen.max_len,
                        rng_seed=(gen.seed ^ i, j))
        for j in range(gen.n_samples)
    ]
    try:
        scores = [float(oracle(prompt, r)) for r in responses]
    except Exception as e:  # noqa: BLE001 - oracle is user supplied
        log.warning("oracle failed on prompt %d (%s); skipping", i, e)
        return None
    picked = pair_by_score(responses, scores)
    if picked is None:
        return None
    hi, lo = picked
    return PreferenceTriple(
        prompt, responses[hi], responses[lo],
        {"chosen_score": scores[hi], "rejected_score": scores[lo], "source": "on-policy"},
    )


def build_on_policy_dataset(model, prompts, gen: GenerationConfig, oracle, jobs=1,
                            name="on-policy") -> PreferenceDataset:
    """Sample ``gen.n_samples`` responses per prompt and pair best against worst.

    Prompts whose samples all score identically are dropped. ``oracle`` is any
    callable ``(prompt, response) -> float``.
    """
    prompts = [tuple(p) for p in prompts]
    if not prompts:
        raise InvalidInputError("no prompts given")
    work = lambda ip: _prompt_triple(model, ip[0], ip[1], gen, oracle)  # noqa: E731
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(work, enumerate(prompts)))
    else:
        results = [work(ip) for ip in enumerate(prompts)]
    triples = [t for t in results if t is not None]
    log.info("built %d pairs from %d prompts", len(triples), len(prompts))
    return PreferenceDataset(triples, name, "on-policy")


# --- synthetic task -----------------------------------------------------------


def synthetic_prompts(n: int, vocab: Vocabulary, seed: int = 0, length: int = 2) -> list:
    rng = np.random.default_rng(seed)
    content = np.array(vocab.content_ids)
    return [tuple(int(t) for t in rng.choice(content, size=length)) for _ in range(n)]


def synthetic_sft_corpus(prompts, oracle, seed: int = 0, per_prompt: int = 4,
                         min_len: int = 2, max_len: int = 7, target_rate: float = 0.3) -> list:
    """Noisy demonstrations: random responses with the prompt's target tokens mixed in.

    The SFT policy learns a broad distribution so that on-policy samples vary in
    oracle score and preference training has something to learn.
    """
    rng = np.random.default_rng(seed)
    content = np.array(oracle.vocab.content_ids)
    corpus = []
    for prompt in prompts:
        targets = np.array(sorted(oracle.targets(prompt)))
        for _ in range(per_prompt):
            n = int(rng.integers(min_len, max_len + 1))
            resp = rng.choice(content, size=n)
            hits = rng.random(n) < target_rate
            resp[hits] = rng.choice(targets, size=int(hits.sum()))
            corpus.append((tuple(prompt), tuple(int(t) for t in resp)))
    return corpus
