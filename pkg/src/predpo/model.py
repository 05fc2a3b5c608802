"""A tiny autoregressive policy over a toy vocabulary.

The network is a one-hidden-layer MLP over a fixed window of the most recent
``context`` tokens::

    x_t    = concat(embed[tok_{t-C}], ..., embed[tok_{t-1}])
    h_t    = tanh(x_t @ w1 + b1)
    logits = h_t @ w2 + b2

A prompt ``x`` and response ``y`` are laid out as the stream
``[PAD]*C + x + [BOS] + y``; only response positions are scored, so prompt
tokens never enter ``log pi(y|x)`` or ``|y|``.

Parameters are stored float32-exact (every value is representable in
float32) while all arithmetic runs in float64. That keeps the snapshot file
bit-exact with a 32-bit parameter block and keeps gradient checks precise.
"""

from __future__ import annotations

import hashlib
import json
import string
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompatibleSnapshotError, InvalidInputError

SNAPSHOT_MAGIC = b"PDPOSNAP"
SNAPSHOT_VERSION = 1

_GLYPHS = string.ascii_lowercase + string.digits + string.ascii_uppercase


@dataclass(frozen=True)
class Vocabulary:
    size: int = 32
    bos: int = 0
    eos: int = 1
    pad: int = 2

    def __post_init__(self):
        if self.size < 4:
            raise InvalidInputError("vocabulary needs at least one non-special token")
        specials = (self.bos, self.eos, self.pad)
        if len(set(specials)) != 3:
            raise InvalidInputError("BOS, EOS and PAD must be distinct")
        if any(not 0 <= s < self.size for s in specials):
            raise InvalidInputError("special ids must lie in [0, size)")

    @property
    def specials(self) -> frozenset:
        return frozenset((self.bos, self.eos, self.pad))

    @property
    def content_ids(self) -> tuple:
        return tuple(t for t in range(self.size) if t not in self.specials)

    def render(self, tokens) -> str:
        """Reversible plain-text rendering (one glyph per content token)."""
        names = {self.bos: "^", self.eos: "$", self.pad: "_"}
        out = []
        for i, t in enumerate(self.content_ids):
            names[t] = _GLYPHS[i] if i < len(_GLYPHS) else f"<{t}>"
        for t in tokens:
            out.append(names[int(t)])
        return "".join(out)


def response_length(tokens, vocab: Vocabulary) -> int:
    """Number of non-special tokens, the ``|y|`` used for length normalization."""
    return sum(1 for t in tokens if t not in vocab.specials)


def check_tokens(tokens, vocab: Vocabulary, what="sequence", allow_empty=True):
    toks = tuple(int(t) for t in tokens)
    if not allow_empty and not toks:
        raise InvalidInputError(f"{what} must be nonempty")
    for t in toks:
        if not 0 <= t < vocab.size:
            raise InvalidInputError(f"{what} token id {t} outside [0, {vocab.size})")
        if t in vocab.specials:
            raise InvalidInputError(f"{what} contains special token id {t}")
    return toks


@dataclass(frozen=True)
class ArchConfig:
    vocab: Vocabulary = field(default_factory=Vocabulary)
    context: int = 6
    embed_dim: int = 16
    hidden_dim: int = 64

    def __post_init__(self):
        if min(self.context, self.embed_dim, self.hidden_dim) < 1:
            raise InvalidInputError("layer sizes must be positive")

    @property
    def shapes(self) -> dict:
        V, C, d, H = self.vocab.size, self.context, self.embed_dim, self.hidden_dim
        return {
            "embed": (V, d),
            "w1": (C * d, H),
            "b1": (H,),
            "w2": (H, V),
            "b2": (V,),
        }

    @property
    def n_params(self) -> int:
        V, C, d, H = self.vocab.size, self.context, self.embed_dim, self.hidden_dim
        return V * d + C * d * H + H + H * V + V

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab.size,
            "bos": self.vocab.bos,
            "eos": self.vocab.eos,
            "pad": self.vocab.pad,
            "context": self.context,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        vocab = Vocabulary(d["vocab_size"], d["bos"], d["eos"], d["pad"])
        return cls(vocab, d["context"], d["embed_dim"], d["hidden_dim"])

    def canonical(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def _content_hash(arch: ArchConfig, params32: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(SNAPSHOT_MAGIC)
    h.update(arch.canonical())
    h.update(params32.astype("<f4").tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ModelSnapshot:
    """Immutable, content-addressed copy of a policy's parameters."""

    arch: ArchConfig
    params: np.ndarray
    content_hash: str

    @classmethod
    def from_params(cls, arch: ArchConfig, params) -> "ModelSnapshot":
        p = np.array(params, dtype=np.float32).ravel()
        if p.size != arch.n_params:
            raise IncompatibleSnapshotError(
                f"expected {arch.n_params} parameters, got {p.size}"
            )
        p.setflags(write=False)
        return cls(arch, p, _content_hash(arch, p))

    def __eq__(self, other):
        return isinstance(other, ModelSnapshot) and other.content_hash == self.content_hash

    def __hash__(self):
        return hash(self.content_hash)

    def __repr__(self):
        return f"ModelSnapshot({self.content_hash[:12]}, n_params={self.params.size})"


class PolicyModel:
    """Mutable parameters of the policy. Single writer; read via snapshots elsewhere."""

    def __init__(self, arch: ArchConfig, params):
        params = np.array(params, dtype=np.float64).ravel()
        if params.size != arch.n_params:
            raise IncompatibleSnapshotError(
                f"expected {arch.n_params} parameters, got {params.size}"
            )
        self.arch = arch
        self.params = params

    @property
    def vocab(self) -> Vocabulary:
        return self.arch.vocab

    def set_params(self, params):
        """Assign new parameters, rounded to float32-representable values."""
        self.params = np.asarray(params, dtype=np.float32).astype(np.float64)

    def snapshot(self) -> ModelSnapshot:
        return ModelSnapshot.from_params(self.arch, self.params)

    def load_snapshot(self, snap: ModelSnapshot):
        if snap.arch != self.arch:
            raise IncompatibleSnapshotError("snapshot architecture does not match model")
        self.params = snap.params.astype(np.float64)

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.arch, self.params.copy())


def snapshot(model: PolicyModel) -> ModelSnapshot:
    return model.snapshot()


def restore(snap: ModelSnapshot, arch: ArchConfig | None = None) -> PolicyModel:
    if arch is not None and arch != snap.arch:
        raise IncompatibleSnapshotError("snapshot architecture does not match requested arch")
    return PolicyModel(snap.arch, snap.params.astype(np.float64))


def init_model(arch: ArchConfig | None = None, seed: int = 0) -> PolicyModel:
    arch = arch or ArchConfig()
    rng = np.random.default_rng(seed)
    C, d, H = arch.context, arch.embed_dim, arch.hidden_dim
    scales = {
        "embed": 1.0,
        "w1": 1.0 / np.sqrt(C * d),
        "b1": 0.0,
        "w2": 0.1 / np.sqrt(H),
        "b2": 0.0,
    }
    parts = [rng.standard_normal(shape) * scales[name] for name, shape in arch.shapes.items()]
    model = PolicyModel(arch, np.concatenate([p.ravel() for p in parts]))
    model.set_params(model.params)
    return model


# --- forward / backward -------------------------------------------------------


def _unpack(arch: ArchConfig, params: np.ndarray) -> dict:
    out, i = {}, 0
    for name, shape in arch.shapes.items():
        n = int(np.prod(shape))
        out[name] = params[i : i + n].reshape(shape)
        i += n
    return out


def _params64(model) -> np.ndarray:
    return np.asarray(model.params, dtype=np.float64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _rows(arch: ArchConfig, pairs, append_eos=False):
    """Context windows, targets and owning-sequence ids for every scored position."""
    vocab, C = arch.vocab, arch.context
    ctx, tgt, seg = [], [], []
    for i, (prompt, response) in enumerate(pairs):
        prompt = check_tokens(prompt, vocab, "prompt")
        response = check_tokens(response, vocab, "response", allow_empty=append_eos)
        targets = response + ((vocab.eos,) if append_eos else ())
        stream = np.array((vocab.pad,) * C + prompt + (vocab.bos,) + targets, dtype=np.int64)
        start = C + len(prompt) + 1
        windows = np.lib.stride_tricks.sliding_window_view(stream, C)
        ctx.append(windows[start - C : start - C + len(targets)])
        tgt.append(np.array(targets, dtype=np.int64))
        seg.append(np.full(len(targets), i, dtype=np.int64))
    if not ctx:
        empty = np.zeros((0,), dtype=np.int64)
        return np.zeros((0, C), dtype=np.int64), empty, empty
    return np.concatenate(ctx), np.concatenate(tgt), np.concatenate(seg)


def _forward(w: dict, ctx: np.ndarray):
    X = w["embed"][ctx].reshape(len(ctx), -1)
    h = np.tanh(X @ w["w1"] + w["b1"])
    logp = _log_softmax(h @ w["w2"] + w["b2"])
    return logp, (X, h)


def _backward(w: dict, ctx, cache, logp, targets, row_weights) -> np.ndarray:
    """Gradient of sum_i row_weights[i] * logp[i, targets[i]] w.r.t. flat params."""
    X, h = cache
    n = len(targets)
    G = -np.exp(logp) * row_weights[:, None]
    G[np.arange(n), targets] += row_weights
    d_w2 = h.T @ G
    d_b2 = G.sum(axis=0)
    da = (G @ w["w2"].T) * (1.0 - h * h)
    d_w1 = X.T @ da
    d_b1 = da.sum(axis=0)
    dX = (da @ w["w1"].T).reshape(ctx.shape + (w["embed"].shape[1],))
    d_embed = np.zeros_like(w["embed"])
    np.add.at(d_embed, ctx, dX)
    return np.concatenate([g.ravel() for g in (d_embed, d_w1, d_b1, d_w2, d_b2)])


def token_log_probs(model, pairs, append_eos=False):
    """Per-position log-probs of every scored token and the owning sequence index."""
    ctx, tgt, seg = _rows(model.arch, pairs, append_eos)
    w = _unpack(model.arch, _params64(model))
    logp, _ = _forward(w, ctx)
    return logp[np.arange(len(tgt)), tgt], seg


def batch_log_probs(model, pairs, append_eos=False) -> np.ndarray:
    """``log pi(y_i | x_i)`` for each ``(x_i, y_i)`` in ``pairs``."""
    rows, seg = token_log_probs(model, pairs, append_eos)
    return np.bincount(seg, weights=rows, minlength=len(pairs))


def weighted_log_prob_grad(model, pairs, seq_weights, append_eos=False):
    """Sequence log-probs and the gradient of ``sum_i seq_weights[i] * log pi(y_i|x_i)``.

    Repeated ``(x, y)`` pairs are scored once with their weights summed, so
    contributions of opposite sign cancel exactly.
    """
    pairs = [(tuple(x), tuple(y)) for x, y in pairs]
    index = {}
    owner = np.array([index.setdefault(p, len(index)) for p in pairs], dtype=np.int64)
    unique = list(index)
    weights = np.zeros(len(unique))
    np.add.at(weights, owner, np.asarray(seq_weights, dtype=np.float64))
    ctx, tgt, seg = _rows(model.arch, unique, append_eos)
    w = _unpack(model.arch, _params64(model))
    logp, cache = _forward(w, ctx)
    rows = logp[np.arange(len(tgt)), tgt]
    seq = np.bincount(seg, weights=rows, minlength=len(unique))
    return seq[owner], _backward(w, ctx, cache, logp, tgt, weights[seg])


def per_token_log_probs(model, prompt, response) -> list:
    check_tokens(response, model.arch.vocab, "response", allow_empty=False)
    rows, _ = token_log_probs(model, [(prompt, response)])
    return rows.tolist()


def sequence_log_prob(model, prompt, response) -> float:
    """Natural-log probability of ``response`` given ``prompt``; always <= 0."""
    check_tokens(response, model.arch.vocab, "response", allow_empty=False)
    return float(batch_log_probs(model, [(prompt, response)])[0])


def next_token_log_probs(model, prompt, prefix=()) -> np.ndarray:
    """Log next-token distribution after ``prompt`` and a partial ``prefix`` response."""
    arch = model.arch
    vocab, C = arch.vocab, arch.context
    stream = (vocab.pad,) * C + tuple(prompt) + (vocab.bos,) + tuple(prefix)
    ctx = np.array([stream[-C:]], dtype=np.int64)
    logp, _ = _forward(_unpack(arch, _params64(model)), ctx)
    return logp[0]


def next_token_probs(model, prompt, prefix=()) -> np.ndarray:
    return np.exp(next_token_log_probs(model, prompt, prefix))


# --- sampling -----------------------------------------------------------------


def nucleus_filter(probs, top_p: float) -> np.ndarray:
    """Keep the smallest probability-sorted prefix with mass >= top_p; renormalize."""
    if not 0.0 < top_p <= 1.0:
        raise InvalidInputError("top_p must lie in (0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    k = int(np.searchsorted(cum, top_p * cum[-1] - 1e-12)) + 1
    keep = order[: min(k, len(order))]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def sample_response(
    model, prompt, temperature: float = 1.0, top_p: float = 1.0, max_len: int = 8, rng_seed=0
) -> tuple:
    """Autoregressively sample a response (EOS excluded).

    BOS and PAD are never emitted and EOS is blocked at the first position, so
    every response has at least one token. ``temperature == 0`` is greedy with
    ties going to the lowest token id.
    """
    if max_len < 1:
        raise InvalidInputError("max_len must be >= 1")
    if temperature < 0:
        raise InvalidInputError("temperature must be >= 0")
    vocab = model.arch.vocab
    prompt = check_tokens(prompt, vocab, "prompt")
    rng = np.random.default_rng(rng_seed)
    out = []
    while len(out) < max_len:
        logp = next_token_log_probs(model, prompt, out)
        logp[[vocab.bos, vocab.pad]] = -np.inf
        if not out:
            logp[vocab.eos] = -np.inf
        if temperature == 0:
            tok = int(np.argmax(logp))
        else:
            z = logp / temperature
            p = np.exp(z - z.max())
            p = nucleus_filter(p / p.sum(), top_p)
            tok = int(rng.choice(len(p), p=p))
        if tok == vocab.eos:
            break
        out.append(tok)
    return tuple(out)


# --- snapshot files -----------------------------------------------------------


def save_snapshot(snap: ModelSnapshot, path) -> Path:
    """Write ``magic | version | header length | JSON header | <f4 params``."""
    header = json.dumps(
        {"arch": snap.arch.to_dict(), "content_hash": snap.content_hash,
         "n_params": int(snap.params.size), "dtype": "<f4"},
        sort_keys=True,
    ).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<II", SNAPSHOT_VERSION, len(header)))
        f.write(header)
        f.write(snap.params.astype("<f4").tobytes())
    return path


def load_snapshot(path) -> ModelSnapshot:
    raw = Path(path).read_bytes()
    if raw[: len(SNAPSHOT_MAGIC)] != SNAPSHOT_MAGIC:
        raise IncompatibleSnapshotError(f"{path}: not a snapshot file")
    off = len(SNAPSHOT_MAGIC)
    version, hlen = struct.unpack_from("<II", raw, off)
    if version != SNAPSHOT_VERSION:
        raise IncompatibleSnapshotError(f"{path}: unsupported version {version}")
    off += 8
    header = json.loads(raw[off : off + hlen])
    off += hlen
    arch = ArchConfig.from_dict(header["arch"])
    params = np.frombuffer(raw, dtype="<f4", offset=off)
    if params.size != header["n_params"] or params.size != arch.n_params:
        raise IncompatibleSnapshotError(f"{path}: parameter block has wrong size")
    snap = ModelSnapshot.from_params(arch, params)
    if snap.content_hash != header["content_hash"]:
        raise IncompatibleSnapshotError(f"{path}: content hash mismatch")
    return snap
