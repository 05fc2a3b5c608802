"""DPO and SimPO objectives, the DPO example weight lambda, and its gradient form.

For a triple ``(x, y+, y-)`` write the log-ratio of a model ``pi`` as
``r_pi = log pi(y+|x) - log pi(y-|x)``. The DPO loss is
``softplus(-beta * (r_theta - r_ref))`` and its gradient is

    grad L = -beta * E[ lambda * grad r_theta ],
    lambda = sigmoid(beta * r_ref - beta * r_theta).

Using a guiding snapshot instead of the SFT snapshot only changes where
``r_ref`` comes from, so both cases go through :func:`lambda_weight`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .model import batch_log_probs, weighted_log_prob_grad


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidInputError("beta must be finite and > 0")


@dataclass(frozen=True)
class SimpoConfig:
    beta: float = 2.5
    gamma: float = 1.2

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidInputError("beta must be finite and > 0")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidInputError("gamma must be finite and >= 0")


@dataclass
class LambdaRecord:
    step: int
    lambdas: list


def log_sigmoid(z):
    """``log sigmoid(z) = -softplus(-z)``, stable for large ``|z|``."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def lambda_weight(ref_logratio, policy_logratio, beta):
    """``sigmoid(beta * ref_logratio - beta * policy_logratio)``; vectorized."""
    ref = np.asarray(ref_logratio, dtype=np.float64)
    pol = np.asarray(policy_logratio, dtype=np.float64)
    if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(pol)) and math.isfinite(beta)):
        raise InvalidInputError("lambda_weight inputs must be finite")
    out = sigmoid(beta * ref - beta * pol)
    return float(out) if out.ndim == 0 else out


def _pairs(batch):
    batch = list(batch)
    if not batch:
        raise InvalidInputError("batch must be nonempty")
    return batch, [(t.prompt, t.chosen) for t in batch] + [(t.prompt, t.rejected) for t in batch]


def logratios(model, batch) -> np.ndarray:
    """``log pi(y+|x) - log pi(y-|x)`` per triple."""
    batch, pairs = _pairs(batch)
    lp = batch_log_probs(model, pairs)
    n = len(batch)
    return lp[:n] - lp[n:]


def dpo_terms_from_logratios(policy_lr, ref_lr, beta):
    """Per-example losses and lambdas from precomputed log-ratios."""
    margin = beta * (np.asarray(policy_lr) - np.asarray(ref_lr))
    return np.logaddexp(0.0, -margin), lambda_weight(ref_lr, policy_lr, beta)


def dpo_loss(policy, ref, batch, cfg: DpoConfig, step: int = 0):
    """Mean DPO loss over ``batch`` and the per-example lambdas as a :class:`LambdaRecord`."""
    losses, lams = dpo_terms_from_logratios(logratios(policy, batch), logratios(ref, batch),
                                            cfg.beta)
    return float(np.mean(losses)), LambdaRecord(step, np.atleast_1d(lams).tolist())


def dpo_analytic_gradient(policy, ref, batch, cfg: DpoConfig):
    """``-beta * mean(lambda * grad log-ratio)``, assembled from per-example score gradients."""
    return dpo_value_and_grad(policy, ref, batch, cfg)[1]


def dpo_value_and_grad(policy, ref, batch, cfg: DpoConfig, ref_lr=None):
    """Loss, gradient and lambdas in one pass. ``ref_lr`` may be precomputed."""
    batch, pairs = _pairs(batch)
    n = len(batch)
    if ref_lr is None:
        ref_lr = logratios(ref, batch)
    lp = batch_log_probs(policy, pairs)
    pol_lr = lp[:n] - lp[n:]
    losses, lams = dpo_terms_from_logratios(pol_lr, ref_lr, cfg.beta)
    lams = np.atleast_1d(lams)
    coef = -cfg.beta * lams / n
    _, grad = weighted_log_prob_grad(policy, pairs, np.concatenate([coef, -coef]))
    return float(np.mean(losses)), grad, lams


def simpo_margins(policy, batch, cfg: SimpoConfig) -> np.ndarray:
    batch, pairs = _pairs(batch)
    n = len(batch)
    lp = batch_log_probs(policy, pairs)
    lens = np.array([len(y) for _, y in pairs], dtype=np.float64)
    norm = cfg.beta * lp / lens
    return norm[:n] - norm[n:] - cfg.gamma


def simpo_loss(policy, batch, cfg: SimpoConfig) -> float:
    """Mean SimPO loss: length-normalized log-probs, target margin ``gamma``, no reference."""
    return float(np.mean(np.logaddexp(0.0, -simpo_margins(policy, batch, cfg))))


def simpo_value_and_grad(policy, batch, cfg: SimpoConfig):
    batch, pairs = _pairs(batch)
    n = len(batch)
    lens = np.array([len(y) for _, y in pairs], dtype=np.float64)
    u = simpo_margins(policy, batch, cfg)
    w = sigmoid(-u) / n
    seq_w = -cfg.beta * np.concatenate([w, -w]) / lens
    _, grad = weighted_log_prob_grad(policy, pairs, seq_w)
    return float(np.mean(np.logaddexp(0.0, -u))), grad
