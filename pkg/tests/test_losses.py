import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from predpo.data import PreferenceTriple
from predpo.errors import InvalidInputError
from predpo.losses import (DpoConfig, SimpoConfig, dpo_analytic_gradient, dpo_loss,
                           dpo_terms_from_logratios, lambda_weight, logratios, simpo_loss,
                           simpo_value_and_grad)
from predpo.model import init_model, weighted_log_prob_grad


def ref_sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def ref_softplus(z):
    return math.log1p(math.exp(z))


def central_diff(f, params, h=1e-4):
    g = np.zeros_like(params)
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = h
        g[i] = (f(params + e) - f(params - e)) / (2 * h)
    return g


class Params:
    def __init__(self, arch, params):
        self.arch, self.params = arch, params


def test_lambda_examples():
    assert lambda_weight(0.7, 0.7, 3.0) == 0.5
    assert lambda_weight(1.0, 0.0, 1.0) == pytest.approx(ref_sigmoid(1.0), abs=1e-15)
    assert lambda_weight(1.0, 0.0, 1.0) == pytest.approx(0.731059, abs=1e-6)
    assert lambda_weight(-10.0, 10.0, 0.05) == pytest.approx(ref_sigmoid(-1.0), abs=1e-15)
    assert lambda_weight(-10.0, 10.0, 0.05) == pytest.approx(0.268941, abs=1e-6)


def test_lambda_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        lambda_weight(float("nan"), 0.0, 1.0)
    with pytest.raises(InvalidInputError):
        lambda_weight(0.0, float("inf"), 1.0)


# |beta * (r - p)| <= 30 keeps the sigmoid clear of float saturation at 0 and 1
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.001, 0.3))
def test_lambda_in_open_interval_and_monotone(r, p, beta):
    lam = lambda_weight(r, p, beta)
    assert 0.0 < lam < 1.0
    assert lambda_weight(r + 1.0, p, beta) >= lam
    assert lambda_weight(r, p + 1.0, beta) <= lam


def test_dpo_loss_hand_values():
    losses, lams = dpo_terms_from_logratios(np.array([2.0]), np.array([0.0]), 0.05)
    assert losses[0] == pytest.approx(-math.log(ref_sigmoid(0.1)), abs=1e-15)
    assert losses[0] == pytest.approx(0.644397, abs=1e-6)


def test_beta_scales_argument_linearly():
    pol, ref = np.array([1.3, -0.4, 2.0]), np.array([0.2, 0.1, -1.0])
    l1, _ = dpo_terms_from_logratios(pol, ref, 0.1)
    l2, _ = dpo_terms_from_logratios(pol, ref, 0.2)
    np.testing.assert_allclose(l1, [ref_softplus(-0.1 * m) for m in pol - ref], atol=1e-14)
    np.testing.assert_allclose(l2, [ref_softplus(-0.2 * m) for m in pol - ref], atol=1e-14)


def test_extreme_margins_do_not_overflow():
    losses, lams = dpo_terms_from_logratios(np.array([-800.0, 800.0]), np.zeros(2), 1.0)
    assert losses[0] == pytest.approx(800.0)
    assert losses[1] == pytest.approx(0.0, abs=1e-300)
    assert np.all(np.isfinite(lams))


def test_identical_snapshots_give_ln2(small_model, make_dataset):
    ds = make_dataset(small_model.vocab, 8, np.random.default_rng(1))
    snap = small_model.snapshot()
    loss, rec = dpo_loss(small_model, snap, ds.triples, DpoConfig(0.3))
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert rec.lambdas == [0.5] * 8


def test_margin_monotonicity():
    m = np.linspace(-5, 5, 41)
    dpo, _ = dpo_terms_from_logratios(m, np.zeros_like(m), 0.5)
    assert np.all(np.diff(dpo) < 0)


def test_simpo_hand_values(small_arch):
    model = init_model(small_arch, 0)
    # same response under both roles is forbidden, so use two responses with equal normalized log-prob
    model.params[:] = 0.0  # uniform next-token distribution
    batch = [PreferenceTriple((3,), (4, 5), (6, 7, 3))]
    assert simpo_loss(model, batch, SimpoConfig(2.0, 0.0)) == pytest.approx(math.log(2), abs=1e-12)
    assert simpo_loss(model, batch, SimpoConfig(2.0, 1.2)) == pytest.approx(ref_softplus(1.2), abs=1e-12)
    assert ref_softplus(1.2) == pytest.approx(1.463283, abs=1e-6)


def test_simpo_length_normalization_identity():
    # per-token logs duplicated, length doubled: normalized term is unchanged
    per_tok = np.array([-0.3, -1.1, -0.7])
    beta = 2.5
    short = beta * per_tok.sum() / per_tok.size
    doubled = np.repeat(per_tok, 2)
    assert beta * doubled.sum() / doubled.size == pytest.approx(short, abs=1e-15)


def test_simpo_ignores_reference(small_model, make_dataset):
    ds = make_dataset(small_model.vocab, 6, np.random.default_rng(2))
    # simpo_loss has no reference argument at all; changing any other model leaves it untouched
    before = simpo_loss(small_model, ds.triples, SimpoConfig())
    other = init_model(small_model.arch, 99)
    other.set_params(other.params * 3)
    assert simpo_loss(small_model, ds.triples, SimpoConfig()) == before


def test_simpo_monotone_in_margin():
    u = np.linspace(-3, 3, 31)
    assert np.all(np.diff(np.logaddexp(0, -u)) < 0)


def test_gradient_at_identity_is_half_weighted(small_model, make_dataset):
    ds = make_dataset(small_model.vocab, 4, np.random.default_rng(3))
    beta = 0.7
    g = dpo_analytic_gradient(small_model, small_model.snapshot(), ds.triples, DpoConfig(beta))
    pairs = [(t.prompt, t.chosen) for t in ds] + [(t.prompt, t.rejected) for t in ds]
    n = len(ds)
    _, score = weighted_log_prob_grad(small_model, pairs, np.r_[np.ones(n), -np.ones(n)] / n)
    np.testing.assert_allclose(g, -beta * 0.5 * score, rtol=1e-12, atol=1e-15)


def test_symmetric_batch_has_zero_gradient(small_model):
    x, a, b = (3, 4), (5, 6), (7,)
    batch = [PreferenceTriple(x, a, b), PreferenceTriple(x, b, a)]
    g = dpo_analytic_gradient(small_model, small_model.snapshot(), batch, DpoConfig(0.4))
    assert np.all(g == 0.0)


def test_dpo_gradient_matches_finite_differences(small_arch, make_dataset):
    rng = np.random.default_rng(4)
    policy = init_model(small_arch, 10)
    ref = init_model(small_arch, 11).snapshot()
    batch = make_dataset(small_arch.vocab, 4, rng).triples
    cfg = DpoConfig(0.8)
    f = lambda p: dpo_loss(Params(small_arch, p), ref, batch, cfg)[0]  # noqa: E731
    fd = central_diff(f, policy.params.copy())
    g = dpo_analytic_gradient(policy, ref, batch, cfg)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


def test_simpo_gradient_matches_finite_differences(small_arch, make_dataset):
    policy = init_model(small_arch, 12)
    batch = make_dataset(small_arch.vocab, 4, np.random.default_rng(5)).triples
    cfg = SimpoConfig(2.0, 0.5)
    f = lambda p: simpo_loss(Params(small_arch, p), batch, cfg)  # noqa: E731
    fd = central_diff(f, policy.params.copy())
    _, g = simpo_value_and_grad(policy, batch, cfg)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


def test_guide_and_sft_lambdas_share_one_formula(small_arch, make_dataset):
    batch = make_dataset(small_arch.vocab, 5, np.random.default_rng(6)).triples
    policy = init_model(small_arch, 1)
    sft, guide = init_model(small_arch, 2).snapshot(), init_model(small_arch, 3).snapshot()
    pol_lr = logratios(policy, batch)
    for ref in (sft, guide):
        _, rec = dpo_loss(policy, ref, batch, DpoConfig(0.5))
        expected = [ref_sigmoid(0.5 * (r - p)) for r, p in zip(logratios(ref, batch), pol_lr)]
        np.testing.assert_allclose(rec.lambdas, expected, atol=1e-12)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        DpoConfig(0.0)
    with pytest.raises(InvalidInputError):
        SimpoConfig(1.0, -0.1)
    with pytest.raises(InvalidInputError):
        dpo_loss(init_model(seed=0), init_model(seed=0).snapshot(), [], DpoConfig())
