import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from predpo.data import (GenerationConfig, PreferenceDataset, PreferenceTriple,
                         build_on_policy_dataset, dataset_avg_nld, load_jsonl,
                         normalized_length_difference, pair_by_score, save_jsonl, split)
from predpo.errors import DatasetParseError, EmptyDatasetError, InvalidInputError, ValidationError
from predpo.evaluation import RewardOracle


def triple_of_lengths(a, b):
    return PreferenceTriple((3,), (4,) * a, (5,) * b)


def test_jsonl_round_trip(tmp_path, make_dataset, small_arch):
    ds = make_dataset(small_arch.vocab, 100, np.random.default_rng(0))
    path = save_jsonl(ds, tmp_path / "d.jsonl")
    back = load_jsonl(path)
    assert len(back) == 100
    assert [t.to_json() for t in back] == [t.to_json() for t in ds]
    save_jsonl(back, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_jsonl_record_schema(tmp_path):
    ds = PreferenceDataset([PreferenceTriple((3,), (4, 5), (6,), {"chosen_score": 1.0,
                                                                  "rejected_score": 0.0})])
    line = save_jsonl(ds, tmp_path / "d.jsonl").read_text().strip()
    assert set(json.loads(line)) == {"prompt", "chosen", "rejected", "meta"}


def test_identical_responses_rejected(tmp_path):
    (tmp_path / "bad.jsonl").write_text('{"prompt":[3],"chosen":[4],"rejected":[4]}\n')
    with pytest.raises(ValidationError):
        load_jsonl(tmp_path / "bad.jsonl")


def test_score_inversion_rejected(tmp_path):
    rec = {"prompt": [3], "chosen": [4], "rejected": [5],
           "meta": {"chosen_score": 0.1, "rejected_score": 0.1}}
    (tmp_path / "bad.jsonl").write_text(json.dumps(rec) + "\n")
    with pytest.raises(ValidationError):
        load_jsonl(tmp_path / "bad.jsonl")


def test_malformed_line_names_line_number(tmp_path):
    good = '{"prompt":[3],"chosen":[4],"rejected":[5]}'
    (tmp_path / "bad.jsonl").write_text(good + "\n" + good + "\n{not json\n")
    with pytest.raises(DatasetParseError, match=":3:"):
        load_jsonl(tmp_path / "bad.jsonl")


def test_empty_file_loads_but_cannot_train(tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    ds = load_jsonl(tmp_path / "empty.jsonl")
    assert len(ds) == 0
    with pytest.raises(EmptyDatasetError):
        ds.require_nonempty()


def test_pairing_by_score():
    assert pair_by_score(list("abcdef"), [0.9, 0.1, 0.5, 0.5, 0.5, 0.5]) == (0, 1)
    assert pair_by_score(list("abcdef"), [0.5] * 6) is None
    # ties at the extremes go to the earliest sample
    assert pair_by_score(list("abcd"), [1.0, 2.0, 2.0, 0.0]) == (1, 3)


class ConstantOracle:
    def __call__(self, prompt, response):
        return 1.0


class FlakyOracle(RewardOracle):
    def __call__(self, prompt, response):
        if prompt == (3, 3):
            raise RuntimeError("scorer crashed")
        return super().__call__(prompt, response)


def test_all_equal_scores_dropped(small_model):
    ds = build_on_policy_dataset(small_model.snapshot(), [(3, 4), (5, 6)], GenerationConfig(),
                                 ConstantOracle())
    assert len(ds) == 0


def test_oracle_failure_skips_prompt(small_arch, small_model, caplog):
    oracle = FlakyOracle(small_arch.vocab, n_targets=2)
    ds = build_on_policy_dataset(small_model.snapshot(), [(3, 3), (4, 5)],
                                 GenerationConfig(max_len=6), oracle)
    assert all(t.prompt != (3, 3) for t in ds)
    assert "scorer crashed" in caplog.text


def test_on_policy_dataset_deterministic_and_ordered(desk):
    gen = GenerationConfig(seed=5)
    prompts = desk.prompts[:50]
    a = build_on_policy_dataset(desk.sft, prompts, gen, desk.oracle)
    b = build_on_policy_dataset(desk.sft, prompts, gen, desk.oracle, jobs=4)
    assert a.content_hash() == b.content_hash()
    assert len(a) > 0
    remaining = iter(prompts)
    assert all(any(t.prompt == p for p in remaining) for t in a)  # subsequence, input order
    for t in a:
        assert t.meta["chosen_score"] > t.meta["rejected_score"]
        assert desk.oracle(t.prompt, t.chosen) == t.meta["chosen_score"]


def test_empty_prompt_list_rejected(small_model):
    with pytest.raises(InvalidInputError):
        build_on_policy_dataset(small_model.snapshot(), [], GenerationConfig(), ConstantOracle())


def test_generation_config_invariants():
    assert GenerationConfig().n_samples == 6
    with pytest.raises(InvalidInputError):
        GenerationConfig(n_samples=1)


@pytest.mark.parametrize("a,b,expected", [(100, 50, 0.5), (50, 100, 0.5), (7, 7, 0.0),
                                          (7, 3, 4 / 7)])
def test_nld_values(a, b, expected):
    assert normalized_length_difference(triple_of_lengths(a, b)) == expected


def test_nld_zero_length():
    with pytest.raises(InvalidInputError):
        normalized_length_difference((0, 3))


@given(st.integers(1, 10_000), st.integers(1, 10_000))
def test_nld_bounded_and_symmetric(a, b):
    v = normalized_length_difference((a, b))
    assert 0.0 <= v <= 1.0
    assert v == normalized_length_difference((b, a))
    assert (v == 0.0) == (a == b)


def test_dataset_avg_nld():
    ds = [triple_of_lengths(7, 3), triple_of_lengths(100, 50)]
    assert dataset_avg_nld(ds) == pytest.approx((4 / 7 + 0.5) / 2, abs=1e-15)
    assert dataset_avg_nld(ds) == pytest.approx(0.5357, abs=1e-4)
    assert dataset_avg_nld([triple_of_lengths(100, 50), triple_of_lengths(4, 4)]) == 0.25
    assert dataset_avg_nld([triple_of_lengths(2, 2), triple_of_lengths(5, 5)]) == 0.0
    with pytest.raises(EmptyDatasetError):
        dataset_avg_nld([])


@pytest.mark.parametrize("n,k,sizes", [(100, 2, [50, 50]), (101, 2, [51, 50]), (10, 1, [10]),
                                       (10, 3, [4, 3, 3])])
def test_split_sizes(make_dataset, small_arch, n, k, sizes):
    ds = make_dataset(small_arch.vocab, n, np.random.default_rng(n))
    parts = split(ds, k)
    assert [len(p) for p in parts] == sizes
    assert [t for p in parts for t in p] == ds.triples


def test_split_invalid(make_dataset, small_arch):
    ds = make_dataset(small_arch.vocab, 3, np.random.default_rng(0))
    for k in (0, 4):
        with pytest.raises(InvalidInputError):
            split(ds, k)
