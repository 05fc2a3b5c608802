import pytest

from predpo.data import PreferenceDataset, PreferenceTriple
from predpo.model import ArchConfig, Vocabulary, init_model
from predpo.task import build_desk_task

ACCEPTANCE_FILE = "test_acceptance.py"
_acceptance = []


@pytest.fixture(scope="session")
def small_arch():
    # 8*4 + 3*4*8 + 8 + 8*8 + 8 = 208 parameters
    return ArchConfig(Vocabulary(8), context=3, embed_dim=4, hidden_dim=8)


@pytest.fixture
def small_model(small_arch):
    return init_model(small_arch, seed=3)


@pytest.fixture(scope="session")
def desk():
    return build_desk_task(seed=0, n_prompts=96, n_eval_prompts=64, sft_epochs=6)


@pytest.fixture
def make_dataset():
    return random_dataset


def random_dataset(vocab, n, rng, max_len=5, name="rand"):
    content = list(vocab.content_ids)
    triples = []
    while len(triples) < n:
        prompt = tuple(int(t) for t in rng.choice(content, size=2))
        a = tuple(int(t) for t in rng.choice(content, size=int(rng.integers(1, max_len + 1))))
        b = tuple(int(t) for t in rng.choice(content, size=int(rng.integers(1, max_len + 1))))
        if a != b:
            triples.append(PreferenceTriple(prompt, a, b))
    return PreferenceDataset(triples, name)


def pytest_runtest_logreport(report):
    if report.when == "call" and ACCEPTANCE_FILE in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
