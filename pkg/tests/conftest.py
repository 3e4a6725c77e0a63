import pytest

from cfx.corpus import Lexicon, tokenize
from cfx.synthworld import SynthSpec, generate

# acceptance criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def lexicon():
    return Lexicon.default()


@pytest.fixture
def toks(lexicon):
    def _toks(text):
        return tokenize(text, lexicon)

    return _toks


@pytest.fixture(scope="session")
def small_world():
    return generate(SynthSpec(n_classes=5, images_per_class=8, seed=3))


@pytest.fixture(scope="session")
def default_world():
    return generate(SynthSpec())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k[2:])):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {key}  {detail}")
