import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from dcsr.corpus import Passage, QAExample, label_answers  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def make_example(question, answers, positive_texts, negative_texts=()):
    pos = tuple(label_answers(Passage.from_text(t, title=f"pos{i}"), answers)
                for i, t in enumerate(positive_texts))
    neg = tuple(label_answers(Passage.from_text(t, title=f"neg{i}"), answers)
                for i, t in enumerate(negative_texts))
    return QAExample(question, tuple(answers), pos, neg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
