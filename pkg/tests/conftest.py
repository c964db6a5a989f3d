import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Four 4-second clips with two instruments, rendered and labelled."""
    from rollnet.corpus import CorpusConfig, build_corpus
    from rollnet.rolls import InstrumentVocab

    vocab = InstrumentVocab.default().subset(["piano", "flute"])
    cfg = CorpusConfig(n_clips=4, clip_seconds=4.0, vocab=vocab, instruments_per_clip=(1, 2))
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(3, cfg, root)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
