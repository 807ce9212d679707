"""Shared fixtures: packaged data paths, the session-wide overfit model, and
a summary line per acceptance criterion printed at the end of the run."""

import time
from importlib import resources

import pytest

from qgen.corpus import build_training_sequence, build_vocab, parse_corpus
from qgen.model import ModelConfig, ModelParams
from qgen.training import GenreMode, TrainConfig, train

ACCEPTANCE_LINES = []


def acceptance(num, ok, detail):
    """Record one acceptance criterion outcome and assert it."""
    line = "ACCEPTANCE %d %s: %s" % (num, "PASS" if ok else "FAIL", detail)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line("  " + line)


def data_path(name):
    return str(resources.files("qgen").joinpath("data", name))


OVERFIT_SEED = 123


@pytest.fixture(scope="session")
def overfit_run():
    """Hybrid training overfit on the 32-poem corpus (H=64, d=32).

    Shared by the overfit/echo, keyword fidelity, prosody compliance, genre
    control and determinism acceptance tests; trained once per session.
    """
    report = parse_corpus(data_path("overfit_corpus.txt"))
    assert report.rejected == 0
    poems = report.poems
    vocab = build_vocab(poems)
    examples = [build_training_sequence(p, vocab, echo=True) for p in poems]
    cfg = ModelConfig(vocab_size=len(vocab), d=32, H=64, H_dec=64,
                      seed=OVERFIT_SEED)
    mparams = ModelParams.initialize(cfg)
    tcfg = TrainConfig(epochs=2000, minibatch=8, seed=OVERFIT_SEED,
                       genre_mode=GenreMode.HYBRID)
    t0 = time.monotonic()
    _, reports, _ = train(examples, mparams, tcfg, stop_below_loss=0.145)
    elapsed = time.monotonic() - t0
    return {"poems": poems, "vocab": vocab, "examples": examples,
            "mparams": mparams, "reports": reports, "elapsed": elapsed}
