import numpy as np
import pytest

from advstyle import asr, corpus
from advstyle.signal import features, quantize


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture(scope="session")
def trained_model():
    """Small gated ASR shared by the unit tests (the acceptance suite trains its own)."""
    pairs = list(corpus.generate(400, seed=11))
    feats = [features(quantize(c.samples)) for _, c in pairs]
    texts = [r.transcript for r, _ in pairs]
    model, rep = asr.train(feats, texts, epochs=30, seed=0)
    assert rep.heldout_exact >= 0.9
    return model


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
