"""Fixed character alphabet shared by the synthesizer, the ASR and CTC."""
from __future__ import annotations

import numpy as np

ALPHABET = "abcdefghijklmnopqrstuvwxyz "
BLANK = 0
N_CLASSES = len(ALPHABET) + 1  # + CTC blank at index 0

_INDEX = {c: i + 1 for i, c in enumerate(ALPHABET)}


class AlphabetError(ValueError):
    def __init__(self, bad: str):
        super().__init__(f"characters outside alphabet: {sorted(set(bad))!r}")
        self.characters = bad


def validate(text: str) -> str:
    bad = "".join(c for c in text if c not in _INDEX)
    if bad:
        raise AlphabetError(bad)
    return text


def to_ids(text: str) -> np.ndarray:
    """Label ids (1..27) for ``text``; blank is never produced."""
    validate(text)
    return np.array([_INDEX[c] for c in text], dtype=np.int64)


def from_ids(ids) -> str:
    return "".join(ALPHABET[i - 1] for i in ids if i != BLANK)
