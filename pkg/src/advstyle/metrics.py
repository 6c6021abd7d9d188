"""Edit distance, word error rate, success rate and target-text generation."""
from __future__ import annotations

from typing import Hashable, Sequence

import numpy as np

from . import kernels


def levenshtein(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Edit distance over arbitrary tokens (characters of a str, or words)."""
    vocab: dict = {}
    ia = [vocab.setdefault(x, len(vocab)) for x in a]
    ib = [vocab.setdefault(x, len(vocab)) for x in b]
    return kernels.levenshtein_ids(ia, ib)


def words(text: str) -> list[str]:
    return text.split()


def word_distance(a: str, b: str) -> int:
    return levenshtein(words(a), words(b))


def wer(hypothesis, reference) -> float:
    """(S + D + I) / N at word level; accepts strings or word lists."""
    hyp = words(hypothesis) if isinstance(hypothesis, str) else list(hypothesis)
    ref = words(reference) if isinstance(reference, str) else list(reference)
    if not ref:
        raise ValueError("wer: reference must contain at least one word")
    return levenshtein(hyp, ref) / len(ref)


def success_rate(results) -> float:
    """Fraction of results with ``success`` true (objects or dicts)."""
    results = list(results)
    if not results:
        raise ValueError("success_rate: no results")
    n = sum(1 for r in results if (r["success"] if isinstance(r, dict) else r.success))
    return n / len(results)


class TargetGenerationError(RuntimeError):
    pass


def gen_target(
    source: str,
    vocabulary: Sequence[str],
    p_sub: float = 0.1,
    p_ins: float = 0.05,
    p_del: float = 0.05,
    seed: int = 0,
    max_retries: int = 100,
) -> tuple[str, int]:
    """Randomly substitute, insert before, or delete each source word.

    Returns the target text and its word-level distance from ``source``.
    Redraws until the target differs from the source.
    """
    for p in (p_sub, p_ins, p_del):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"edit probability {p} outside [0, 1]")
    if p_sub + p_ins + p_del > 1.0 + 1e-12:
        raise ValueError("p_sub + p_ins + p_del must not exceed 1")
    vocab = list(vocabulary)
    if not vocab and (p_sub > 0 or p_ins > 0):
        raise ValueError("gen_target: empty vocabulary")
    src = words(source)
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        out: list[str] = []
        for w in src:
            u = rng.random()
            if u < p_sub:
                choices = [v for v in vocab if v != w] or vocab
                out.append(choices[rng.integers(len(choices))])
            elif u < p_sub + p_ins:
                out.append(vocab[rng.integers(len(vocab))])
                out.append(w)
            elif u < p_sub + p_ins + p_del:
                continue
            else:
                out.append(w)
        if out != src:
            target = " ".join(out)
            return target, levenshtein(out, src)
    raise TargetGenerationError(f"no distinct target after {max_retries} draws for {source!r}")
