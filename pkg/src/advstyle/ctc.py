"""CTC loss with exact forward-backward gradients, and the greedy decoder."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels
from .text import BLANK, from_ids, to_ids


class InfeasibleTargetError(ValueError):
    """No alignment of the target fits in the available frames."""


def min_frames(labels) -> int:
    """Frames needed to emit ``labels``: one per symbol plus a blank between repeats."""
    labels = list(labels)
    return len(labels) + sum(1 for a, b in zip(labels, labels[1:]) if a == b)


def check_feasible(n_frames: int, labels) -> None:
    need = min_frames(labels)
    if n_frames < need:
        raise InfeasibleTargetError(
            f"no valid alignment: target needs {need} frames, only {n_frames} available"
        )


def ctc_loss(log_probs: ad.Value, target) -> ad.Value:
    """Negative log of the total probability of all alignments of ``target``.

    ``log_probs`` is a (T, C) Value of per-frame log-probabilities with the
    blank at column 0. ``target`` is a string or a sequence of label ids.
    """
    labels = to_ids(target) if isinstance(target, str) else np.asarray(target, dtype=np.int64)
    if log_probs.ndim != 2:
        raise ad.ShapeError("ctc_loss", log_probs.shape, ("T", "C"))
    check_feasible(log_probs.shape[0], labels)
    nll, grad = kernels.ctc_forward_backward(log_probs.data, labels, BLANK)
    if not np.isfinite(nll):
        # reachable only if some required emission has probability zero
        raise InfeasibleTargetError("no valid alignment: total path probability is zero")
    return ad.custom(np.array(nll), (log_probs,), lambda g: (g * grad,), "ctc_loss")


def collapse(path) -> list[int]:
    """Merge repeated symbols, then drop blanks."""
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != BLANK:
            out.append(p)
        prev = p
    return out


def best_path(log_probs) -> np.ndarray:
    data = log_probs.data if isinstance(log_probs, ad.Value) else np.asarray(log_probs)
    return np.argmax(data, axis=1)  # first maximum wins ties


def greedy_decode(log_probs) -> str:
    return from_ids(collapse(best_path(log_probs)))
