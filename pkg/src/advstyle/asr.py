"""Toy acoustic model: a per-frame tanh MLP trained with CTC."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .ctc import ctc_loss, greedy_decode
from .metrics import wer
from .signal import N_FILTERS, AudioClip, featurize
from .text import ALPHABET, BLANK, N_CLASSES, to_ids

log = logging.getLogger(__name__)

HIDDEN = 64
FORMAT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")
BLANK_INIT_BIAS = -8.0


class CheckpointError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class AcousticModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        expected = {"W1": (N_FILTERS, HIDDEN), "b1": (HIDDEN,), "W2": (HIDDEN, N_CLASSES), "b2": (N_CLASSES,)}
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise CheckpointError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise CheckpointError(f"parameter {name} contains non-finite values")
            setattr(self, name, arr)

    @classmethod
    def init(cls, seed: int = 0, blank_bias: float = BLANK_INIT_BIAS) -> "AcousticModel":
        rng = np.random.default_rng(seed)
        b2 = np.zeros(N_CLASSES)
        b2[BLANK] = blank_bias
        return cls(
            rng.normal(0.0, 1.0 / math.sqrt(N_FILTERS), (N_FILTERS, HIDDEN)),
            np.zeros(HIDDEN),
            rng.normal(0.0, 1.0 / math.sqrt(HIDDEN), (HIDDEN, N_CLASSES)),
            b2,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}


def mlp_log_probs(feats: ad.Value, W1, b1, W2, b2) -> ad.Value:
    """Per-frame log-probabilities; parameters may be arrays or Values."""
    ones = np.ones((feats.shape[0], 1))
    h = ad.tanh(ad.add(ad.matmul(feats, W1), ad.matmul(ones, ad.reshape(b1, (1, HIDDEN)))))
    logits = ad.add(ad.matmul(h, W2), ad.matmul(ones, ad.reshape(b2, (1, N_CLASSES))))
    return ad.log_softmax(logits)


def log_probs(model: AcousticModel, samples) -> ad.Value:
    """Front-end + MLP; differentiable w.r.t. ``samples`` when it is a Value."""
    return mlp_log_probs(featurize(samples), model.W1, model.b1, model.W2, model.b2)


def transcribe(model: AcousticModel, clip) -> str:
    samples = clip.samples if isinstance(clip, AudioClip) else clip
    return greedy_decode(log_probs(model, np.asarray(samples, dtype=np.float64)))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    heldout_exact: float = 0.0
    heldout_wer: float = 1.0
    n_train: int = 0
    n_heldout: int = 0


def split_indices(n: int, seed: int, heldout_frac: float = 0.2):
    """Deterministic 80/20 split by seeded shuffle."""
    perm = np.random.default_rng(seed).permutation(n)
    n_held = int(round(n * heldout_frac))
    return np.sort(perm[n_held:]), np.sort(perm[:n_held])


def evaluate(model: AcousticModel, feats_list, texts) -> tuple[float, float]:
    """(exact-match rate, corpus WER) on precomputed features."""
    if not texts:
        return 0.0, 0.0
    exact = 0
    errs = 0
    n_words = 0
    for f, t in zip(feats_list, texts):
        hyp = greedy_decode(mlp_log_probs(ad.Value(f), model.W1, model.b1, model.W2, model.b2))
        exact += hyp == t
        n = len(t.split())
        errs += wer(hyp, t) * n
        n_words += n
    return exact / len(texts), errs / n_words


def train(
    feats_list: list[np.ndarray],
    texts: list[str],
    epochs: int = 30,
    lr: float = 1e-2,
    seed: int = 0,
    heldout_frac: float = 0.2,
) -> tuple[AcousticModel, TrainReport]:
    """Adam on per-utterance CTC loss; returns the model and a metrics log.

    Inputs are normalised by training-set feature statistics during
    optimisation; the normalisation is folded into W1/b1 on return.
    """
    if len(feats_list) != len(texts):
        raise ValueError("train: features and transcripts differ in count")
    tr, ho = split_indices(len(texts), seed, heldout_frac)
    report = TrainReport(n_train=len(tr), n_heldout=len(ho))
    init = AcousticModel.init(seed, BLANK_INIT_BIAS)
    stacked = np.concatenate([feats_list[i] for i in tr]) if len(tr) else np.zeros((1, N_FILTERS))
    mu = stacked.mean(axis=0)
    sd = stacked.std(axis=0) + 1e-6
    norm = [(f - mu) / sd for f in feats_list]
    labels = [to_ids(t) for t in texts]

    params = [ad.Value(init.W1, True), ad.Value(init.b1, True), ad.Value(init.W2, True), ad.Value(init.b2, True)]
    opt = ad.Adam(params, lr=lr)
    rng = np.random.default_rng(seed + 1)

    def folded() -> AcousticModel:
        W1, b1, W2, b2 = (p.data for p in params)
        return AcousticModel(W1 / sd[:, None], b1 - (mu / sd) @ W1, W2.copy(), b2.copy())

    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(tr):
            opt.zero_grad()
            lp = mlp_log_probs(ad.Value(norm[i]), *params)
            loss = ad.mul(ctc_loss(lp, labels[i]), 1.0 / max(len(labels[i]), 1))
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(f"loss is NaN at epoch {epoch} (seed {seed})")
            ad.backward(loss)
            opt.step()
            total += float(loss.data)
        model = folded()
        ex, w = evaluate(model, [feats_list[i] for i in ho], [texts[i] for i in ho])
        row = {"epoch": epoch + 1, "loss": total / max(len(tr), 1), "heldout_exact": ex, "heldout_wer": w}
        report.epochs.append(row)
        log.info("epoch %d loss %.4f held-out exact %.3f wer %.3f", epoch + 1, row["loss"], ex, w)
    model = folded()
    report.heldout_exact, report.heldout_wer = evaluate(
        model, [feats_list[i] for i in ho], [texts[i] for i in ho]
    )
    return model, report


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: AcousticModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "alphabet": ALPHABET,
        "arrays": {
            n: {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}
            for n, a in model.arrays().items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> AcousticModel:
    path = Path(path)
    raw = path.read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: parse error at byte offset {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"{path}: checkpoint must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version!r} (expected {FORMAT_VERSION})")
    if doc.get("alphabet") != ALPHABET:
        raise CheckpointError(f"{path}: alphabet mismatch")
    arrays = doc.get("arrays", {})
    params = {}
    for name in PARAM_NAMES:
        if name not in arrays:
            raise CheckpointError(f"{path}: missing array {name}")
        entry = arrays[name]
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: array {name}: {data.size} values for shape {shape}")
        params[name] = data.reshape(shape)
    return AcousticModel(**params)
