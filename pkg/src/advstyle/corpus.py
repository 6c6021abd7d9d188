"""Synthetic corpus generation and the JSONL manifest format."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .signal import AudioClip, ClipMeta, StyleCode, synth_utterance, wav_read, wav_write

LEXICON = (
    "the cat dog sat ran red big map sun sky hello world see book all off tree moon "
    "fish bird blue green jump quick brown fox lazy over zero seven vault water kite "
    "joy yes no up wind hill rain pen cup box gold ship road time park snow queen"
).split()

PITCH_RANGE = (100.0, 250.0)  # per-utterance base pitch, Hz
PITCH_JITTER = 0.05  # per-character log-normal spread
RHYTHM_RANGE = (0.08, 0.15)  # per-character duration, s


@dataclass
class ManifestRecord:
    id: str
    path: str
    transcript: str
    pitch: list[float]
    duration: list[float]
    seed: int

    @property
    def style(self) -> StyleCode:
        return StyleCode(self.pitch, self.duration)


def random_text(rng: np.random.Generator, min_words: int = 1, max_words: int = 5) -> str:
    n = int(rng.integers(min_words, max_words + 1))
    return " ".join(LEXICON[i] for i in rng.integers(len(LEXICON), size=n))


def random_style(rng: np.random.Generator, n_chars: int) -> StyleCode:
    base = rng.uniform(*PITCH_RANGE)
    pitch = np.clip(base * np.exp(rng.normal(0.0, PITCH_JITTER, n_chars)), 80.0, 400.0)
    rhythm = rng.uniform(*RHYTHM_RANGE, n_chars)
    return StyleCode(pitch, rhythm)


def generate(n: int, seed: int, min_words: int = 1, max_words: int = 5):
    """Yield (record-without-path, clip) pairs; fully determined by ``seed``."""
    if n <= 0:
        raise ValueError(f"corpus size must be positive, got {n}")
    rng = np.random.default_rng(seed)
    for i in range(n):
        text = random_text(rng, min_words, max_words)
        style = random_style(rng, len(text))
        clip_seed = int(rng.integers(2**31))
        lens = np.rint(style.rhythm * 16000) / 16000  # store exactly what is rendered
        rec = ManifestRecord(f"utt{i:05d}", "", text, style.pitch.tolist(), lens.tolist(), clip_seed)
        yield rec, synth_utterance(text, StyleCode(style.pitch, lens), seed=clip_seed)


def write_corpus(out_dir, n: int, seed: int, min_words: int = 1, max_words: int = 5) -> Path:
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for rec, clip in generate(n, seed, min_words, max_words):
            rec.path = f"wav/{rec.id}.wav"
            wav_write(clip, out / rec.path)
            fh.write(json.dumps(asdict(rec)) + "\n")
    return manifest


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    recs = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                recs.append(ManifestRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad manifest record ({exc})") from exc
    return recs


def load_clip(manifest_path, rec: ManifestRecord) -> AudioClip:
    """Read a corpus WAV and attach transcript/span metadata from the manifest."""
    clip = wav_read(Path(manifest_path).parent / rec.path)
    lens = np.rint(np.asarray(rec.duration) * clip.sample_rate).astype(int)
    bounds = np.concatenate(([0], np.cumsum(lens)))
    clip.meta = ClipMeta(rec.transcript, [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])])
    return clip
