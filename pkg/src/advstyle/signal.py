"""Synthetic speech, the differentiable feature front-end, and WAV I/O.

Each character is a harmonic tone whose spectral envelope (its timbre) is
fixed per character, while the fundamental (pitch) and the segment length
(rhythm) come from a :class:`StyleCode`. The same renderer backs
:func:`synth_utterance` (plain arrays) and the differentiable decoder in
:mod:`advstyle.style`.
"""
from __future__ import annotations

import logging
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels
from .text import ALPHABET, to_ids, validate

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
FRAME_LEN = 400
HOP = 160
N_FILTERS = 16
LOG_FLOOR = 1e-8

# synthesis constants
RAMP_TAU = 0.002  # s, sigmoid on/off ramp
REPEAT_GAP = 0.015  # s, silence inset on each side of a repeated-character boundary
WINDOW_PAD = 20 * RAMP_TAU  # sigmoid tail below 1e-8 at the cut
F_ROLLOFF = 4000.0  # Hz, harmonic amplitude rolloff centre
W_ROLLOFF = 100.0
F_CUTOFF = F_ROLLOFF + 10 * W_ROLLOFF
K_MAX = 64
F_REF = 160.0
TONE_GAIN = 0.07
TIMBRE_SEED = 20240611
TIMBRE_FLOOR = -0.65  # natural-log amplitude

# front-end constants
FB_LOW, FB_HIGH = 250.0, 3800.0
FB_MIN_HALF_WIDTH = 220.0  # Hz
FB_GAIN = 1e-1  # energy of a unit sinusoid at a bin centre, before mel weighting


class SignalError(ValueError):
    pass


class WavFormatError(SignalError):
    pass


@dataclass
class ClipMeta:
    transcript: str
    spans: list[tuple[int, int]]  # per-character [start, end) in samples

    def frame_spans(self, hop: int = HOP) -> list[tuple[int, int]]:
        return [(s // hop, -(-e // hop)) for s, e in self.spans]


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    meta: ClipMeta | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def without_meta(self) -> "AudioClip":
        return AudioClip(self.samples.copy(), self.sample_rate, None)


@dataclass
class StyleCode:
    """Per-character pitch (Hz) and rhythm (segment duration, s)."""

    pitch: np.ndarray
    rhythm: np.ndarray

    def __post_init__(self):
        self.pitch = np.atleast_1d(np.asarray(self.pitch, dtype=np.float64))
        self.rhythm = np.atleast_1d(np.asarray(self.rhythm, dtype=np.float64))
        if self.pitch.shape != self.rhythm.shape:
            raise SignalError(
                f"style code pitch/rhythm lengths differ: {len(self.pitch)} vs {len(self.rhythm)}"
            )

    def __len__(self) -> int:
        return len(self.pitch)

    def copy(self) -> "StyleCode":
        return StyleCode(self.pitch.copy(), self.rhythm.copy())


# ---------------------------------------------------------------------------
# timbre table


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


FILTER_CENTRES = mel_to_hz(np.linspace(hz_to_mel(FB_LOW), hz_to_mel(FB_HIGH), N_FILTERS))
_ENV_MU = hz_to_mel(FILTER_CENTRES)
_ENV_SIGMA = float(_ENV_MU[1] - _ENV_MU[0])


def _make_timbres(n_chars: int, seed: int):
    """Well-separated log-amplitude envelopes plus per-harmonic phases."""
    rng = np.random.default_rng(seed)
    cand = rng.uniform(TIMBRE_FLOOR, 0.0, size=(40 * n_chars, N_FILTERS))
    chosen = [0]
    dist = np.linalg.norm(cand - cand[0], axis=1)
    for _ in range(n_chars - 1):
        j = int(np.argmax(dist))
        chosen.append(j)
        dist = np.minimum(dist, np.linalg.norm(cand - cand[j], axis=1))
    gains = cand[chosen]
    phases = rng.uniform(0.0, 2 * np.pi, size=(n_chars, K_MAX))
    return gains, phases


TIMBRE_GAINS, TIMBRE_PHASES = _make_timbres(len(ALPHABET), TIMBRE_SEED)


def harmonic_amplitudes(char_id: int, f0: float):
    """Amplitudes a_k and da_k/df0 for harmonics k = 1..K of ``f0``."""
    if f0 <= 0:
        return np.zeros(0), np.zeros(0)
    n = int(min(K_MAX, np.floor(F_CUTOFF / f0)))
    if n == 0:
        return np.zeros(0), np.zeros(0)
    k = np.arange(1, n + 1, dtype=np.float64)
    f = k * f0
    mel = hz_to_mel(f)
    dmel_df = 2595.0 / (np.log(10.0) * (700.0 + f))
    z = (mel[:, None] - _ENV_MU[None, :]) / _ENV_SIGMA
    phi = np.exp(-0.5 * z * z)
    dphi = -phi * z / _ENV_SIGMA  # d phi / d mel
    g = TIMBRE_GAINS[char_id - 1]
    num, den = phi @ g, phi.sum(axis=1)
    dnum, dden = dphi @ g, dphi.sum(axis=1)
    env = num / den
    denv_df = (dnum - env * dden) / den * dmel_df
    roll = 1.0 / (1.0 + np.exp((f - F_ROLLOFF) / W_ROLLOFF))
    droll_df = -roll * (1.0 - roll) / W_ROLLOFF
    level = TONE_GAIN * np.sqrt(f0 / F_REF)
    a = level * np.exp(env) * roll
    # chain rule through f = k*f0 plus the sqrt(f0) level term
    da = a * (k * denv_df + 0.5 / f0) + level * np.exp(env) * droll_df * k
    return a, da


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def boundary_insets(char_ids) -> tuple[np.ndarray, np.ndarray]:
    """Silence insets (s) at the left/right of each character.

    Only boundaries between identical characters get a gap, so that CTC can
    place the blank a repeated symbol requires.
    """
    ids = np.asarray(char_ids)
    n = len(ids)
    left = np.zeros(n)
    right = np.zeros(n)
    if n > 1:
        rep = ids[1:] == ids[:-1]
        left[1:][rep] = REPEAT_GAP
        right[:-1][rep] = REPEAT_GAP
    return left, right


def segment_window(start: float, end: float, inset_l: float, inset_r: float, n_total: int):
    n0 = int(np.floor((start + inset_l - WINDOW_PAD) * SAMPLE_RATE))
    n1 = int(np.ceil((end - inset_r + WINDOW_PAD) * SAMPLE_RATE))
    return max(n0, 0), min(n1, n_total)


def render_segment(char_id, f0, start, end, inset_l, inset_r, n0, n1, need_grad=False):
    """One character's tone on samples [n0, n1).

    Returns the waveform and, when ``need_grad``, the partials of every sample
    with respect to ``f0``, ``start`` and ``end``.
    """
    t = np.arange(n0, n1) / SAMPLE_RATE
    u1 = (t - start - inset_l) / RAMP_TAU
    u2 = (end - inset_r - t) / RAMP_TAU
    s1, s2 = _sig(u1), _sig(u2)
    mask = s1 * s2
    a, da = harmonic_amplitudes(char_id, f0)
    n = len(a)
    if n == 0:
        y = np.zeros(n1 - n0)
        return (y, (y, y, y)) if need_grad else y
    rel = t - start
    theta = (2 * np.pi * f0) * rel
    rot = np.exp(1j * TIMBRE_PHASES[char_id - 1, :n])
    if not need_grad:
        return mask * kernels.harmonic_series(a * rot, theta)[0].imag
    k = np.arange(1, n + 1, dtype=np.float64)
    series = kernels.harmonic_series(np.stack([a * rot, a * k * rot, da * rot]), theta)
    tone = series[0].imag
    y = mask * tone
    u = series[1].real * (2 * np.pi)  # d tone / d (f0 * rel)
    dtone_df0 = series[2].imag + u * rel
    dtone_ds = -u * f0
    dmask_ds = -s1 * (1 - s1) / RAMP_TAU * s2
    dmask_de = s1 * s2 * (1 - s2) / RAMP_TAU
    return y, (mask * dtone_df0, dmask_ds * tone + mask * dtone_ds, dmask_de * tone)


def render(char_ids, pitch, starts, ends, n_total: int) -> np.ndarray:
    out = np.zeros(n_total)
    left, right = boundary_insets(char_ids)
    for i, c in enumerate(char_ids):
        n0, n1 = segment_window(starts[i], ends[i], left[i], right[i], n_total)
        if n1 > n0:
            out[n0:n1] += render_segment(int(c), pitch[i], starts[i], ends[i], left[i], right[i], n0, n1)
    return out


def quantize_durations(rhythm: np.ndarray) -> np.ndarray:
    """Segment lengths in whole samples."""
    return np.rint(np.asarray(rhythm) * SAMPLE_RATE).astype(np.int64)


def synth_utterance(text: str, style: StyleCode, seed: int = 0, snr_db: float | None = 30.0) -> AudioClip:
    """Render ``text`` with ``style``; add seeded Gaussian noise at ``snr_db``.

    Durations are snapped to whole samples so the clip length equals the
    summed durations and the metadata spans are exact.
    """
    if not text:
        raise SignalError("synth_utterance: empty text")
    validate(text)
    ids = to_ids(text)
    if len(style) != len(ids):
        raise SignalError(f"style code has {len(style)} entries for {len(ids)} characters")
    if np.any(style.rhythm <= 0) or np.any(style.pitch <= 0):
        raise SignalError("synth_utterance: durations and pitches must be positive")
    lens = quantize_durations(style.rhythm)
    if np.any(lens < 1):
        raise SignalError("synth_utterance: duration shorter than one sample")
    bounds = np.concatenate(([0], np.cumsum(lens)))
    n_total = int(bounds[-1])
    clean = render(ids, style.pitch, bounds[:-1] / SAMPLE_RATE, bounds[1:] / SAMPLE_RATE, n_total)
    if snr_db is not None:
        rms = np.sqrt(np.mean(clean**2))
        rng = np.random.default_rng(seed)
        clean = clean + rng.normal(0.0, rms * 10 ** (-snr_db / 20.0), size=n_total)
    spans = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    return AudioClip(clean, SAMPLE_RATE, ClipMeta(text, spans))


# ---------------------------------------------------------------------------
# feature front-end


def _build_filterbank():
    n = np.arange(FRAME_LEN)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * (n + 0.5) / FRAME_LEN)
    bin_hz = SAMPLE_RATE / FRAME_LEN
    lo = FB_LOW - 2 * FB_MIN_HALF_WIDTH
    hi = FB_HIGH + 2 * FB_MIN_HALF_WIDTH
    freqs = np.arange(np.ceil(max(lo, bin_hz) / bin_hz), np.floor(hi / bin_hz) + 1) * bin_hz
    scale = 2.0 * np.sqrt(FB_GAIN) / window.sum()
    arg = 2 * np.pi * np.outer(n, freqs) / SAMPLE_RATE
    cos_bank = window[:, None] * np.cos(arg) * scale
    sin_bank = window[:, None] * np.sin(arg) * scale
    # triangular weights in Hz, mel-spaced centres, half-width at least FB_MIN_HALF_WIDTH
    c = FILTER_CENTRES
    half = np.maximum(np.gradient(c), FB_MIN_HALF_WIDTH)
    weights = np.clip(1.0 - np.abs(freqs[None, :] - c[:, None]) / half[:, None], 0.0, None)
    return freqs, cos_bank, sin_bank, weights.T.copy()


BIN_FREQS, COS_BANK, SIN_BANK, MEL_WEIGHTS = _build_filterbank()


def n_frames(n_samples: int) -> int:
    return 0 if n_samples < FRAME_LEN else 1 + (n_samples - FRAME_LEN) // HOP


def featurize(samples) -> ad.Value:
    """(T, N_FILTERS) log filterbank energies, differentiable w.r.t. samples."""
    x = ad.as_value(samples)
    if x.ndim != 1:
        raise SignalError(f"featurize: expected 1-D samples, got shape {x.shape}")
    if x.shape[0] < FRAME_LEN:
        raise SignalError(f"featurize: {x.shape[0]} samples is shorter than one frame ({FRAME_LEN})")
    fr = ad.frames(x, FRAME_LEN, HOP)
    re = ad.matmul(fr, COS_BANK)
    im = ad.matmul(fr, SIN_BANK)
    power = ad.add(ad.square(re), ad.square(im))
    energy = ad.matmul(power, MEL_WEIGHTS)
    return ad.log(ad.add(energy, LOG_FLOOR))


def features(samples: np.ndarray) -> np.ndarray:
    return featurize(np.asarray(samples, dtype=np.float64)).data


# ---------------------------------------------------------------------------
# WAV I/O


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        log.warning("clipping %d samples outside [-1, 1]", int(np.sum(np.abs(x) > 1.0)))
    return np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")


def quantize(samples: np.ndarray) -> np.ndarray:
    """The samples a WAV round trip would return."""
    return to_pcm16(samples).astype(np.float64) / 32768.0


def wav_write(clip: AudioClip, path) -> None:
    if clip.sample_rate != SAMPLE_RATE:
        raise WavFormatError(f"sample rate {clip.sample_rate} != {SAMPLE_RATE}")
    pcm = to_pcm16(clip.samples)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def wav_read(path, expected_rate: int = SAMPLE_RATE) -> AudioClip:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: malformed or unsupported WAV ({exc})") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: mono required, file has {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: 16-bit PCM required, sample width is {8 * width} bits")
    if expected_rate is not None and rate != expected_rate:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(data, rate, None)
