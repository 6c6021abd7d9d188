"""Disentangled toy voice model: content/style encoders and a differentiable decoder.

Content is the character sequence; style is per-character pitch and
duration. Timbre belongs to the character and is never transferred.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .signal import (
    FRAME_LEN,
    HOP,
    RAMP_TAU,
    SAMPLE_RATE,
    AudioClip,
    ClipMeta,
    SignalError,
    StyleCode,
    boundary_insets,
    features,
    render,
    render_segment,
    segment_window,
)
from .text import ALPHABET, from_ids, to_ids

PITCH_RANGE = (80.0, 400.0)
RHYTHM_RANGE = (0.02, 0.6)
SELECTIONS = ("pitch", "rhythm", "both")

_MIN_LAG = int(SAMPLE_RATE / PITCH_RANGE[1])
_MAX_LAG = int(np.ceil(SAMPLE_RATE / PITCH_RANGE[0]))


class EncodingError(ValueError):
    pass


@dataclass
class ContentCode:
    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if np.any((self.ids < 1) | (self.ids > len(ALPHABET))):
            raise EncodingError("content code index outside the alphabet")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def text(self) -> str:
        return from_ids(self.ids)

    def __eq__(self, other) -> bool:
        return isinstance(other, ContentCode) and np.array_equal(self.ids, other.ids)


# ---------------------------------------------------------------------------
# analysis helpers


def _autocorr_pitch(x: np.ndarray) -> tuple[float, float]:
    """(f0, peak normalised autocorrelation) in the 80-400 Hz lag band.

    Short segments search a truncated lag band (at least two 400 Hz periods).
    """
    n = len(x)
    x = x - x.mean() if n else x
    max_lag = min(_MAX_LAG, n - n // 3)
    if max_lag < 2 * _MIN_LAG:
        raise EncodingError(f"segment too short for one pitch period ({n} samples)")
    lags = np.arange(_MIN_LAG - 1, max_lag + 2)
    r = np.empty(len(lags))
    for j, L in enumerate(lags):
        a, b = x[: n - L], x[L:]
        den = np.sqrt(np.dot(a, a) * np.dot(b, b))
        r[j] = np.dot(a, b) / den if den > 0 else 0.0
    inner = r[1:-1]
    best = float(inner.max())
    if best <= 0:
        return 0.0, best
    # smallest local maximum close to the best guards against period doubling
    for j in range(1, len(r) - 1):
        if r[j] >= 0.85 * best and r[j] >= r[j - 1] and r[j] >= r[j + 1]:
            break
    y0, y1, y2 = r[j - 1], r[j], r[j + 1]
    den = y0 - 2 * y1 + y2
    off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    return SAMPLE_RATE / (lags[j] + off), float(y1)


def _tone_region(span, inset_l, inset_r):
    a, b = span
    lo = a + int(np.ceil((inset_l + 2 * RAMP_TAU) * SAMPLE_RATE))
    hi = b - int(np.ceil((inset_r + 2 * RAMP_TAU) * SAMPLE_RATE))
    return lo, hi


def _refine_pitch(x_seg, char_id, f0, start_s, end_s, inset_l, inset_r, n0, n1, wide=False):
    """Analysis-by-synthesis: maximise normalised correlation over f0 near the estimate.

    ``wide`` first scans the whole pitch band on a 0.5% grid, for segments too
    short for a reliable autocorrelation estimate.
    """

    def score(f):
        y = render_segment(char_id, f, start_s, end_s, inset_l, inset_r, n0, n1)
        den = np.linalg.norm(y)
        return np.dot(x_seg, y) / den if den > 0 else -np.inf

    best_f = f0
    if wide:
        grid = np.geomspace(PITCH_RANGE[0], PITCH_RANGE[1], 324)
        best_f = float(grid[np.argmax([score(f) for f in grid])])
    for half, step in ((4.0, 0.25), (0.3, 0.02)):
        grid = best_f + np.arange(-half, half + step / 2, step)
        vals = np.array([score(f) for f in grid])
        j = int(np.argmax(vals))
        best_f = grid[j]
    # parabolic polish on the finest grid
    v = [score(best_f - 0.02), score(best_f), score(best_f + 0.02)]
    den = v[0] - 2 * v[1] + v[2]
    if den < 0:
        best_f += 0.02 * 0.5 * (v[0] - v[2]) / den
    return float(best_f)


_TEMPLATE_PITCHES = np.linspace(100.0, 250.0, 7)


def _build_templates():
    """Pitch-averaged log filterbank spectrum per character."""
    out = []
    n = int(0.1 * SAMPLE_RATE)
    for cid in range(1, len(ALPHABET) + 1):
        acc = []
        for f0 in _TEMPLATE_PITCHES:
            y = render([cid], [f0], [0.0], [n / SAMPLE_RATE], n)
            acc.append(features(y)[2:-2].mean(axis=0))
        out.append(np.mean(acc, axis=0))
    return np.array(out)


_TEMPLATES = None


def _templates():
    global _TEMPLATES
    if _TEMPLATES is None:
        _TEMPLATES = _build_templates()
    return _TEMPLATES


def _spectrum(x: np.ndarray) -> np.ndarray:
    win = np.hanning(len(x))
    return np.abs(np.fft.rfft(x * win, n=max(4096, len(x))))


def segment(clip: AudioClip, min_frames: int = 2) -> list[tuple[int, int, int]]:
    """Split an unlabelled clip into (start, end, frame-label) character segments.

    Frames are labelled by nearest pitch-averaged timbre template; near-silent
    frames separate repeated characters.
    """
    x = clip.samples
    if len(x) < FRAME_LEN:
        raise EncodingError("clip shorter than one frame")
    feats = features(x)
    energy = np.log(np.exp(feats).sum(axis=1))
    voiced = energy > energy.max() - 4.0
    temp = _templates()
    d = np.linalg.norm(feats[:, None, :] - temp[None, :, :], axis=2)
    lab = np.where(voiced, np.argmin(d, axis=1) + 1, 0)
    # runs of identical labels; short runs are absorbed by the left neighbour
    runs = []
    for t, l in enumerate(lab):
        if runs and runs[-1][2] == l:
            runs[-1][1] = t + 1
        else:
            runs.append([t, t + 1, int(l)])
    merged = []
    for r in runs:
        if merged and (r[1] - r[0] < min_frames) and r[2] != 0:
            merged[-1][1] = r[1]
        elif merged and merged[-1][2] == r[2]:
            merged[-1][1] = r[1]
        else:
            merged.append(r)
    segs = [r for r in merged if r[2] != 0]
    if not segs:
        return []
    # frame t covers samples [t*HOP, t*HOP + FRAME_LEN); use frame centres for boundaries
    centre = lambda t: t * HOP + FRAME_LEN // 2  # noqa: E731
    bounds = []
    for i, (a, b, l) in enumerate(segs):
        lo = 0 if i == 0 else (centre(segs[i - 1][1] - 1) + centre(a)) // 2
        hi = len(x) if i == len(segs) - 1 else (centre(b - 1) + centre(segs[i + 1][0])) // 2
        bounds.append((int(lo), int(hi), l))
    return bounds


def _spans_and_ids(clip: AudioClip):
    if clip.meta is not None:
        return list(clip.meta.spans), to_ids(clip.meta.transcript)
    segs = segment(clip)
    return [(a, b) for a, b, _ in segs], None


# ---------------------------------------------------------------------------
# encoders


def encode_content(clip: AudioClip) -> ContentCode:
    """Character sequence: taken from metadata, else matched-filter per segment."""
    if clip.meta is not None:
        return ContentCode(to_ids(clip.meta.transcript))
    segs = segment(clip)
    if not segs:
        raise EncodingError("unclassifiable segment 0: no voiced audio")
    ids = []
    for i, (a, b, _) in enumerate(segs):
        x = clip.samples[a:b]
        try:
            f0, strength = _autocorr_pitch(x)
        except EncodingError as exc:
            raise EncodingError(f"unclassifiable segment {i}: {exc}") from exc
        if f0 <= 0 or strength < 0.3:
            raise EncodingError(f"unclassifiable segment {i}: no periodic structure")
        obs = _spectrum(x)
        best, best_c = 0, -1.0
        for cid in range(1, len(ALPHABET) + 1):
            y = render([cid], [f0], [0.0], [len(x) / SAMPLE_RATE], len(x))
            tmpl = _spectrum(y)
            c = float(obs @ tmpl / (np.linalg.norm(obs) * np.linalg.norm(tmpl) + 1e-300))
            if c > best_c:
                best, best_c = cid, c
        if best_c < 0.5:
            raise EncodingError(f"unclassifiable segment {i}: max correlation {best_c:.2f} < 0.5")
        ids.append(best)
    return ContentCode(ids)


def encode_style(clip: AudioClip, content: ContentCode | None = None) -> StyleCode:
    """Per-segment pitch (autocorrelation, refined by synthesis fit) and duration."""
    spans, ids = _spans_and_ids(clip)
    if ids is None and content is not None and len(content) == len(spans):
        ids = content.ids
    if not spans:
        raise EncodingError("no segments found")
    if ids is not None:
        left, right = boundary_insets(ids)
    else:
        left = right = np.zeros(len(spans))
    x = clip.samples
    pitch, rhythm = [], []
    for i, (a, b) in enumerate(spans):
        lo, hi = _tone_region((a, b), left[i], right[i])
        try:
            f0, _ = _autocorr_pitch(x[max(lo, 0) : max(hi, lo)])
        except EncodingError as exc:
            ms = (b - a) / SAMPLE_RATE * 1e3
            raise EncodingError(f"segment {i} ({ms:.1f} ms): {exc}") from exc
        if ids is not None and f0 > 0:
            s, e = a / SAMPLE_RATE, b / SAMPLE_RATE
            n0, n1 = segment_window(s, e, left[i], right[i], len(x))
            short = hi - lo < 2 * _MAX_LAG
            f0 = _refine_pitch(x[n0:n1], int(ids[i]), f0, s, e, left[i], right[i], n0, n1, wide=short)
        pitch.append(f0)
        rhythm.append((b - a) / SAMPLE_RATE)
    return StyleCode(pitch, rhythm)


# ---------------------------------------------------------------------------
# decoder


def harmonic_render(content: ContentCode, pitch: ad.Value, starts: ad.Value, ends: ad.Value, n_samples: int) -> ad.Value:
    """Fused synthesizer primitive with an exact vector-Jacobian product."""
    ids = content.ids
    left, right = boundary_insets(ids)
    out = np.zeros(n_samples)
    cache = []
    p, s, e = pitch.data, starts.data, ends.data
    need = pitch.requires_grad or starts.requires_grad or ends.requires_grad
    for i, c in enumerate(ids):
        n0, n1 = segment_window(s[i], e[i], left[i], right[i], n_samples)
        if n1 <= n0:
            cache.append(None)
            continue
        if need:
            y, partials = render_segment(int(c), p[i], s[i], e[i], left[i], right[i], n0, n1, need_grad=True)
            cache.append((n0, n1, partials))
        else:
            y = render_segment(int(c), p[i], s[i], e[i], left[i], right[i], n0, n1)
        out[n0:n1] += y

    def backward(g):
        gp, gs, ge = np.zeros(len(ids)), np.zeros(len(ids)), np.zeros(len(ids))
        for i, entry in enumerate(cache):
            if entry is None:
                continue
            n0, n1, (dp, ds, de) = entry
            gi = g[n0:n1]
            gp[i], gs[i], ge[i] = gi @ dp, gi @ ds, gi @ de
        return gp, gs, ge

    return ad.custom(out, (pitch, starts, ends), backward, "harmonic_render")


def decode(content: ContentCode, pitch, rhythm, n_samples: int | None = None) -> ad.Value:
    """Waveform for ``content`` with per-character ``pitch`` and ``rhythm``.

    ``pitch`` and ``rhythm`` may be Values; the output is differentiable with
    respect to both. Segment boundaries are cumulative sums of ``rhythm``.
    """
    pitch, rhythm = ad.as_value(pitch), ad.as_value(rhythm)
    n = len(content)
    if pitch.shape != (n,) or rhythm.shape != (n,):
        raise EncodingError(
            f"decode: content has {n} characters, style has {pitch.shape} pitch / {rhythm.shape} rhythm"
        )
    if n_samples is None:
        n_samples = max(int(np.rint(rhythm.data.sum() * SAMPLE_RATE)), 0)
    if n == 0:
        return ad.Value(np.zeros(n_samples))
    lower = np.tril(np.ones((n, n)), -1)
    starts = ad.matmul(lower, rhythm)
    ends = ad.add(starts, rhythm)
    return harmonic_render(content, pitch, starts, ends, n_samples)


def synthesize(content: ContentCode, style: StyleCode, n_samples: int | None = None) -> AudioClip:
    """Non-differentiable decode to an AudioClip carrying content/span metadata."""
    wav = decode(content, style.pitch, style.rhythm, n_samples).data
    return AudioClip(wav, SAMPLE_RATE, ClipMeta(content.text, spans_from_rhythm(style.rhythm, len(wav))))


def spans_from_rhythm(rhythm, n_total: int) -> list[tuple[int, int]]:
    ends = np.rint(np.cumsum(rhythm) * SAMPLE_RATE).astype(int)
    ends = np.clip(np.maximum.accumulate(ends), 0, n_total)
    starts = np.concatenate(([0], ends[:-1]))
    return [(int(a), int(b)) for a, b in zip(starts, ends)]


def resample_nearest(values: np.ndarray, n: int) -> np.ndarray:
    values = np.asarray(values)
    m = len(values)
    if m == n:
        return values.copy()
    if m == 0:
        raise EncodingError("cannot resample an empty style sequence")
    idx = np.minimum(((np.arange(n) + 0.5) * m / n).astype(int), m - 1)
    return values[idx]


def mix_styles(own: StyleCode, donor: StyleCode, selection: str) -> StyleCode:
    """Selected fields from ``donor`` (length-adapted), the rest from ``own``."""
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}, got {selection!r}")
    n = len(own)
    pitch = resample_nearest(donor.pitch, n) if selection in ("pitch", "both") else own.pitch.copy()
    rhythm = resample_nearest(donor.rhythm, n) if selection in ("rhythm", "both") else own.rhythm.copy()
    return StyleCode(pitch, rhythm)


def style_transfer(x: AudioClip, x_s: AudioClip, selection: str = "both") -> AudioClip:
    content = encode_content(x)
    mixed = mix_styles(encode_style(x, content), encode_style(x_s), selection)
    return synthesize(content, mixed)


def pitch_contour(clip: AudioClip, voicing: float = 0.5) -> np.ndarray:
    """Frame-wise F0 (Hz); 0 where the frame is silent or aperiodic."""
    x = clip.samples
    if len(x) < FRAME_LEN:
        raise SignalError("pitch_contour: clip shorter than one frame")
    n = 1 + (len(x) - FRAME_LEN) // HOP
    frames = np.lib.stride_tricks.sliding_window_view(x, FRAME_LEN)[::HOP][:n]
    rms = np.sqrt(np.mean(frames**2, axis=1))
    floor = max(1e-4, 0.05 * rms.max())
    out = np.zeros(n)
    for t in range(n):
        if rms[t] < floor:
            continue
        f = frames[t] - frames[t].mean()
        lags = np.arange(_MIN_LAG - 1, _MAX_LAG + 2)
        r = np.array([np.dot(f[: FRAME_LEN - L], f[L:]) for L in lags])
        r /= np.dot(f, f) * (FRAME_LEN - lags) / FRAME_LEN
        inner = r[1:-1]
        best = inner.max()
        if best < voicing:
            continue
        for j in range(1, len(r) - 1):
            if r[j] >= 0.85 * best and r[j] >= r[j - 1] and r[j] >= r[j + 1]:
                break
        y0, y1, y2 = r[j - 1], r[j], r[j + 1]
        den = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        out[t] = SAMPLE_RATE / (lags[j] + off)
    return out
