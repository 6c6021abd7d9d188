"""Targeted attacks on the toy ASR: STA, SCA and the attack-only baseline."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .asr import AcousticModel, log_probs, transcribe
from .ctc import InfeasibleTargetError, check_feasible, ctc_loss, greedy_decode
from .metrics import levenshtein
from .signal import AudioClip, ClipMeta, StyleCode, n_frames, quantize, wav_write
from .style import (
    PITCH_RANGE,
    RHYTHM_RANGE,
    SELECTIONS,
    EncodingError,
    encode_content,
    encode_style,
    decode,
    mix_styles,
    spans_from_rhythm,
    style_transfer,
)
from .text import to_ids, validate

log = logging.getLogger(__name__)

METHODS = ("sta", "sca", "attack-only")


class AttackDivergedError(RuntimeError):
    def __init__(self, msg: str, trace: list[float]):
        super().__init__(msg)
        self.trace = trace


@dataclass
class AttackConfig:
    max_iters: int = 3000
    lr: float = 0.01
    b: float = 0.2
    lam: float = 0.01
    selection: str = "both"
    seed: int = 0
    sca_units: str = "raw"  # SCA optimises s itself ("raw") or s0 * u ("relative")

    def __post_init__(self):
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must lie in [0, 1], got {self.b}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if self.sca_units not in ("relative", "raw"):
            raise ValueError(f"sca_units must be 'relative' or 'raw', got {self.sca_units!r}")


@dataclass
class AttackResult:
    method: str
    selection: str
    target: str
    success: bool
    iterations: int
    final_transcript: str
    residual_distance: int
    clip: AudioClip
    loss_trace: list[float] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "method": self.method,
            "selection": self.selection,
            "target": self.target,
            "success": self.success,
            "iterations": self.iterations,
            "final_transcript": self.final_transcript,
            "residual_distance": self.residual_distance,
            "stats": self.stats,
        }

    def export(self, wav_path) -> Path:
        """Write the adversarial WAV and a JSON sidecar next to it."""
        wav_path = Path(wav_path)
        wav_write(self.clip, wav_path)
        doc = dict(self.summary(), loss_trace=self.loss_trace, wav=wav_path.name)
        side = wav_path.with_suffix(".json")
        side.write_text(json.dumps(doc, indent=1))
        return side


def _robust_hit(model: AcousticModel, lp: ad.Value, samples: np.ndarray, target: str) -> tuple[bool, str]:
    """Float transcription first; a hit only counts if 16-bit quantization keeps it."""
    hyp = greedy_decode(lp)
    if hyp != target:
        return False, hyp
    return transcribe(model, quantize(samples)) == target, hyp


def _result(method, cfg, target, success, it, hyp, clip, trace, stats) -> AttackResult:
    return AttackResult(
        method=method,
        selection=cfg.selection,
        target=target,
        success=success,
        iterations=it,
        final_transcript=hyp,
        residual_distance=levenshtein(hyp, target),
        clip=clip,
        loss_trace=trace,
        stats=stats,
    )


def _check_target(target: str, n_samples: int) -> None:
    validate(target)
    if n_samples < 400:
        raise InfeasibleTargetError("no valid alignment: clip shorter than one frame")
    check_feasible(n_frames(n_samples), to_ids(target))


def _perturb(model: AcousticModel, z: AudioClip, target: str, cfg: AttackConfig, method: str) -> AttackResult:
    """Bounded additive attack around ``z``; shared by STA and attack-only."""
    zs = z.samples
    _check_target(target, len(zs))
    eps = cfg.b * np.abs(zs)
    rng = np.random.default_rng(cfg.seed)
    w = ad.Value(0.1 * rng.standard_normal(len(zs)), True)
    opt = ad.Adam([w], lr=cfg.lr)
    trace: list[float] = []
    hyp = ""
    xs = zs
    for it in range(1, cfg.max_iters + 1):
        opt.zero_grad()
        delta = ad.mul(eps, ad.tanh(w))
        x_adv = ad.add(zs, delta)
        xs = x_adv.data
        lp = log_probs(model, x_adv)
        hit, hyp = _robust_hit(model, lp, xs, target)
        if hit:
            return _result(method, cfg, target, True, it, hyp, _adv_clip(z, xs), trace, _sta_stats(xs, zs, cfg))
        loss = ad.add(ctc_loss(lp, target), ad.mul(ad.reduce_sum(ad.square(delta)), cfg.lam))
        val = float(loss.data)
        if not np.isfinite(val):
            raise AttackDivergedError(f"{method}: non-finite loss at iteration {it}", trace)
        trace.append(val)
        ad.backward(loss)
        opt.step()
    return _result(method, cfg, target, False, cfg.max_iters, hyp, _adv_clip(z, xs), trace, _sta_stats(xs, zs, cfg))


def _adv_clip(z: AudioClip, samples: np.ndarray) -> AudioClip:
    return AudioClip(samples.copy(), z.sample_rate, z.meta)


def _sta_stats(xs: np.ndarray, zs: np.ndarray, cfg: AttackConfig) -> dict:
    d = np.abs(xs - zs)
    bound = cfg.b * np.abs(zs) + 1e-12
    nz = np.abs(zs) > 0
    ratio = float(np.max(d[nz] / np.abs(zs[nz]))) if nz.any() else 0.0
    return {
        "max_delta_ratio": ratio,
        "max_abs_delta": float(d.max()) if len(d) else 0.0,
        "constraint_ok": bool(np.all(d <= bound)),
    }


def sta_attack(model: AcousticModel, x: AudioClip, x_s: AudioClip, target: str, cfg: AttackConfig) -> AttackResult:
    """Style-transfer ``x`` toward ``x_s`` then optimise a bounded perturbation."""
    z = style_transfer(x, x_s, cfg.selection)
    return _perturb(model, z, target, cfg, "sta")


def attack_only(model: AcousticModel, x: AudioClip, target: str, cfg: AttackConfig) -> AttackResult:
    """The STA optimisation applied directly to ``x``."""
    return _perturb(model, x, target, cfg, "attack-only")


def _code_stats(s0: StyleCode, pitch: np.ndarray, rhythm: np.ndarray) -> dict:
    pv = int(np.sum((pitch < PITCH_RANGE[0]) | (pitch > PITCH_RANGE[1])))
    rv = int(np.sum((rhythm <= RHYTHM_RANGE[0]) | (rhythm > RHYTHM_RANGE[1])))
    return {
        "pitch_drift": float(np.max(np.abs(pitch - s0.pitch))),
        "rhythm_drift": float(np.max(np.abs(rhythm - s0.rhythm))),
        "pitch_range_violations": pv,
        "rhythm_range_violations": rv,
        "style_init": {"pitch": s0.pitch.tolist(), "rhythm": s0.rhythm.tolist()},
        "style_final": {"pitch": pitch.tolist(), "rhythm": rhythm.tolist()},
    }


def _reencode_drift(clip: AudioClip, s0: StyleCode) -> dict:
    """Style of the adversarial audio re-measured against the stylized starting code."""
    try:
        s = encode_style(clip)
    except EncodingError as exc:
        return {"reencode_error": str(exc)}
    return {
        "reencode_pitch_drift": float(np.max(np.abs(s.pitch - s0.pitch))),
        "reencode_rhythm_drift": float(np.max(np.abs(s.rhythm - s0.rhythm))),
    }


def sca_attack(model: AcousticModel, x: AudioClip, x_s: AudioClip, target: str, cfg: AttackConfig) -> AttackResult:
    """Optimise the selected style-code fields of the decoder input; content fixed."""
    content = encode_content(x)
    s0 = mix_styles(encode_style(x, content), encode_style(x_s), cfg.selection)
    n_out = max(int(np.rint(s0.rhythm.sum() * x.sample_rate)), 0)
    _check_target(target, n_out)
    # with relative units one Adam step moves each entry by about lr of its start value
    rel = cfg.sca_units == "relative"
    u_p = ad.Value(np.ones(len(s0)) if rel else s0.pitch.copy(), cfg.selection in ("pitch", "both"))
    u_r = ad.Value(np.ones(len(s0)) if rel else s0.rhythm.copy(), cfg.selection in ("rhythm", "both"))
    params = [p for p in (u_p, u_r) if p.requires_grad]
    opt = ad.Adam(params, lr=cfg.lr)
    trace: list[float] = []
    hyp = ""

    def clip_of(wav, r):
        return AudioClip(wav.copy(), x.sample_rate, ClipMeta(content.text, spans_from_rhythm(r, len(wav))))

    def finish(success, it, wav, p, r):
        out = clip_of(wav, r)
        stats = _code_stats(s0, p, r)
        stats["content_preserved"] = encode_content(out) == content
        stats.update(_reencode_drift(out, s0))
        return _result("sca", cfg, target, success, it, hyp, out, trace, stats)

    wav = np.zeros(n_out)
    p_now, r_now = s0.pitch.copy(), s0.rhythm.copy()
    for it in range(1, cfg.max_iters + 1):
        opt.zero_grad()
        pitch = ad.mul(s0.pitch, u_p) if rel else u_p
        rhythm = ad.mul(s0.rhythm, u_r) if rel else u_r
        p_now, r_now = pitch.data.copy(), rhythm.data.copy()
        x_adv = decode(content, pitch, rhythm, n_out)
        wav = x_adv.data
        lp = log_probs(model, x_adv)
        hit, hyp = _robust_hit(model, lp, wav, target)
        if hit:
            return finish(True, it, wav, p_now, r_now)
        loss = ctc_loss(lp, target)
        val = float(loss.data)
        if not np.isfinite(val):
            raise AttackDivergedError(f"sca: non-finite loss at iteration {it}", trace)
        trace.append(val)
        ad.backward(loss)
        opt.step()
    return finish(False, cfg.max_iters, wav, p_now, r_now)


def run_attack(method: str, model, x, x_s, target, cfg) -> AttackResult:
    if method == "sta":
        return sta_attack(model, x, x_s, target, cfg)
    if method == "sca":
        return sca_attack(model, x, x_s, target, cfg)
    if method == "attack-only":
        return attack_only(model, x, target, cfg)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
