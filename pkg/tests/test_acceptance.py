"""End-to-end acceptance suite: one test per criterion.

The attack experiments run through the CLI on a freshly generated corpus.
Set ADVSTYLE_ACCEPTANCE_DIR to keep the work directory; reruns then resume
from the stored results instead of attacking again.
"""
import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from advstyle import asr, corpus, harness
from advstyle import autodiff as ad
from advstyle.cli import main
from advstyle.ctc import InfeasibleTargetError, collapse, ctc_loss, min_frames
from advstyle.metrics import levenshtein, wer
from advstyle.signal import StyleCode, features, synth_utterance, wav_read
from advstyle.style import ContentCode, decode, encode_content
from advstyle.text import to_ids
from conftest import ACCEPTANCE

pytestmark = pytest.mark.slow

N_CORPUS, CORPUS_SEED = 500, 7
SUITE = ["--n-examples", "20", "--min-words", "1", "--max-words", "3", "--min-distance", "1", "--max-distance", "3"]
MID_SUITE = ["--n-examples", "10", "--min-words", "2", "--max-words", "4", "--min-distance", "2", "--max-distance", "3",
             "--p-sub", "0.3", "--p-ins", "0.15", "--p-del", "0.15"]
FAR_SUITE = ["--n-examples", "10", "--min-words", "4", "--max-words", "5", "--min-distance", "4", "--max-distance", "6",
             "--p-sub", "0.4", "--p-ins", "0.2", "--p-del", "0.2"]


def record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = os.environ.get("ADVSTYLE_ACCEPTANCE_DIR")
    path = Path(d) if d else tmp_path_factory.mktemp("acceptance")
    path.mkdir(parents=True, exist_ok=True)
    return path


@pytest.fixture(scope="module")
def manifest(work):
    m = work / "corpus" / "manifest.jsonl"
    if not m.exists():
        assert main(["synth-corpus", "--n", str(N_CORPUS), "--seed", str(CORPUS_SEED), "--out", str(work / "corpus")]) == 0
    return m


@pytest.fixture(scope="module")
def gate(work, manifest):
    ckpt = work / "model.json"
    t0 = time.time()
    code = main(["train", "--corpus", str(manifest), "--out", str(ckpt), "--seed", "0"])
    elapsed = time.time() - t0
    return code, ckpt, elapsed


def _attack(work, manifest, ckpt, name, extra):
    out = work / name
    t0 = time.time()
    code = main(["attack", "--corpus", str(manifest), "--checkpoint", str(ckpt), "--out", str(out), "--workers", "1", *extra])
    elapsed = time.time() - t0
    timing = out / "elapsed.json"
    if not timing.exists():  # keep the first full run's time across resumed reruns
        timing.write_text(json.dumps({"seconds": elapsed}))
    return code, harness.read_results(out / "results.jsonl"), json.loads(timing.read_text())["seconds"]


@pytest.fixture(scope="module")
def main_suite(work, manifest, gate):
    return _attack(work, manifest, gate[1], "suite_both", ["--methods", "sta,sca", "--selections", "both", *SUITE])


@pytest.fixture(scope="module")
def ablation_suite(work, manifest, gate):
    return _attack(work, manifest, gate[1], "suite_ablation", ["--methods", "sca", "--selections", "rhythm,pitch", *SUITE])


@pytest.fixture(scope="module")
def baseline_suite(work, manifest, gate):
    return _attack(work, manifest, gate[1], "suite_attack_only", ["--methods", "attack-only", *SUITE])


@pytest.fixture(scope="module")
def mid_suite(work, manifest, gate):
    return _attack(work, manifest, gate[1], "suite_mid", ["--methods", "sta", "--selections", "both", *MID_SUITE])


@pytest.fixture(scope="module")
def far_suite(work, manifest, gate):
    return _attack(work, manifest, gate[1], "suite_far", ["--methods", "sta", "--selections", "both", *FAR_SUITE])


def _rate(rows, method, selection):
    sel = [r for r in rows if r["method"] == method and r["selection"] == selection]
    return sum(r["success"] for r in sel), len(sel)


# ---------------------------------------------------------------------------


def _brute_nll(logp, labels, paths, collapsed):
    scores = logp[np.arange(logp.shape[0]), paths].sum(axis=1)
    mask = np.array([c == labels for c in collapsed])
    return -np.logaddexp.reduce(scores[mask]) if mask.any() else np.inf


def test_criterion_1_ctc_oracle():
    t0 = time.time()
    rng = np.random.default_rng(0)
    targets = [list(t) for n in range(4) for t in itertools.product((1, 2, 3), repeat=n)]
    worst, n_checked, infeasible_ok = 0.0, 0, True
    for T in range(1, 9):
        for C in (2, 3, 4):  # blank plus 1..3 letters
            paths = np.array(list(itertools.product(range(C), repeat=T)))
            collapsed = [collapse(p) for p in paths]
            logp = ad.log_softmax(ad.Value(rng.normal(size=(T, C)))).data
            for labels in targets:
                if labels and max(labels) >= C:
                    continue
                want = _brute_nll(logp, labels, paths, collapsed)
                if T < min_frames(labels):
                    try:
                        ctc_loss(ad.Value(logp), labels)
                        infeasible_ok = False
                    except InfeasibleTargetError:
                        infeasible_ok &= not np.isfinite(want)
                    continue
                got = float(ctc_loss(ad.Value(logp), labels).data)
                worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
                n_checked += 1
    dt = time.time() - t0
    ok = worst <= 1e-10 and infeasible_ok and dt < 10
    assert record(1, ok, f"{n_checked} instances, max rel err {worst:.1e}, {dt:.1f}s (< 10s)")


def _fd(f, x, h):
    """Five-point central difference, fourth-order accurate."""
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def _rel(a, b):
    return float(np.max(np.abs(np.asarray(a) - b)) / max(np.max(np.abs(b)), 1e-300))


def _op_level_worst():
    rng = np.random.default_rng(3)
    cases = [
        (lambda a, b: ad.mul(ad.add(a, b), ad.sub(a, b)), [(3, 4), (3, 4)]),
        (lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
        (lambda a: ad.tanh(a), [(6,)]),
        (lambda a: ad.sigmoid(a), [(6,)]),
        (lambda a: ad.exp(a), [(6,)]),
        (lambda a: ad.log(ad.add(ad.square(a), 1.0)), [(6,)]),
        (lambda a: ad.sin(a), [(6,)]),
        (lambda a: ad.cos(a), [(6,)]),
        (lambda a: ad.log_softmax(a), [(3, 5)]),
        (lambda a: ad.reduce_sum(a, axis=1), [(3, 5)]),
        (lambda a: ad.getitem(ad.reshape(a, (4, 3)), slice(1, 3)), [(12,)]),
        (lambda a, b: ad.concat([a, b]), [(2, 3), (1, 3)]),
        (lambda a: ad.frames(a, 5, 2), [(11,)]),
    ]
    worst = 0.0
    for op, shapes in cases:
        xs = [rng.normal(size=s) for s in shapes]
        w = rng.normal(size=op(*[ad.Value(x) for x in xs]).shape)
        for k in range(len(xs)):
            vals = [ad.Value(x, j == k) for j, x in enumerate(xs)]
            ad.backward(ad.reduce_sum(ad.mul(op(*vals), w)))

            def f(flat, k=k):
                args = [ad.Value(flat.reshape(xs[k].shape) if j == k else x) for j, x in enumerate(xs)]
                return float((op(*args).data * w).sum())

            worst = max(worst, _rel(vals[k].grad.ravel(), _fd(f, xs[k].ravel(), 1e-3)))
    return worst


def test_criterion_2_gradients(gate):
    t0 = time.time()
    op_worst = _op_level_worst()
    model = asr.load_checkpoint(gate[1])
    n = 160 * 9 + 400  # ten frames
    x0 = synth_utterance("ab", StyleCode([150.0, 190.0], [n / 32000, n / 32000]), seed=4).samples[:n]
    x = ad.Value(x0, True)
    ad.backward(ctc_loss(asr.log_probs(model, x), "ab"))
    idx = np.random.default_rng(1).choice(n, 16, replace=False)

    def f_wave(v):
        y = x0.copy()
        y[idx] = v
        return float(ctc_loss(asr.log_probs(model, y), "ab").data)

    wave_err = _rel(x.grad[idx], _fd(f_wave, x0[idx], 1e-5))

    content = ContentCode(to_ids("ab"))
    p0, r0 = np.array([150.0, 190.0]), np.array([n / 32000, n / 32000])
    p, r = ad.Value(p0, True), ad.Value(r0, True)
    ad.backward(ctc_loss(asr.log_probs(model, decode(content, p, r, n)), "ab"))

    def loss(pv, rv):
        return float(ctc_loss(asr.log_probs(model, decode(content, pv, rv, n)), "ab").data)

    pitch_err = _rel(p.grad, _fd(lambda v: loss(v, r0), p0, 1e-3))
    rhythm_err = _rel(r.grad, _fd(lambda v: loss(p0, v), r0, 1e-6))
    dt = time.time() - t0
    ok = op_worst <= 1e-6 and max(wave_err, pitch_err, rhythm_err) <= 1e-4 and dt < 30
    assert record(
        2, ok,
        f"op-level {op_worst:.1e} (<= 1e-6); waveform->CTC {wave_err:.1e}, pitch->CTC {pitch_err:.1e}, "
        f"rhythm->CTC {rhythm_err:.1e} (<= 1e-4); {dt:.1f}s (< 30s)",
    )


def test_criterion_3_asr_gate(gate, manifest):
    code, ckpt, elapsed = gate
    model = asr.load_checkpoint(ckpt)
    recs = corpus.read_manifest(manifest)
    feats = [features(corpus.load_clip(manifest, r).samples) for r in recs]
    _, ho = asr.split_indices(len(recs), 0)
    exact, w = asr.evaluate(model, [feats[i] for i in ho], [recs[i].transcript for i in ho])
    ok = code == 0 and exact >= 0.95 and w <= 0.05 and elapsed < 600
    assert record(3, ok, f"{len(recs)} utterances, held-out exact {exact:.3f} (>= 0.95), WER {w:.4f} (<= 0.05), train {elapsed:.0f}s")


def test_criterion_4_constraint(main_suite, baseline_suite, mid_suite, far_suite, manifest):
    rows = [r for suite in (main_suite, baseline_suite, mid_suite, far_suite) for r in suite[1] if r["method"] in ("sta", "attack-only")]
    worst, bad = 0.0, 0
    for r in rows:
        assert r["error"] is None, r["error"]
        st = r["stats"]
        worst = max(worst, st["max_delta_ratio"])
        bad += not (st["constraint_ok"] and st["max_delta_ratio"] <= 0.2 + 1e-12)
    ok = bad == 0 and len(rows) > 0
    assert record(4, ok, f"{len(rows) - bad}/{len(rows)} STA/attack-only outputs within |d| <= 0.2|z| + 1e-12 (max ratio {worst:.6f})")


def test_criterion_5_success(main_suite):
    _, rows, elapsed = main_suite
    s_sta, n_sta = _rate(rows, "sta", "both")
    s_sca, n_sca = _rate(rows, "sca", "both")
    sr_sta, sr_sca = s_sta / n_sta, s_sca / n_sca
    ok = n_sta == 20 and sr_sta >= 0.8 and sr_sca >= 0.7 and elapsed < 900
    assert record(
        5, ok,
        f"STA-both {s_sta}/{n_sta} = {sr_sta:.0%} (>= 80%), SCA-both {s_sca}/{n_sca} = {sr_sca:.0%} (>= 70%), {elapsed / 60:.1f} min (< 15)",
    )


def test_criterion_6_ablation(ablation_suite):
    rows = ablation_suite[1]
    s_r, n_r = _rate(rows, "sca", "rhythm")
    s_p, n_p = _rate(rows, "sca", "pitch")
    margin = s_r / n_r - s_p / n_p
    ok = margin >= 0.2
    assert record(6, ok, f"SCA-rhythm {s_r}/{n_r}, SCA-pitch {s_p}/{n_p}, margin {margin * 100:+.0f} pp (>= +20)")


def test_criterion_7_distance_trend(main_suite, mid_suite, far_suite):
    rows = [r for r in main_suite[1] + mid_suite[1] + far_suite[1] if r["method"] == "sta"]
    labels = ["1", "2-3", "4-6"]
    stats = []
    for lab in labels:
        b = [r for r in rows if harness.bucket_of(r["distance"]) == lab]
        stats.append((sum(r["success"] for r in b), len(b)))
    ok = all(n > 0 for _, n in stats)
    for (s0, n0), (s1, n1) in zip(stats, stats[1:]):
        if n0 and n1 and s1 / n1 > s0 / n0:
            # flipping a single example in either bucket must restore monotonicity
            ok &= (s1 - 1) / n1 <= s0 / n0 or s1 / n1 <= (s0 + 1) / n0
    detail = ", ".join(f"d={lab}: {s}/{n}" for lab, (s, n) in zip(labels, stats))
    assert record(7, ok, f"STA-both success by target distance {detail} (non-increasing within one example)")


def test_criterion_8_early_stop(work, main_suite, ablation_suite, baseline_suite, mid_suite, far_suite, gate):
    model = asr.load_checkpoint(gate[1])
    checked, bad = 0, []
    for name, suite in (("suite_both", main_suite), ("suite_ablation", ablation_suite),
                        ("suite_attack_only", baseline_suite),
                        ("suite_mid", mid_suite), ("suite_far", far_suite)):
        for r in suite[1]:
            if not r["success"]:
                continue
            hyp = asr.transcribe(model, wav_read(work / name / r["wav"]))
            checked += 1
            if hyp != r["target"]:
                bad.append(r["id"])
    ok = not bad
    assert record(8, ok, f"{checked - len(bad)}/{checked} successful WAVs re-transcribe to the target")


def test_criterion_9_content_invariance(main_suite, ablation_suite, work):
    rows = [r for r in main_suite[1] + ablation_suite[1] if r["method"] == "sca"]
    required = ("pitch_drift", "rhythm_drift", "pitch_range_violations", "rhythm_range_violations", "style_init", "style_final")
    keep, drift_ok, blind = 0, 0, 0
    for r in rows:
        assert r["error"] is None, r["error"]
        st = r["stats"]
        keep += st["content_preserved"] is True
        drift_ok += all(k in st for k in required) and ("reencode_pitch_drift" in st or "reencode_error" in st)
        sub = "suite_both" if r["selection"] == "both" else "suite_ablation"
        try:
            blind += encode_content(wav_read(work / sub / r["wav"])).text == r["source"]
        except ValueError:
            pass
    ok = keep == len(rows) == drift_ok and len(rows) > 0
    assert record(
        9, ok,
        f"content code unchanged {keep}/{len(rows)}, drift fields {drift_ok}/{len(rows)}; "
        f"blind re-encoding of the WAV matches {blind}/{len(rows)} (informational)",
    )


def test_criterion_10_metrics(tmp_path):
    rng = np.random.default_rng(10)
    axioms = True
    for _ in range(1000):
        a, b, c = (list(rng.integers(0, 4, rng.integers(0, 11))) for _ in range(3))
        dab = levenshtein(a, b)
        axioms &= dab >= 0 and (dab == 0) == (a == b) and dab == levenshtein(b, a)
        axioms &= levenshtein(a, c) <= dab + levenshtein(b, c) and dab <= max(len(a), len(b))
    hand = (
        levenshtein("kitten", "sitting") == 3
        and wer("the dog sat", "the cat sat here") == 0.5
        and wer("the cat", "the cat") == 0.0
        and wer("", "a b c d") == 1.0
    )
    rows = [
        {"format_version": 1, "id": f"e{i}/sta/both", "example_id": f"e{i}", "style_id": "s", "method": "sta",
         "selection": "both", "seed": i, "source": "a b", "target": "a c", "distance": 1 + i % 3, "success": s,
         "iterations": 5 + i, "final_transcript": "a", "residual_distance": 0 if s else 1 + i % 2, "wer": w,
         "stats": {}, "wav": None, "wav_transcript": None, "error": None}
        for i, (s, w) in enumerate([(True, 0.0), (True, 0.0), (False, 0.5), (False, 0.25)])
    ]
    rep = harness.build_report(rows)
    hand &= rep["table"][0]["sr"] == 0.5 and rep["table"][0]["mean_wer"] == 0.1875
    perm = list(rng.permutation(len(rows)))
    for i, name in enumerate(("a", "b", "all")):
        part = rows[:2] if name == "a" else rows[2:] if name == "b" else [rows[j] for j in perm]
        (tmp_path / f"{name}.jsonl").write_text("".join(json.dumps(r) + "\n" for r in part))
    assert main(["report", str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl"), "--out", str(tmp_path / "ab")]) == 0
    assert main(["report", str(tmp_path / "all.jsonl"), "--out", str(tmp_path / "all")]) == 0
    assoc = (tmp_path / "ab" / "report.json").read_text() == (tmp_path / "all" / "report.json").read_text()
    ok = axioms and hand and assoc
    assert record(10, ok, f"metric axioms on 1000 triples {axioms}, hand cases {hand}, merge associativity {assoc}")
