"""Batch attack runner (resumable JSONL) and report aggregation."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import multiprocessing as mp
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import asr, corpus
from .attacks import METHODS, AttackConfig, run_attack
from .metrics import TargetGenerationError, gen_target, wer, word_distance
from .signal import wav_read
from .style import SELECTIONS

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BUCKETS = ((1, 1), (2, 3), (4, 6), (7, None))

ROW_FIELDS = {
    "format_version": int,
    "id": str,
    "example_id": str,
    "style_id": str,
    "method": str,
    "selection": str,
    "seed": int,
    "source": str,
    "target": str,
    "distance": int,
    "success": bool,
    "iterations": int,
    "final_transcript": (str, type(None)),
    "residual_distance": (int, type(None)),
    "wer": (float, int, type(None)),
    "stats": dict,
    "wav": (str, type(None)),
    "wav_transcript": (str, type(None)),
    "error": (str, type(None)),
}


class SchemaError(ValueError):
    pass


def bucket_of(d: int) -> str:
    for lo, hi in BUCKETS:
        if d >= lo and (hi is None or d <= hi):
            return str(lo) if hi == lo else (f"{lo}+" if hi is None else f"{lo}-{hi}")
    return str(d)


def derive_seed(seed: int, key: str) -> int:
    """Stable per-example seed; independent of process and worker layout."""
    h = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(h[:4], "little")


def derangement(n: int, seed: int) -> np.ndarray:
    """Seeded permutation with no fixed points (n >= 2)."""
    if n < 2:
        raise ValueError("style pairing needs at least two examples")
    rng = np.random.default_rng(seed)
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


@dataclass
class RunConfig:
    corpus: str
    checkpoint: str
    out: str
    methods: list[str] = field(default_factory=lambda: ["sta"])
    selections: list[str] = field(default_factory=lambda: ["both"])
    n_examples: int = 20
    min_words: int = 1
    max_words: int = 5
    min_distance: int = 1
    max_distance: int = 3
    p_sub: float = 0.1
    p_ins: float = 0.05
    p_del: float = 0.05
    max_iters: int = 3000
    lr: float = 0.01
    b: float = 0.2
    lam: float = 0.01
    sca_units: str = "raw"
    workers: int = 1
    seed: int = 0

    def validate(self) -> None:
        for name in ("corpus", "checkpoint"):
            if not Path(getattr(self, name)).exists():
                raise FileNotFoundError(f"{name} path does not exist: {getattr(self, name)}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        bad = [s for s in self.selections if s not in SELECTIONS]
        if bad or not self.selections:
            raise ValueError(f"selections must be a non-empty subset of {SELECTIONS}, got {self.selections}")
        if self.n_examples < 1:
            raise ValueError("n_examples must be >= 1")
        if self.min_distance < 1 or self.max_distance < self.min_distance:
            raise ValueError("distance range must satisfy 1 <= min_distance <= max_distance")
        AttackConfig(self.max_iters, self.lr, self.b, self.lam, "both", 0, self.sca_units)


@dataclass
class Example:
    example_id: str
    style_id: str
    source: str
    target: str
    distance: int
    seed: int


def select_examples(cfg: RunConfig, records: list[corpus.ManifestRecord]) -> list[Example]:
    """Seeded choice of sources, targets (by gen_target) and style partners."""
    order = np.random.default_rng(cfg.seed).permutation(len(records))
    chosen = []
    for i in order:
        rec = records[i]
        if not cfg.min_words <= len(rec.transcript.split()) <= cfg.max_words:
            continue
        base = derive_seed(cfg.seed, rec.id)
        for attempt in range(100):
            try:
                tgt, d = gen_target(rec.transcript, corpus.LEXICON, cfg.p_sub, cfg.p_ins, cfg.p_del, seed=base + attempt)
            except TargetGenerationError:
                break
            if tgt and cfg.min_distance <= d <= cfg.max_distance:
                chosen.append((rec, tgt, d, base))
                break
        if len(chosen) == cfg.n_examples:
            break
    if len(chosen) < max(2, cfg.n_examples):
        raise ValueError(
            f"only {len(chosen)} corpus clips fit the word/distance filters; {cfg.n_examples} requested"
        )
    perm = derangement(len(chosen), cfg.seed)
    return [
        Example(rec.id, chosen[perm[j]][0].id, rec.transcript, tgt, d, seed)
        for j, (rec, tgt, d, seed) in enumerate(chosen)
    ]


def build_tasks(cfg: RunConfig, examples: list[Example]) -> list[dict]:
    tasks = []
    for ex in examples:
        for method in cfg.methods:
            sels = ["none"] if method == "attack-only" else cfg.selections
            for sel in sels:
                tasks.append(dict(asdict(ex), method=method, selection=sel, id=f"{ex.example_id}/{method}/{sel}"))
    return tasks


# ---------------------------------------------------------------------------
# worker side

_WORKER: dict = {}


def _init_worker(cfg_dict: dict) -> None:
    cfg = RunConfig(**cfg_dict)
    _WORKER["cfg"] = cfg
    _WORKER["model"] = asr.load_checkpoint(cfg.checkpoint)
    _WORKER["records"] = {r.id: r for r in corpus.read_manifest(cfg.corpus)}


def run_task(task: dict) -> dict:
    cfg: RunConfig = _WORKER["cfg"]
    model = _WORKER["model"]
    recs = _WORKER["records"]
    row = {
        "format_version": FORMAT_VERSION,
        "id": task["id"],
        "example_id": task["example_id"],
        "style_id": task["style_id"],
        "method": task["method"],
        "selection": task["selection"],
        "seed": task["seed"],
        "source": task["source"],
        "target": task["target"],
        "distance": task["distance"],
        "success": False,
        "iterations": 0,
        "final_transcript": None,
        "residual_distance": None,
        "wer": None,
        "stats": {},
        "wav": None,
        "wav_transcript": None,
        "error": None,
    }
    sel = "both" if task["selection"] == "none" else task["selection"]
    acfg = AttackConfig(cfg.max_iters, cfg.lr, cfg.b, cfg.lam, sel, task["seed"], cfg.sca_units)
    try:
        x = corpus.load_clip(cfg.corpus, recs[task["example_id"]])
        xs = corpus.load_clip(cfg.corpus, recs[task["style_id"]])
        res = run_attack(task["method"], model, x, xs, task["target"], acfg)
    except Exception as exc:  # recorded per row; the batch continues
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    wav_rel = "wav/" + task["id"].replace("/", "__") + ".wav"
    wav_path = Path(cfg.out) / wav_rel
    wav_path.parent.mkdir(parents=True, exist_ok=True)
    res.export(wav_path)
    row.update(
        success=res.success,
        iterations=res.iterations,
        final_transcript=res.final_transcript,
        residual_distance=res.residual_distance,
        wer=wer(res.final_transcript, res.target),
        stats=res.stats,
        wav=wav_rel,
        wav_transcript=asr.transcribe(model, wav_read(wav_path)),
    )
    return row


# ---------------------------------------------------------------------------
# runner


def validate_row(row: dict) -> None:
    for name, typ in ROW_FIELDS.items():
        if name not in row:
            raise SchemaError(f"row {row.get('id')!r}: missing field {name!r}")
        if not isinstance(row[name], typ):
            raise SchemaError(f"row {row.get('id')!r}: field {name!r} has type {type(row[name]).__name__}")
    if row["format_version"] != FORMAT_VERSION:
        raise SchemaError(f"row {row['id']!r}: format_version {row['format_version']} != {FORMAT_VERSION}")


def read_results(path) -> list[dict]:
    """Rows of a results file; a torn final line (interrupted write) is ignored."""
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text().splitlines()
    rows = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise SchemaError(f"{path}:{i + 1}: malformed JSON row")
        validate_row(row)
        rows.append(row)
    return rows


def _dump(row: dict) -> str:
    return json.dumps(row, sort_keys=True)


def run_batch(cfg: RunConfig, limit: int | None = None) -> Path:
    """Run every missing task and write ``results.jsonl`` in canonical order.

    ``limit`` caps how many new tasks run in this call (used to emulate an
    interrupted run).
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    results = out / "results.jsonl"
    examples = select_examples(cfg, corpus.read_manifest(cfg.corpus))
    tasks = build_tasks(cfg, examples)
    done = {r["id"]: r for r in read_results(results)}
    todo = [t for t in tasks if t["id"] not in done]
    if limit is not None:
        todo = todo[:limit]
    log.info("%d tasks, %d already done, running %d", len(tasks), len(done), len(todo))
    if todo:
        # valid rows only: a torn final line from an interrupted run is dropped here
        with open(results, "w") as fh:
            fh.writelines(_dump(r) + "\n" for r in done.values())
        cfg_dict = asdict(cfg)
        with open(results, "a") as fh:
            if cfg.workers <= 1:
                _init_worker(cfg_dict)
                rows = map(run_task, todo)
                pool = None
            else:
                pool = mp.get_context("spawn").Pool(cfg.workers, _init_worker, (cfg_dict,))
                rows = pool.imap_unordered(run_task, todo)
            try:
                for row in rows:
                    fh.write(_dump(row) + "\n")
                    fh.flush()
                    done[row["id"]] = row
                    log.info("%s success=%s iterations=%d", row["id"], row["success"], row["iterations"])
            finally:
                if pool is not None:
                    pool.close()
                    pool.join()
    order = {t["id"]: i for i, t in enumerate(tasks)}
    rows = sorted(done.values(), key=lambda r: order.get(r["id"], len(order)))
    tmp = results.with_suffix(".tmp")
    tmp.write_text("".join(_dump(r) + "\n" for r in rows))
    tmp.replace(results)
    return results


def audit(rows: list[dict], b: float) -> list[str]:
    """Post-hoc checks: STA constraint bound and WAV-level early-stop soundness."""
    problems = []
    for r in rows:
        if r["error"]:
            continue
        if r["method"] in ("sta", "attack-only"):
            st = r["stats"]
            if not st.get("constraint_ok", False) or st.get("max_delta_ratio", 0.0) > b + 1e-9:
                problems.append(f"{r['id']}: perturbation bound violated ({st.get('max_delta_ratio')})")
        if r["success"] and r["wav_transcript"] != r["target"]:
            problems.append(f"{r['id']}: exported WAV transcribes to {r['wav_transcript']!r}")
    return problems


# ---------------------------------------------------------------------------
# report


def _group_key(r: dict) -> str:
    return f"{r['method']}/{r['selection']}"


def aggregate(rows: list[dict]) -> dict:
    """Order-independent sums; merging row sets before or after is equivalent."""
    acc: dict = {
        "table": defaultdict(lambda: {"n": 0, "successes": 0, "wer_sum": 0.0, "wer_n": 0, "errors": 0}),
        "buckets": defaultdict(lambda: {"n": 0, "successes": 0, "iter_sum": 0, "iter_succ_sum": 0}),
        "failures": defaultdict(lambda: defaultdict(int)),
    }
    for r in rows:
        g = _group_key(r)
        t = acc["table"][g]
        t["n"] += 1
        t["successes"] += int(r["success"])
        t["errors"] += int(r["error"] is not None)
        if r["wer"] is not None:
            t["wer_sum"] += float(r["wer"])
            t["wer_n"] += 1
        b = acc["buckets"][(g, bucket_of(r["distance"]))]
        b["n"] += 1
        b["successes"] += int(r["success"])
        b["iter_sum"] += r["iterations"]
        if r["success"]:
            b["iter_succ_sum"] += r["iterations"]
        if not r["success"] and r["residual_distance"] is not None:
            acc["failures"][g][r["residual_distance"]] += 1
    return acc


def _bucket_rank(label: str) -> int:
    return int(label.split("-")[0].rstrip("+"))


def build_report(rows: list[dict]) -> dict:
    for r in rows:
        validate_row(r)
    acc = aggregate(rows)
    table = []
    for g in sorted(acc["table"]):
        t = acc["table"][g]
        method, sel = g.split("/")
        table.append(
            {
                "method": method,
                "selection": sel,
                "n": t["n"],
                "successes": t["successes"],
                "errors": t["errors"],
                "sr": t["successes"] / t["n"],
                "mean_wer": t["wer_sum"] / t["wer_n"] if t["wer_n"] else None,
            }
        )
    buckets = []
    for g, label in sorted(acc["buckets"], key=lambda k: (k[0], _bucket_rank(k[1]))):
        b = acc["buckets"][(g, label)]
        method, sel = g.split("/")
        buckets.append(
            {
                "method": method,
                "selection": sel,
                "bucket": label,
                "n": b["n"],
                "sr": b["successes"] / b["n"],
                "mean_iterations": b["iter_sum"] / b["n"],
                "mean_iterations_success": b["iter_succ_sum"] / b["successes"] if b["successes"] else None,
            }
        )
    failures = []
    for g in sorted(acc["failures"]):
        method, sel = g.split("/")
        for d in sorted(acc["failures"][g]):
            failures.append({"method": method, "selection": sel, "residual_distance": d, "count": acc["failures"][g][d]})
    return {"format_version": FORMAT_VERSION, "n_rows": len(rows), "table": table, "by_distance": buckets, "failures": failures}


def write_report(report: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json"]
    paths[0].write_text(json.dumps(report, indent=1, sort_keys=True))
    for name, key in (("table1.csv", "table"), ("fig4_by_distance.csv", "by_distance"), ("fig5_failures.csv", "failures")):
        p = out / name
        rows = report[key]
        with open(p, "w", newline="") as fh:
            if rows:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
        paths.append(p)
    return paths


def source_distance_consistent(rows: list[dict]) -> bool:
    """Every row's stored distance equals the recomputed word-level distance."""
    return all(word_distance(r["source"], r["target"]) == r["distance"] for r in rows)
