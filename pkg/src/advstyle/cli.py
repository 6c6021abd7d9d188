"""Command-line entry point: ``advstyle <command> [options]``.

Exit codes: 0 success, 1 gate or experiment failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import asr, corpus, harness
from .signal import features

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
GATE_EXACT = 0.95
GATE_WER = 0.05


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _opt(args, cfg: dict, name: str, default):
    """Flag value, else config value, else default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _csv(v):
    return [s.strip() for s in v.split(",") if s.strip()] if isinstance(v, str) else list(v)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True))


def _need_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} path does not exist: {p}")
    return p


def _load_features(manifest: Path):
    recs = corpus.read_manifest(manifest)
    if not recs:
        raise UsageError(f"{manifest}: empty manifest")
    feats = [features(corpus.load_clip(manifest, r).samples) for r in recs]
    return feats, [r.transcript for r in recs]


# ---------------------------------------------------------------------------
# commands


def cmd_synth_corpus(args, cfg) -> int:
    n = int(_opt(args, cfg, "n", 500))
    if n <= 0:
        raise UsageError(f"--n must be positive, got {n}")
    out = Path(_opt(args, cfg, "out", "corpus"))
    seed = int(_opt(args, cfg, "seed", 0))
    lo, hi = int(_opt(args, cfg, "min_words", 1)), int(_opt(args, cfg, "max_words", 5))
    if not 1 <= lo <= hi:
        raise UsageError("word counts must satisfy 1 <= min-words <= max-words")
    try:
        manifest = corpus.write_corpus(out, n, seed, lo, hi)
    except OSError as exc:
        print(f"error: cannot write corpus to {out}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _emit({"manifest": str(manifest), "n": n, "seed": seed})
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    manifest = _need_file(_opt(args, cfg, "corpus", None), "corpus")
    out = Path(_opt(args, cfg, "out", "model.json"))
    feats, texts = _load_features(manifest)
    model, rep = asr.train(
        feats,
        texts,
        epochs=int(_opt(args, cfg, "epochs", 30)),
        lr=float(_opt(args, cfg, "lr", 1e-2)),
        seed=int(_opt(args, cfg, "seed", 0)),
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    asr.save_checkpoint(model, out)
    gate = rep.heldout_exact >= GATE_EXACT and rep.heldout_wer <= GATE_WER
    _emit(
        {
            "checkpoint": str(out),
            "heldout_exact": rep.heldout_exact,
            "heldout_wer": rep.heldout_wer,
            "n_train": rep.n_train,
            "n_heldout": rep.n_heldout,
            "epochs": rep.epochs,
            "gate_passed": gate,
        }
    )
    return EXIT_OK if gate else EXIT_FAIL


def cmd_eval_asr(args, cfg) -> int:
    manifest = _need_file(_opt(args, cfg, "corpus", None), "corpus")
    ckpt = _need_file(_opt(args, cfg, "checkpoint", None), "checkpoint")
    model = asr.load_checkpoint(ckpt)
    feats, texts = _load_features(manifest)
    exact, w = asr.evaluate(model, feats, texts)
    _emit({"n": len(texts), "exact": exact, "wer": w})
    return EXIT_OK


def _run_config(args, cfg) -> harness.RunConfig:
    keys = {f: None for f in harness.RunConfig.__dataclass_fields__}
    vals = {}
    defaults = harness.RunConfig("", "", "")
    for k in keys:
        vals[k] = _opt(args, cfg, k, getattr(defaults, k))
    vals["methods"] = _csv(vals["methods"])
    vals["selections"] = _csv(vals["selections"])
    if vals["workers"] in (None, 0):
        vals["workers"] = os.cpu_count() or 1
    for k in ("corpus", "checkpoint"):
        _need_file(vals[k] or None, k)
    vals["out"] = vals["out"] or "attack_out"
    rc = harness.RunConfig(**vals)
    try:
        rc.validate()
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from exc
    return rc


def cmd_attack(args, cfg) -> int:
    rc = _run_config(args, cfg)
    try:
        results = harness.run_batch(rc)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = harness.read_results(results)
    problems = harness.audit(rows, rc.b)
    for p in problems:
        print(f"audit: {p}", file=sys.stderr)
    (Path(rc.out) / "run_config.json").write_text(json.dumps(asdict(rc), indent=1))
    _emit(
        {
            "results": str(results),
            "rows": len(rows),
            "successes": sum(r["success"] for r in rows),
            "errors": sum(r["error"] is not None for r in rows),
            "audit_problems": problems,
        }
    )
    return EXIT_FAIL if problems else EXIT_OK


def cmd_report(args, cfg) -> int:
    inputs = args.results or cfg.get("results") or []
    if not inputs:
        raise UsageError("report needs at least one results file")
    rows = []
    try:
        for p in inputs:
            rows.extend(harness.read_results(_need_file(p, "results")))
        report = harness.build_report(rows)
    except harness.SchemaError as exc:
        raise UsageError(str(exc)) from exc
    out = _opt(args, cfg, "out", "report")
    paths = harness.write_report(report, out)
    _emit({"outputs": [str(p) for p in paths], "table": report["table"]})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values (flags override)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="attack worker processes (default: CPU count)")
    common.add_argument("--out", help="output path (directory or file, per command)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="advstyle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-corpus", parents=[common], help="generate a synthetic WAV corpus")
    s.add_argument("--n", type=int)
    s.add_argument("--min-words", type=int)
    s.add_argument("--max-words", type=int)
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("train", parents=[common], help="train the toy ASR and gate it")
    s.add_argument("--corpus")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-asr", parents=[common], help="exact-match and WER of a checkpoint")
    s.add_argument("--corpus")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_eval_asr)

    s = sub.add_parser("attack", parents=[common], help="run an attack experiment matrix")
    s.add_argument("--corpus")
    s.add_argument("--checkpoint")
    s.add_argument("--methods", help="comma list of sta,sca,attack-only")
    s.add_argument("--selections", help="comma list of pitch,rhythm,both")
    s.add_argument("--n-examples", type=int)
    s.add_argument("--min-words", type=int)
    s.add_argument("--max-words", type=int)
    s.add_argument("--min-distance", type=int)
    s.add_argument("--max-distance", type=int)
    s.add_argument("--p-sub", type=float)
    s.add_argument("--p-ins", type=float)
    s.add_argument("--p-del", type=float)
    s.add_argument("--max-iters", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--b", type=float)
    s.add_argument("--lam", type=float)
    s.add_argument("--sca-units", choices=("raw", "relative"))
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("report", parents=[common], help="aggregate results into tables")
    s.add_argument("results", nargs="*")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
