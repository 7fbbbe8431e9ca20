"""Command-line entry point wiring curation, verification, training,
evaluation and reporting into reproducible runs.

Exit codes: 0 success, 1 domain failure (a non-equivalent single-pair
verification, a collapsed training run), 2 usage errors and missing files.
All randomness flows from the run's single --seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import tempfile
import time
from datetime import datetime, timezone

from . import curation, trainer, verifier
from .policy import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint

JSONL_SCHEMA_VERSION = 1


def _config_hash(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(
    path: str,
    command: str,
    config_obj,
    seed,
    started_at: str,
    artifacts: list[str],
) -> None:
    """Atomically record what a run did and what it produced."""
    manifest = {
        "command": command,
        "config_hash": _config_hash(config_obj),
        "seed": seed,
        "started_at": started_at,
        "finished_at": _utc_now(),
        "artifacts": sorted(artifacts),
    }
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require_file(path: str, parser: argparse.ArgumentParser) -> None:
    if not os.path.exists(path):
        parser.exit(2, f"error: file not found: {path}\n")


def _cmd_verify(args, parser) -> int:
    started = _utc_now()
    if args.pairs:
        _require_file(args.pairs, parser)
        out_lines = []
        with open(args.pairs, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                verdict = verifier.verify(str(row["pred"]), str(row["gold"]))
                row["outcome"] = verdict.outcome
                row["stage"] = verdict.stage
                out_lines.append(json.dumps(row, ensure_ascii=False))
        text = "\n".join(out_lines) + ("\n" if out_lines else "")
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
            write_manifest(
                args.out + ".manifest.json",
                "verify",
                {"pairs": args.pairs},
                args.seed,
                started,
                [args.out],
            )
        else:
            sys.stdout.write(text)
        return 0
    if args.gold is None or args.pred is None:
        parser.error("verify needs --gold and --pred, or --pairs")
    verdict = verifier.verify(args.pred, args.gold)
    print(json.dumps({"outcome": verdict.outcome, "stage": verdict.stage}))
    if args.manifest:
        write_manifest(
            args.manifest,
            "verify",
            {"gold": args.gold, "pred": args.pred},
            args.seed,
            started,
            [],
        )
    return 0 if verdict.outcome == verifier.EQUIVALENT else 1


def _cmd_curate(args, parser) -> int:
    started = _utc_now()
    _require_file(args.infile, parser)
    for path in args.eval_set:
        _require_file(path, parser)
    records = curation.read_records(args.infile)
    eval_questions: list[str] = []
    for path in args.eval_set:
        eval_questions.extend(r.question for r in curation.read_records(path))
    config = curation.CurationConfig(
        ngram_n=args.ngram,
        jaccard_threshold=args.jaccard,
        max_answer_chars=args.max_answer_chars,
        eval_questions=tuple(eval_questions),
    )
    kept, report = curation.run_pipeline(records, config)
    curation.write_records(kept, args.out)
    artifacts = [args.out]
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        artifacts.append(args.report)
    print(report.render_table())
    write_manifest(
        args.out + ".manifest.json",
        "curate",
        {
            "in": args.infile,
            "ngram": args.ngram,
            "jaccard": args.jaccard,
            "max_answer_chars": args.max_answer_chars,
            "eval_sets": list(args.eval_set),
        },
        args.seed,
        started,
        artifacts,
    )
    return 0


def _cmd_train(args, parser) -> int:
    started = _utc_now()
    _require_file(args.config, parser)
    config = trainer.load_config(args.config)
    if args.seed is not None:
        config = trainer.TrainConfig.from_dict(
            {**config.to_dict(), "seed": args.seed}
        )
    os.makedirs(args.out_dir, exist_ok=True)
    metrics_path = os.path.join(args.out_dir, "metrics.jsonl")
    artifacts = [metrics_path]
    t0 = time.time()
    try:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            result = trainer.train(
                config,
                metrics_sink=lambda rec: fh.write(
                    json.dumps(rec.to_dict(), sort_keys=True) + "\n"
                ),
                jobs=args.jobs,
            )
    except trainer.CollectAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    for idx, ckpt in enumerate(result.stage_checkpoints):
        path = os.path.join(args.out_dir, f"stage{idx + 1}.ckpt")
        save_checkpoint(ckpt, path)
        artifacts.append(path)
    final_path = os.path.join(args.out_dir, "final.ckpt")
    save_checkpoint(result.policy, final_path)
    artifacts.append(final_path)
    write_manifest(
        os.path.join(args.out_dir, "manifest.json"),
        "train",
        config.to_dict(),
        config.seed,
        started,
        artifacts,
    )
    print(
        f"trained {len(result.metrics)} steps across "
        f"{len(config.stages)} stage(s) in {time.time() - t0:.1f}s; "
        f"artifacts in {args.out_dir}"
    )
    return 0


def _cmd_eval(args, parser) -> int:
    started = _utc_now()
    _require_file(args.ckpt, parser)
    params = load_checkpoint(args.ckpt)
    if args.config:
        _require_file(args.config, parser)
        spec = trainer.load_config(args.config).task
    else:
        spec = trainer.TaskSpec()
    score = trainer.evaluate(
        params,
        spec,
        k=args.k,
        temperature=args.temperature,
        max_len=args.max_len,
        seed=args.seed if args.seed is not None else 0,
        n_tasks=args.n_tasks,
    )
    print(json.dumps({"avg_at_k": score, "k": args.k, "n_tasks": args.n_tasks}))
    if args.manifest:
        write_manifest(
            args.manifest,
            "eval",
            {"ckpt": args.ckpt, "k": args.k, "temperature": args.temperature},
            args.seed,
            started,
            [],
        )
    return 0


def _cmd_report(args, parser) -> int:
    started = _utc_now()
    _require_file(args.metrics, parser)
    fields = [
        "step",
        "stage",
        "mean_response_len",
        "mean_reward",
        "dropped_group_fraction",
        "mean_repetition",
        "objective",
        "grad_norm",
        "avg_at_k",
    ]
    with open(args.metrics, "r", encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    write_manifest(
        args.out + ".manifest.json",
        "report",
        {"metrics": args.metrics},
        args.seed,
        started,
        [args.out],
    )
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlvrlab",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"rlvrlab 0.1.0 (checkpoint format v{CHECKPOINT_VERSION}, "
            f"jsonl schema v{JSONL_SCHEMA_VERSION})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="check a predicted answer against gold")
    p.add_argument("--gold")
    p.add_argument("--pred")
    p.add_argument("--pairs", help="JSONL of {gold, pred} rows for batch mode")
    p.add_argument("--out", help="output JSONL for batch mode (default stdout)")
    p.add_argument("--manifest", help="optional manifest path for single-pair mode")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("curate", help="run the data-curation funnel")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-set", action="append", default=[])
    p.add_argument("--report", help="JSON funnel report path")
    p.add_argument("--ngram", type=int, default=10)
    p.add_argument("--jaccard", type=float, default=0.5)
    p.add_argument("--max-answer-chars", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_curate)

    p = sub.add_parser("train", help="run multi-stage policy optimization")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument(
        "--jobs",
        type=int,
        default=1,
        help="rollout worker threads; >1 keeps results identical but "
        "may interleave logging",
    )
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="avg@k of a checkpoint on the task")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", help="train config supplying the task spec")
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--n-tasks", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="optional manifest path")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("report", help="metrics JSONL to CSV curves")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_report)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help/--version
        return int(exc.code or 0)
    try:
        return args.fn(args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)


def main() -> None:
    sys.exit(dispatch())
