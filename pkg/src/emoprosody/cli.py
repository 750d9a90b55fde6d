"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 partial success (some
utterances or models were skipped; details on standard error).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__, formats
from .config import RunConfig, load_config
from .errors import EmoProsodyError, TrackError, TransportError
from .metrics import eca_report, mcd_report, mos_aggregate, pir_confusion, rate_report
from .prompting import TEMPLATE_VERSION, ControlMode, PromptRequest, make_provider, request_plan
from .prosody import apply_scaling, map_plan
from .ranking import Bucket, Emotion, annotate_corpus, fit_speaker_emotion

log = logging.getLogger("emoprosody")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", type=Path, default=S, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=S, help="override the pair-sampling seed")
    p.add_argument("--jobs", type=int, default=S, help="worker pool size (default: CPU count)")
    p.add_argument("--provider", default=S,
                   help="http | stub | stub:neutral | replay:<plans.jsonl>")
    p.add_argument("--prompt-control", choices=[m.value for m in ControlMode], default=S,
                   help="none, gl (global and local) or local")
    p.add_argument("--log-level", default=S, help="logging level (default WARNING)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="emoprosody", parents=[common],
                     description="Prompt-guided prosody scaling, intensity ranking and evaluation.")
    parser.add_argument("--version", action="store_true", help="print version and schema versions")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train-rank", parents=[common], help="train per-speaker intensity rankers")
    p.add_argument("features", type=Path)
    p.add_argument("--out", type=Path, required=True, help="output directory for model files")
    p.add_argument("--feature-dim", type=int, default=384)
    p.add_argument("--feature-offset", type=int, default=None,
                   help="first feature column for openSMILE-style CSV exports")

    p = sub.add_parser("annotate", parents=[common], help="score utterances with trained rankers")
    p.add_argument("features", type=Path)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--feature-dim", type=int, default=384)
    p.add_argument("--feature-offset", type=int, default=None)
    p.add_argument("--neutral-under", default=None, metavar="EMOTION",
                   help="also score neutral utterances with this emotion's model")

    p = sub.add_parser("prompt", parents=[common], help="obtain scaling plans for tracks")
    p.add_argument("tracks", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--emotion", default=None, help="target emotion for tracks that carry none")
    p.add_argument("--annotations", type=Path, default=None,
                   help="annotation CSV supplying per-utterance intensity levels")

    p = sub.add_parser("scale", parents=[common], help="apply scaling plans to tracks")
    p.add_argument("tracks", type=Path)
    p.add_argument("plans", type=Path, nargs="?", default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="compute an evaluation metric")
    p.add_argument("kind", choices=["wer", "cer", "mcd", "eca", "pir", "mos"])
    p.add_argument("--ref", type=Path, help="reference transcripts CSV or cepstra directory")
    p.add_argument("--hyp", type=Path, help="hypothesis transcripts CSV or cepstra directory")
    p.add_argument("--labels", type=Path, help="utterance_id,pred,truth CSV")
    p.add_argument("--responses", type=Path, help="PIR responses CSV")
    p.add_argument("--ratings", type=Path, help="MOS ratings CSV")
    p.add_argument("--group-by", default="", help="comma-separated MOS condition columns")
    p.add_argument("--out", type=Path, required=True, help="report JSON")
    p.add_argument("--csv", type=Path, default=None, help="plot-ready CSV (default: beside --out)")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, rank=replace(cfg.rank, seed=args.seed))
    if getattr(args, "provider", None):
        cfg = replace(cfg, provider=replace(cfg.provider, provider=args.provider))
    return cfg


def _jobs(args) -> int:
    n = getattr(args, "jobs", None) or os.cpu_count() or 1
    return max(1, n)


def _report_row_errors(errors) -> None:
    for e in errors:
        log.error("%s", e)


def cmd_train_rank(args, cfg: RunConfig) -> int:
    corpus, row_errors = formats.read_features(args.features, args.feature_dim, args.feature_offset)
    _report_row_errors(row_errors)
    speakers = list(dict.fromkeys(u.speaker_id for u in corpus))
    jobs, skipped = [], []
    for spk in speakers:
        emotions = {u.emotion for u in corpus if u.speaker_id == spk}
        targets = [e for e in Emotion if e != Emotion.NEUTRAL and e in emotions]
        for e in targets:
            if Emotion.NEUTRAL not in emotions:
                skipped.append((spk, e, "no neutral utterances"))
            else:
                jobs.append((spk, e))

    rc = cfg.rank

    def train(job):
        spk, e = job
        try:
            return fit_speaker_emotion(corpus, spk, e, C=rc.C, tol=rc.tol, max_iter=rc.max_iter,
                                       limit=rc.pair_limit, seed=rc.seed), None
        except EmoProsodyError as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=_jobs(args)) as pool:
        results = list(pool.map(train, jobs))

    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for (spk, e), (model, err) in zip(jobs, results):
        if model is None:
            skipped.append((spk, e, err))
            continue
        formats.write_model(args.out / formats.model_filename(spk, e), model)
        md = model.metadata
        rows.append([spk, e.value, "trained", md["n_utterances"], md["n_ordered"], md["n_similar"],
                     repr(md["objective"]), md["iterations"], md["converged"], ""])
    for spk, e, why in skipped:
        log.warning("skipping (%s, %s): %s", spk, e.value, why)
        rows.append([spk, e.value, "skipped", "", "", "", "", "", "", why])
    with (args.out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["speaker", "emotion", "status", "n_utterances", "n_ordered", "n_similar",
                    "objective", "iterations", "converged", "message"])
        w.writerows(rows)
    n_trained = len(jobs) - sum(1 for m, _ in results if m is None)
    if n_trained == 0:
        log.error("no (speaker, emotion) pair had both emotional and neutral utterances")
        return EXIT_ERROR
    return EXIT_PARTIAL if skipped or row_errors else EXIT_OK


def cmd_annotate(args, cfg: RunConfig) -> int:
    corpus, row_errors = formats.read_features(args.features, args.feature_dim, args.feature_offset)
    _report_row_errors(row_errors)
    models = formats.read_models_dir(args.models)
    rows, errors = annotate_corpus(corpus, models, neutral_under=args.neutral_under,
                                   thresholds=cfg.rank.explicit_thresholds())
    for e in errors:
        log.error("%s: %s", e.utterance_id, e.message)
    formats.write_annotations(args.out, rows)
    return EXIT_PARTIAL if errors or row_errors else EXIT_OK


def _mode(args) -> ControlMode:
    return ControlMode(getattr(args, "prompt_control", None) or ControlMode.GLOBAL_AND_LOCAL.value)


def cmd_prompt(args, cfg: RunConfig) -> int:
    tracks, row_errors = formats.read_tracks(args.tracks)
    _report_row_errors(row_errors)
    buckets = {}
    if args.annotations:
        ann, ann_errors = formats.read_annotations(args.annotations)
        _report_row_errors(ann_errors)
        buckets = {a.utterance_id: a.bucket for a in ann}
    mode = _mode(args)
    requests, bad = [], 0
    for t in tracks:
        emotion = t.emotion or args.emotion
        if emotion is None:
            log.error("%s: no target emotion (set it in the track or pass --emotion)", t.utterance_id)
            bad += 1
            continue
        level = buckets.get(t.utterance_id) or (Bucket.parse(t.intensity) if t.intensity else None)
        requests.append(PromptRequest(t.text, t.word_strings, Emotion.parse(emotion), level, mode,
                                      t.utterance_id))
    provider = None
    if mode != ControlMode.NONE:
        provider = make_provider(cfg.provider.provider, cfg.provider)

    def run(req):
        try:
            return request_plan(req, cfg.provider, provider, cfg.scaling), None
        except TransportError as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=min(_jobs(args), cfg.provider.max_concurrent_requests)) as pool:
        results = list(pool.map(run, requests))
    records = []
    for req, (plan, err) in zip(requests, results):
        if plan is None:
            log.error("%s: %s", req.utterance_id, err)
            bad += 1
            continue
        if plan.degraded:
            log.warning("%s: degraded to the neutral plan after %d attempts",
                        req.utterance_id, plan.attempts)
        records.append((req.utterance_id, plan))
    formats.write_plans(args.out, records)
    return EXIT_PARTIAL if bad or row_errors else EXIT_OK


def cmd_scale(args, cfg: RunConfig) -> int:
    tracks, row_errors = formats.read_tracks(args.tracks)
    _report_row_errors(row_errors)
    mode = _mode(args)
    if mode == ControlMode.NONE:
        formats.write_tracks(args.out, tracks)
        return EXIT_PARTIAL if row_errors else EXIT_OK
    if args.plans is None:
        log.error("scale needs a plans file unless --prompt-control none")
        return EXIT_ERROR
    records, plan_errors = formats.read_plans(args.plans)
    _report_row_errors(plan_errors)
    plans = dict(records)

    def run(track):
        plan = plans.get(track.utterance_id)
        if plan is None:
            return None, "no plan for this utterance"
        if mode == ControlMode.LOCAL_ONLY:
            plan = plan.without_global()
        try:
            pr = track.effective_pitch_range()
            mapped = map_plan(plan, pr, cfg.scaling, n_words=len(track.words))
            return apply_scaling(track, mapped, pr), None
        except (EmoProsodyError, TrackError) as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=_jobs(args)) as pool:
        results = list(pool.map(run, tracks))
    out, bad = [], 0
    for t, (scaled, err) in zip(tracks, results):
        if scaled is None:
            log.error("%s: %s", t.utterance_id, err)
            bad += 1
        else:
            out.append(scaled)
    formats.write_tracks(args.out, out)
    return EXIT_PARTIAL if bad or row_errors or plan_errors else EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    kind = args.kind

    def need(*names):
        missing = [n for n in names if getattr(args, n) is None]
        if missing:
            raise EmoProsodyError(f"eval {kind} needs " + ", ".join(f"--{n}" for n in missing))

    partial = False
    if kind in ("wer", "cer"):
        need("ref", "hyp")
        report = rate_report(kind, formats.read_transcripts(args.ref), formats.read_transcripts(args.hyp))
        partial = bool(report.extra["missing_hyp"])
    elif kind == "mcd":
        need("ref", "hyp")
        ref, hyp = formats.read_cepstra_dir(args.ref), formats.read_cepstra_dir(args.hyp)
        common = [u for u in ref if u in hyp]
        partial = len(common) != len(ref)
        report = mcd_report({u: (ref[u], hyp[u]) for u in common},
                            cfg.metrics.mcd_exclude_c0, cfg.metrics.mcd_dtw)
    elif kind == "eca":
        need("labels")
        report = eca_report(formats.read_labels(args.labels))
    elif kind == "pir":
        need("responses")
        responses, errors = formats.read_pir_responses(args.responses)
        _report_row_errors(errors)
        partial = bool(errors)
        report = pir_confusion(responses)
    else:
        need("ratings")
        group_by = [c.strip() for c in args.group_by.split(",") if c.strip()]
        report = mos_aggregate(formats.read_ratings(args.ratings), group_by)
    formats.write_report(args.out, report)
    formats.write_report_csv(args.csv or args.out.with_suffix(".csv"), report)
    print(f"{kind}: {report.mean!r} over {report.count}")
    return EXIT_PARTIAL if partial else EXIT_OK


COMMANDS = {
    "train-rank": cmd_train_rank,
    "annotate": cmd_annotate,
    "prompt": cmd_prompt,
    "scale": cmd_scale,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(args, "log_level", "WARNING").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.version:
        schemas = " ".join(f"{k}={v}" for k, v in formats.SCHEMA_VERSIONS.items())
        print(f"emoprosody {__version__} (schemas: {schemas}; prompt template: {TEMPLATE_VERSION})")
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (EmoProsodyError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
