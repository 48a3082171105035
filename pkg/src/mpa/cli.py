"""Command-line entry point: ``mpa <command> ...``.

Exit codes: 0 success, 2 bad arguments, 3 I/O error, 4 bad file format or
version, 5 training diverged.
"""

import argparse
import json
import logging
import os
import sys

from . import checkpoint as ckpt_io
from . import dsp, metrics, synth
from .errors import DivergedError, FormatError, InvalidInput, InvalidState, MissingPronunciation, UndefinedCorrelation
from .manifest import EXTRA_DEFAULTS, load_config, load_manifest, model_config, train_config
from .scoring import (
    ScoreReport,
    attention_csv,
    attention_pgm,
    export_attention,
    mask_predict_decode,
    predict_supervised_scores,
    score_utterance,
)
from .text import Lexicon, Vocabulary, build_vocab, encode, phonemize_text
from .training import LABEL_MAX, Utterance, finetune, pretrain

log = logging.getLogger("mpa")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_FORMAT, EXIT_DIVERGED = 0, 2, 3, 4, 5


# ---------------------------------------------------------------------------
# helpers


def _entry_text(entry, cfg):
    lex_path = cfg.get("lexicon") or ""
    if entry.level == "phoneme" and lex_path:
        return phonemize_text(entry.text, Lexicon.load(lex_path))
    return entry.text


def _utterances(entries, vocab, cfg):
    out = []
    for e in entries:
        frames = dsp.load_features(e.audio).frames
        ids = list(encode(_entry_text(e, cfg), vocab).ids)
        if e.labels is not None and len(e.labels) != len(ids):
            raise FormatError(f"entry {e.id}: {len(e.labels)} labels for {len(ids)} tokens")
        out.append(Utterance(e.id, frames, ids, e.labels, e.level))
    return out


def _scale_max(cfg, level):
    value = float(cfg.get("scale_max", 0) or 0)
    return value if value > 0 else float(LABEL_MAX[level])


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        ckpt_io.atomic_write(path, text, mode="w")


def _log_sink(path):
    if path in (None, "-"):
        return lambda rec: print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    fh = open(path, "w", encoding="utf-8")
    return lambda rec: (fh.write(json.dumps(rec, sort_keys=True) + "\n"), fh.flush())


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    synth.write_corpus(args.out_dir, args.n, args.seed)
    with open(os.path.join(args.out_dir, "toy.cfg"), "w", encoding="utf-8") as fh:
        fh.write("# synthetic tone corpus: labels are 0 (detuned) or 2 (clean)\nscale_max = 2\n")
    print(f"wrote {len(synth.SPLITS)} splits of {args.n} utterances to {args.out_dir}")


def cmd_pretrain(args):
    cfg = load_config(args.config)
    entries = load_manifest(args.manifest)
    if not entries:
        raise InvalidInput("manifest is empty")
    level = cfg.get("level", entries[0].level)
    if cfg.get("vocab"):
        vocab = Vocabulary.load(cfg["vocab"], level)
    else:
        vocab = build_vocab([_entry_text(e, cfg) for e in entries], level,
                            cfg.get("vocab_size", EXTRA_DEFAULTS["vocab_size"]))
    utts = _utterances(entries, vocab, cfg)
    ckpt, _ = pretrain(utts, model_config(cfg, len(vocab)), train_config(cfg), vocab, on_log=_log_sink(args.log))
    ckpt_io.save(args.out, ckpt)
    print(f"saved checkpoint after {ckpt.step} steps to {args.out}")


def cmd_finetune(args):
    cfg = load_config(args.config)
    base = ckpt_io.load(args.checkpoint)
    entries = load_manifest(args.manifest)
    utts = _utterances(entries, base.vocab, cfg)
    tc = train_config(cfg, lr=cfg.get("finetune_lr", EXTRA_DEFAULTS["finetune_lr"]),
                      max_steps=cfg.get("finetune_steps", EXTRA_DEFAULTS["finetune_steps"]))
    ckpt, _ = finetune(base, utts, tc, scale_max=_scale_max(cfg, base.vocab.level), on_log=_log_sink(args.log))
    ckpt_io.save(args.out, ckpt)
    print(f"saved fine-tuned checkpoint after {ckpt.step} steps to {args.out}")


def cmd_score(args):
    cfg = load_config(args.config)
    ck = ckpt_io.load(args.checkpoint)
    model = ck.model()
    entries = load_manifest(args.manifest)
    lines = []
    for u in _utterances(entries, ck.vocab, cfg):
        if args.mode == "sup":
            if ck.head is None:
                raise InvalidState("checkpoint has no score head; run finetune first")
            scale = ck.scale_max or _scale_max(cfg, ck.vocab.level)
            rep = predict_supervised_scores(u.frames, u.ids, model, u.id, ck.vocab.level, scale)
        else:
            rep = score_utterance(u.frames, u.ids, model, u.id, ck.vocab.level, _scale_max(cfg, ck.vocab.level))
        lines.append(rep.to_json(ck.vocab))
    _write_text(args.out, "\n".join(lines) + "\n")


def cmd_decode(args):
    cfg = load_config(args.config)
    ck = ckpt_io.load(args.checkpoint)
    model = ck.model()
    rows, pairs = [], []
    for u in _utterances(load_manifest(args.manifest), ck.vocab, cfg):
        n = len(u.ids)
        steps = n if args.steps == "n" else min(int(args.steps), n)
        hyp = list(mask_predict_decode(u.frames, n, steps, model).ids)
        hyp_tok = [ck.vocab.token(i) for i in hyp]
        ref_tok = [ck.vocab.token(i) for i in u.ids]
        pairs.append((hyp_tok, ref_tok))
        rows.append(json.dumps({"id": u.id, "steps": steps, "hyp": " ".join(hyp_tok), "ref": " ".join(ref_tok),
                                "wer": metrics.wer(hyp_tok, ref_tok)}, sort_keys=True))
    if args.out:
        _write_text(args.out, "\n".join(rows) + "\n")
    flat_h = [t for h, _ in pairs for t in h]
    flat_r = [t for _, r in pairs for t in r]
    report = [metrics.metric_record("wer", metrics.corpus_wer(pairs), len(flat_r)),
              metrics.metric_record("token_accuracy", metrics.token_accuracy(flat_h, flat_r), len(flat_r))]
    print(json.dumps(report, sort_keys=True))


def _load_values(path):
    """id -> dict(values, pred, ref) from either a score file or a labelled manifest."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if "tokens" in d:
                rep = ScoreReport.from_json(line)
                pred = [s.predicted_id for s in rep.scores]
                out[rep.utterance_id] = {
                    "values": rep.scaled_scores,
                    "pred": None if any(p is None for p in pred) else pred,
                    "ref": [s.token_id for s in rep.scores],
                    "level": rep.level,
                }
            elif "labels" in d:
                if d["labels"] is None:
                    continue
                out[str(d["id"])] = {"values": d["labels"], "pred": None, "ref": None, "level": d.get("level", "word")}
            else:
                raise FormatError(f"{path}:{lineno}: neither a score report nor a labelled entry")
    return out


def cmd_eval(args):
    scores = _load_values(args.scores)
    labels = _load_values(args.labels)
    pred, ref, pred_ids, ref_ids, ratings = [], [], [], [], []
    for uid, lab in labels.items():
        if uid not in scores:
            log.warning("no scores for %s; skipped", uid)
            continue
        s = scores[uid]
        if len(s["values"]) != len(lab["values"]):
            raise FormatError(f"{uid}: {len(s['values'])} scores for {len(lab['values'])} labels")
        pred += s["values"]
        ref += lab["values"]
        if s["pred"] is not None:
            pred_ids += s["pred"]
            ref_ids += s["ref"]
            ratings += lab["values"]
    if not ref:
        raise InvalidInput("no utterances in common between score and label files")
    report = [metrics.metric_record("mse", metrics.mse(pred, ref), len(ref))]
    try:
        report.append(metrics.metric_record("pcc", metrics.pcc(pred, ref), len(ref)))
    except UndefinedCorrelation as exc:
        print(f"warning: pcc undefined: {exc}", file=sys.stderr)
        rec = metrics.metric_record("pcc", None, len(ref))
        rec["warning"] = str(exc)
        report.append(rec)
    if pred_ids:
        level = next(iter(labels.values()))["level"]
        edges = _bucket_edges(args.buckets, level)
        report.append(metrics.metric_record(
            "accuracy", metrics.token_accuracy(pred_ids, ref_ids), len(ref_ids),
            buckets=metrics.accuracy_by_rating(pred_ids, ref_ids, ratings, edges) if edges else None))
    _write_text(args.out, json.dumps(report, sort_keys=True, indent=1) + "\n")


def _bucket_edges(choice, level):
    if choice is None or choice == "none":
        return None
    if choice == "auto":
        choice = level
    if choice == "phoneme":
        return metrics.PHONEME_BUCKETS
    if choice == "word":
        return metrics.WORD_BUCKETS
    try:
        edges = tuple(float(v) for v in choice.split(","))
    except ValueError:
        raise InvalidInput(f"bad --buckets value {choice!r}") from None
    if len(edges) < 2 or any(b < a for a, b in zip(edges, edges[1:])):
        raise InvalidInput("--buckets edges must be non-decreasing and at least two")
    return edges


def cmd_attn(args):
    cfg = load_config(args.config)
    ck = ckpt_io.load(args.checkpoint)
    entries = [e for e in load_manifest(args.manifest) if e.id == args.id]
    if not entries:
        raise InvalidInput(f"no entry with id {args.id!r} in {args.manifest}")
    u = _utterances(entries, ck.vocab, cfg)[0]
    amap = export_attention(u.frames, u.ids, ck.model())
    ckpt_io.atomic_write(args.out_prefix + ".csv", attention_csv(amap, ck.vocab), mode="w")
    ckpt_io.atomic_write(args.out_prefix + ".pgm", attention_pgm(amap), mode="w")
    print(f"wrote {args.out_prefix}.csv and {args.out_prefix}.pgm ({amap.shape[0]} tokens x {amap.shape[1]} frames)")


def cmd_features(args):
    mel = dsp.load_features(args.wav)
    if args.csv:
        dsp.dump_features_csv(args.csv, mel)
    print(json.dumps({"frames": int(mel.n_frames), "n_mel": int(mel.frames.shape[1])}))


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="mpa", description="Masked pre-training for pronunciation assessment")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic tone corpus")
    s.add_argument("out_dir")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=int, default=7)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", help="masked pre-training")
    s.add_argument("manifest")
    s.add_argument("out")
    s.add_argument("--config")
    s.add_argument("--log", help="training log JSONL (default: stderr)")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", help="fine-tune the score head on labelled data")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("out")
    s.add_argument("--config")
    s.add_argument("--log")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("score", help="score every token of every utterance")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("out", nargs="?", default="-")
    s.add_argument("--mode", choices=("unsup", "sup"), default="unsup")
    s.add_argument("--config")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("decode", help="iterative mask-predict decoding with WER report")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("--steps", default="n", help="step count, or 'n' for one token per step")
    s.add_argument("--out", help="hypotheses JSONL")
    s.add_argument("--config")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", help="MSE / PCC / accuracy of scores against labels")
    s.add_argument("scores")
    s.add_argument("labels")
    s.add_argument("--buckets", default="auto",
                   help="'auto', 'phoneme', 'word', 'none' or comma-separated edges")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("attn", help="export cross-attention alignment as CSV and PGM")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("--id", required=True)
    s.add_argument("out_prefix")
    s.add_argument("--config")
    s.set_defaults(func=cmd_attn)

    s = sub.add_parser("features", help="dump log-mel features of a WAV file")
    s.add_argument("wav")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_features)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (InvalidInput, InvalidState, MissingPronunciation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
