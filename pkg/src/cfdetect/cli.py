"""Command-line entry point: ``cfdetect train|eval|predict|analyze``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path

import torch

from . import analysis
from .config import RunConfig, load_config
from .corpus import (
    DataError, Vocab, load_detection_data, load_span_data, load_statements, split, tokenize,
)
from .encoder import ConfigError
from .heads import DETECT, SPANS, STAGE_FOR_TASK, base_digest, classify
from .metrics import binary_prf, span_prf, to_json, to_text
from .spans import denormalize
from .training import (
    BCE_EPS, Checkpoint, CheckpointError, TrainingDiverged, encode_statements, predict_outputs,
    predict_spans, train_stage1, train_stage2,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _setup(threads: int) -> None:
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _train_dev(cfg: RunConfig, task: str, loader):
    paths = cfg.data[task]
    if paths.train is None:
        raise ConfigError(f"[data.{task}] train is required for training")
    train = loader(paths.train)
    if paths.dev is not None:
        return train, loader(paths.dev)
    return split(train, cfg.split_ratio, cfg.seed)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    _setup(cfg.num_threads)
    out_dir = Path(args.out) if args.out else cfg.checkpoint_dir
    tcfg = cfg.train[args.task]
    extra = {}
    if args.task == DETECT:
        if args.from_checkpoint or args.cold_start:
            raise UsageError("--from-checkpoint/--cold-start apply to 'train spans' only")
        train, dev = _train_dev(cfg, DETECT, load_detection_data)
        ckpt = train_stage1(train, dev, cfg.model, tcfg)
    else:
        if not args.from_checkpoint and not args.cold_start:
            raise UsageError(
                "span training fine-tunes the base trained on detection: pass "
                "--from-checkpoint <stage1.ckpt>, or --cold-start to train from scratch"
            )
        init = Checkpoint.load(args.from_checkpoint) if args.from_checkpoint else None
        train, dev = _train_dev(cfg, SPANS, load_span_data)
        digests = {}
        ckpt = train_stage2(init, train, dev, cfg.model, tcfg, cold_start=init is None,
                            on_init=lambda m: digests.setdefault("initial", base_digest(m)))
        extra = {"initial_base_digest": digests["initial"],
                 "cold_start": init is None}
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"{ckpt.stage}.ckpt"
    ckpt.save(ckpt_path)
    key, pick = ("dev_f1", max) if args.task == DETECT else ("dev_loss", min)
    best = pick(ckpt.history, key=lambda r: r[key])
    _write_json(out_dir / f"train_log_{args.task}.json", {
        "task": args.task,
        "stage": ckpt.stage,
        "seed": cfg.seed,
        "history": ckpt.history,
        "best_epoch": best["epoch"],
        "base_digest": base_digest(ckpt.build_model()),
        **extra,
    })
    print(f"wrote {ckpt_path} (best epoch {best['epoch']}, {key}={best[key]:.6f})")
    return EXIT_OK


def _load_for_task(path, task: str) -> Checkpoint:
    ckpt = Checkpoint.load(path)
    if ckpt.stage != STAGE_FOR_TASK[task]:
        raise UsageError(
            f"task '{task}' needs a {STAGE_FOR_TASK[task]} checkpoint, got {ckpt.stage}"
        )
    return ckpt


def _report_dir(args):
    """``--out`` if given, else ``paths.report_dir`` from ``--config``."""
    if args.out:
        return Path(args.out)
    if args.config:
        return load_config(args.config).report_dir
    return None


def cmd_eval(args) -> int:
    ckpt = _load_for_task(args.checkpoint, args.task)
    _setup(1)
    model, vocab = ckpt.build_model(), Vocab(list(ckpt.vocab))
    bs = ckpt.train_config.eval_batch_size
    if args.task == DETECT:
        data = load_detection_data(args.data)
        probs = predict_outputs(model, vocab, [s for s, _ in data], bs)
        preds = classify(probs, ckpt.train_config.threshold).tolist()
        metrics = binary_prf(zip(preds, [y for _, y in data]))
    else:
        data = load_span_data(args.data)
        stmts = [s for s, _ in data]
        preds = predict_spans(model, vocab, stmts, bs)
        metrics = span_prf(zip(preds, [q for _, q in data]), [s.length for s in stmts])
    out = _report_dir(args)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"metrics_{args.task}.json").write_text(to_json(metrics) + "\n", encoding="utf-8")
        (out / f"metrics_{args.task}.txt").write_text(to_text(metrics) + "\n", encoding="utf-8")
    print(to_text(metrics))
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = _load_for_task(args.checkpoint, args.task)
    _setup(1)
    model, vocab = ckpt.build_model(), Vocab(list(ckpt.vocab))
    stmts = load_statements(args.input)
    bs = ckpt.train_config.eval_batch_size
    out = Path(args.out)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if args.task == DETECT:
            w.writerow(["sentenceID", "pred_label", "probability"])
            probs = predict_outputs(model, vocab, stmts, bs) if stmts else torch.empty(0)
            labels = classify(probs, ckpt.train_config.threshold).tolist()
            for s, lab, p in zip(stmts, labels, probs.tolist()):
                p = min(max(p, BCE_EPS), 1 - BCE_EPS)
                w.writerow([s.id, lab, f"{p:.7f}"])
        else:
            w.writerow(["sentenceID", "antecedent_startid", "antecedent_endid",
                        "consequent_startid", "consequent_endid"])
            quads = predict_spans(model, vocab, stmts, bs) if stmts else []
            for s, q in zip(stmts, quads):
                w.writerow([s.id, *q.as_row()])
    print(f"wrote {len(stmts)} predictions to {out}")
    return EXIT_OK


def _safe_name(sid: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", sid) or "statement"


def analyze_statement(model, vocab, statement, out_dir: Path):
    """Annotated report and final-layer heatmap for one statement."""
    tokens = tokenize(statement.text)
    ids, lens = encode_statements([statement], vocab, model.cfg.max_len)
    model.eval()
    with torch.no_grad():
        feats, enc = model.base(ids, lens, return_encoder_output=True)
        head_out = model.head(feats)[0]
    n = int(lens[0])
    tokens = tokens[: n - 1]
    att = enc.attentions[-1][0].double().numpy()
    scores = analysis.received_attention(att, n)
    attribution = analysis.top_heads(scores[:, 1:])
    predicted = None
    if model.task == SPANS:
        predicted = denormalize(head_out.tolist(), statement.length)
    report = analysis.annotate(statement, attribution, analysis.lexical_tags(tokens), tokens,
                               predicted)
    stem = _safe_name(statement.id)
    lines = [report.render(), ""]
    if model.task == DETECT:
        lines.append(f"probability: {float(head_out):.7f}")
    else:
        lines.append(f"antecedent: {report.antecedent}")
        lines.append(f"consequent: {report.consequent if report.consequent else 'ABSENT'}")
    lines.append("")
    lines.append("token\tchars\tcategory\theads\tantecedent\tconsequent")
    for t in report.tokens:
        lines.append(f"{t.surface}\t{t.char_start}-{t.char_end}\t{t.category}\t"
                     f"{','.join(map(str, t.heads))}\t{int(t.antecedent)}\t{int(t.consequent)}")
    (out_dir / f"{stem}.report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    analysis.export_attention(att, ["[CLS]"] + [t.surface for t in tokens],
                              out_dir / f"{stem}.attention.json", n)
    return report


def cmd_analyze(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    _setup(1)
    model, vocab = ckpt.build_model(), Vocab(list(ckpt.vocab))
    out_dir = _report_dir(args)
    if out_dir is None:
        raise UsageError("analyze needs --out or a --config with paths.report_dir")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out_dir}: {exc}") from None
    stmts = load_statements(args.input)
    for s in stmts:
        analyze_statement(model, vocab, s, out_dir)
    print(f"wrote {len(stmts)} reports and heatmaps to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfdetect", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run stage 1 (detect) or stage 2 (spans)")
    t.add_argument("task", choices=[DETECT, SPANS])
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--from-checkpoint")
    t.add_argument("--cold-start", action="store_true")
    t.add_argument("--out", help="output directory (default: paths.checkpoint_dir)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a labelled file")
    e.add_argument("task", choices=[DETECT, SPANS])
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="directory for metrics JSON and text")
    e.add_argument("--config", help="take the default --out from paths.report_dir")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write predictions for a statements file")
    pr.add_argument("task", choices=[DETECT, SPANS])
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("analyze", help="per-statement head attribution reports")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--input", required=True)
    a.add_argument("--out")
    a.add_argument("--config", help="take the default --out from paths.report_dir")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
