"""Command line interface.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import yaml

from . import __version__
from .lm import (Direction, LMFormatError, NGramLM, load_lm, lm_to_dict)
from .metrics import BleuConfig, bleu, novelty
from .pipelines import (PRESETS, LMPair, PipelineConfig, abductive_infill, paraphrase, preset,
                        select_with_novelty_threshold)
from .vocab import Tokenizer, build_vocabulary

logger = logging.getLogger("refdec")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3
MANIFEST_FORMAT = "refdec-manifest"
REPORT_FORMAT = "refdec-eval-report"
FORMAT_VERSION = 1


class CLIError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CLIError(f"{self.prog}: error: {message}", EXIT_USAGE)


# -- io helpers ----------------------------------------------------------------


def atomic_write(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}", EXIT_IO) from None


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, ensure_ascii=False) + "\n"


def read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\n").rstrip("\r") for line in fh]
    except FileNotFoundError:
        raise CLIError(f"file not found: {path}", EXIT_IO) from None
    except (OSError, UnicodeDecodeError) as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from None


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    text = "\n".join(read_lines(path))
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise CLIError(f"cannot parse config {path}: {exc}", EXIT_USAGE) from None
    if not isinstance(data, dict):
        raise CLIError(f"config {path} must be a mapping", EXIT_USAGE)
    return data


def _load_model(path, direction: Direction) -> NGramLM:
    if not Path(path).is_file():
        raise CLIError(f"model file not found: {path}", EXIT_IO)
    try:
        lm = load_lm(path)
    except LMFormatError as exc:
        raise CLIError(f"bad model file {path}: {exc}", EXIT_DATA) from None
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from None
    if lm.lm_direction is not direction:
        raise CLIError(f"{path} holds a {lm.lm_direction.value} model, expected "
                       f"{direction.value}", EXIT_USAGE)
    return lm


# -- run configuration ---------------------------------------------------------


RUN_KEYS = {"task", "preset", "forward_lm", "backward_lm", "input", "output", "manifest",
            "diagnostics", "seed", "novelty_threshold", "full"}


def resolve_run(args, command: str) -> dict:
    """Merge preset defaults < config file < command-line flags."""
    file_cfg = _load_config_file(args.config)
    allowed_tasks = {"paraphrase": ("paraphrase",), "infill": ("infill", "anlg")}[command]
    if "task" in file_cfg and file_cfg["task"] not in allowed_tasks:
        raise CLIError(f"config task {file_cfg['task']!r} does not match command {command!r}",
                       EXIT_USAGE)
    pipeline_overrides = {k: v for k, v in file_cfg.items() if k not in RUN_KEYS}
    pipeline_overrides.pop("task", None)
    if isinstance(file_cfg.get("pipeline"), dict):
        pipeline_overrides.pop("pipeline")
        pipeline_overrides.update(file_cfg["pipeline"])
    run = {k: file_cfg.get(k) for k in RUN_KEYS}
    for key in ("forward_lm", "backward_lm", "input", "output", "manifest", "diagnostics",
                "seed", "novelty_threshold"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    if args.task_preset is not None:
        run["preset"] = args.task_preset
    run["preset"] = run["preset"] or ("paraphrase" if command == "paraphrase" else "anlg")
    run["full"] = bool(args.full or run.get("full"))
    if run["preset"] not in PRESETS:
        raise CLIError(f"unknown task preset {run['preset']!r}", EXIT_USAGE)
    for key in ("forward_lm", "backward_lm", "input", "output"):
        if not run.get(key):
            raise CLIError(f"missing required setting '{key}' (flag --{key.replace('_', '-')} "
                           "or config file)", EXIT_USAGE)
    for key in ("forward_lm", "backward_lm", "input"):
        if not Path(run[key]).exists():
            raise CLIError(f"file not found: {run[key]}", EXIT_IO)
    if run.get("seed") is not None:
        pipeline_overrides["seed"] = run["seed"]
    if run.get("novelty_threshold") is not None:
        pipeline_overrides["novelty_threshold"] = run["novelty_threshold"]
    try:
        cfg = PipelineConfig.from_dict({**PRESETS[run["preset"]], **pipeline_overrides})
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid configuration: {exc}", EXIT_USAGE) from None
    run["pipeline"] = cfg
    run["manifest"] = run.get("manifest") or str(run["output"]) + ".manifest.json"
    return run


def _manifest_header(command: str, run: dict, lms: LMPair) -> dict:
    cfg: PipelineConfig = run["pipeline"]
    return {
        "format": MANIFEST_FORMAT,
        "format_version": FORMAT_VERSION,
        "refdec_version": __version__,
        "command": command,
        "preset": run["preset"],
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "parameters": cfg.parameter_table(),
        "models": {"forward": str(run["forward_lm"]), "backward": str(run["backward_lm"]),
                   "vocab_size": len(lms.vocab), "order": lms.forward.order},
        "input": str(run["input"]),
    }


def _record_common(result, lms, full: bool) -> dict:
    vocab = lms.vocab
    rec = {
        "status": result.status,
        "calibration": {d.value: {"p": c.p, "entropy": c.entropy, "flag": c.flag}
                        for d, c in result.calibrations.items()},
        "ensembles": {d.value: b.sampler.ensemble.to_dict(vocab) for d, b in result.builds.items()},
    }
    if full:
        rec["candidates"] = [c.to_dict(vocab) for c in result.candidates]
        if result.rejected:
            rec["rejected"] = [c.to_dict(vocab) for c in result.rejected]
    return rec


def _diagnostic_lines(line_no: int, result) -> list[str]:
    out = []
    for d, b in result.builds.items():
        for r in b.trace.to_records():
            out.append(json.dumps({"line": line_no, "direction": d.value, **r}))
    return out


def _tokenizer_for(lm: NGramLM) -> Tokenizer:
    return getattr(lm, "tokenizer_", None) or Tokenizer()


# -- commands --------------------------------------------------------------------


def cmd_train_lm(args) -> int:
    if args.order < 1:
        raise CLIError(f"--order must be >= 1, got {args.order}", EXIT_USAGE)
    if not args.k > 0:
        raise CLIError(f"--k must be > 0, got {args.k}", EXIT_USAGE)
    if args.heldout_every < 2 and args.heldout_every != 0:
        raise CLIError("--heldout-every must be 0 (disabled) or >= 2", EXIT_USAGE)
    tokenizer = Tokenizer(lowercase=not args.no_lowercase, split_punct=not args.no_split_punct)
    docs = [tokenizer.tokenize(line) for line in read_lines(args.corpus) if line.strip()]
    if not docs:
        raise CLIError(f"corpus {args.corpus} has no documents", EXIT_DATA)
    every = args.heldout_every
    held = [d for i, d in enumerate(docs) if every and i % every == every - 1]
    train = [d for i, d in enumerate(docs) if not (every and i % every == every - 1)]
    vocab = build_vocabulary(train)
    out_dir = Path(args.out_dir)
    print(f"vocabulary size: {len(vocab)}")
    for direction in (Direction.FORWARD, Direction.BACKWARD):
        lm = NGramLM(order=args.order, k=args.k, direction=direction.value,
                     vocabulary=vocab).fit(train)
        path = out_dir / f"{direction.value}.json"
        atomic_write(path, _dump_json(lm_to_dict(lm, tokenizer)))
        if held:
            print(f"{direction.value} held-out perplexity: {lm.perplexity(held):.4f} "
                  f"({len(held)} documents)")
        else:
            print(f"{direction.value} training perplexity: {lm.perplexity(train):.4f} "
                  "(corpus too small for a held-out split)")
        print(f"wrote {path}")
    return EXIT_OK


def _load_pair(run) -> LMPair:
    fwd = _load_model(run["forward_lm"], Direction.FORWARD)
    bwd = _load_model(run["backward_lm"], Direction.BACKWARD)
    try:
        return LMPair(fwd, bwd)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_DATA) from None


def cmd_paraphrase(args) -> int:
    run = resolve_run(args, "paraphrase")
    lms = _load_pair(run)
    cfg: PipelineConfig = run["pipeline"]
    tokenizer = _tokenizer_for(lms.forward)
    lines = read_lines(run["input"])
    sources = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    if not sources:
        raise CLIError(f"input {run['input']} has no sentences", EXIT_DATA)
    manifest = _manifest_header("paraphrase", run, lms)
    records, outputs, diag = [], [], []
    for line_no, text in sources:
        rec = {"line": line_no, "source": text}
        try:
            ids = lms.vocab.encode(tokenizer.tokenize(text))
            result = paraphrase(ids, lms, cfg, rng_key=(line_no,))
        except Exception as exc:  # per-line failures are recorded, the run continues
            logger.warning("line %d failed: %s", line_no, exc)
            rec.update(status="error", error=f"{type(exc).__name__}: {exc}")
            records.append(rec)
            outputs.append("")
            continue
        rec.update(_record_common(result, lms, run["full"]))
        rec["generation_length"] = cfg.generation_length(len(result.source))
        if result.candidates:
            sel = select_with_novelty_threshold(result.candidates, cfg.novelty_threshold)
            rec["selected"] = sel.candidate.to_dict(lms.vocab)
            rec["fallback"] = sel.fallback
            outputs.append(tokenizer.detokenize(lms.vocab.decode(sel.candidate.tokens)))
        else:
            outputs.append("")
        diag.extend(_diagnostic_lines(line_no, result))
        records.append(rec)
    manifest["records"] = records
    selected = [r["selected"]["novelty"] for r in records if "selected" in r]
    manifest["summary"] = {
        "records": len(records),
        "ok": sum(r["status"] == "ok" for r in records),
        "mean_selected_novelty": sum(selected) / len(selected) if selected else None,
    }
    atomic_write(run["output"], "".join(o + "\n" for o in outputs))
    atomic_write(run["manifest"], _dump_json(manifest))
    if run.get("diagnostics"):
        atomic_write(run["diagnostics"], "".join(d + "\n" for d in diag))
    return EXIT_OK


EMPTY_MARKER = "<none>"


def cmd_infill(args) -> int:
    run = resolve_run(args, "infill")
    lms = _load_pair(run)
    cfg: PipelineConfig = run["pipeline"]
    tokenizer = _tokenizer_for(lms.forward)
    lines = read_lines(run["input"])
    if not any(line.strip() for line in lines):
        raise CLIError(f"input {run['input']} has no records", EXIT_DATA)
    manifest = _manifest_header("infill", run, lms)
    records, outputs, skipped, diag = [], [], [], []
    for i, line in enumerate(lines):
        line_no = i + 1
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0].strip() or not fields[1].strip():
            print(f"warning: line {line_no}: expected 'o1<TAB>o2', skipping", file=sys.stderr)
            skipped.append(line_no)
            continue
        rec = {"line": line_no, "o1": fields[0], "o2": fields[1]}
        try:
            o1 = lms.vocab.encode(tokenizer.tokenize(fields[0]))
            o2 = lms.vocab.encode(tokenizer.tokenize(fields[1]))
            result = abductive_infill(o1, o2, lms, cfg, rng_key=(line_no,))
        except Exception as exc:
            logger.warning("line %d failed: %s", line_no, exc)
            rec.update(status="error", error=f"{type(exc).__name__}: {exc}")
            records.append(rec)
            outputs.append(EMPTY_MARKER)
            continue
        rec.update(_record_common(result, lms, run["full"]))
        rec["generation_length"] = cfg.generation_length(len(result.source))
        rec["n_passed"] = len(result.candidates)
        rec["n_rejected"] = len(result.rejected)
        if result.candidates:
            rec["selected"] = result.candidates[0].to_dict(lms.vocab)
            outputs.append(tokenizer.detokenize(lms.vocab.decode(result.candidates[0].tokens)))
        else:
            outputs.append(EMPTY_MARKER)
        diag.extend(_diagnostic_lines(line_no, result))
        records.append(rec)
    manifest["records"] = records
    manifest["skipped_lines"] = skipped
    manifest["summary"] = {"records": len(records), "skipped": len(skipped),
                           "with_hypothesis": sum("selected" in r for r in records)}
    atomic_write(run["output"], "".join(o + "\n" for o in outputs))
    atomic_write(run["manifest"], _dump_json(manifest))
    if run.get("diagnostics"):
        atomic_write(run["diagnostics"], "".join(d + "\n" for d in diag))
    return EXIT_OK


def cmd_eval(args) -> int:
    tokenizer = Tokenizer(lowercase=not args.no_lowercase, split_punct=not args.no_split_punct)
    try:
        bleu_cfg = BleuConfig(args.bleu_order, args.bleu_smoothing)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from None
    cands = read_lines(args.candidates)
    srcs = read_lines(args.sources)
    refs = read_lines(args.references) if args.references else None
    if len(cands) != len(srcs) or (refs is not None and len(refs) != len(cands)):
        raise CLIError(f"line counts differ: candidates={len(cands)} sources={len(srcs)}"
                       + (f" references={len(refs)}" if refs is not None else ""), EXIT_DATA)
    if not cands:
        raise CLIError("no lines to evaluate", EXIT_DATA)
    rows, bleus, novs = [], [], []
    for i, (c, s) in enumerate(zip(cands, srcs)):
        ct, st = tokenizer.tokenize(c), tokenizer.tokenize(s)
        row = {"line": i + 1, "candidate": c, "source": s, "bleu": None, "novelty": None}
        if refs is not None:
            row["reference"] = refs[i]
        if ct and st:
            row["novelty"] = novelty(ct, st, bleu_cfg)
            novs.append(row["novelty"])
        if refs is not None:
            rt = tokenizer.tokenize(refs[i])
            if ct and rt:
                row["bleu"] = bleu(ct, [rt], bleu_cfg)
                bleus.append(row["bleu"])
        rows.append(row)
    report = {
        "format": REPORT_FORMAT,
        "format_version": FORMAT_VERSION,
        "bleu_config": {"max_ngram_order": bleu_cfg.max_ngram_order,
                        "smoothing": bleu_cfg.smoothing},
        "lines": rows,
        "aggregate": {"n": len(rows),
                      "bleu": sum(bleus) / len(bleus) if bleus else None,
                      "novelty": sum(novs) / len(novs) if novs else None,
                      "skipped_empty": len(rows) - len(novs)},
    }
    atomic_write(args.output, _dump_json(report))
    agg = report["aggregate"]
    if agg["bleu"] is not None:
        print(f"BLEU: {agg['bleu']:.4f}")
    if agg["novelty"] is not None:
        print(f"Novelty: {agg['novelty']:.4f}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def _add_decode_flags(p, default_preset):
    p.add_argument("--config", help="YAML/JSON run config (flags override it)")
    p.add_argument("--forward-lm", dest="forward_lm")
    p.add_argument("--backward-lm", dest="backward_lm")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--manifest", help="default: OUTPUT.manifest.json")
    p.add_argument("--diagnostics", help="write weight-learning iterates as JSON lines")
    p.add_argument("--seed", type=int)
    p.add_argument("--novelty-threshold", dest="novelty_threshold", type=float)
    p.add_argument("--task-preset", dest="task_preset", choices=sorted(PRESETS),
                   help=f"parameter preset (default: {default_preset})")
    p.add_argument("--full", action="store_true", help="include all ranked candidates in the manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="refdec", description="Reflective decoding with n-gram language models.")
    parser.add_argument("--version", action="version", version=f"refdec {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train-lm", help="train forward and backward n-gram models")
    p.add_argument("--corpus", required=True, help="UTF-8 text, one document per line")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--k", type=float, default=0.1, help="add-k smoothing constant")
    p.add_argument("--heldout-every", dest="heldout_every", type=int, default=10,
                   help="hold out every Nth document for perplexity (0 disables)")
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--no-split-punct", action="store_true")
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("paraphrase", help="paraphrase one sentence per input line")
    _add_decode_flags(p, "paraphrase")
    p.set_defaults(func=cmd_paraphrase)

    p = sub.add_parser("infill", help="fill the gap between tab-separated observations")
    _add_decode_flags(p, "anlg")
    p.set_defaults(func=cmd_infill)

    p = sub.add_parser("eval", help="BLEU / Novelty report for line-aligned files")
    p.add_argument("--candidates", required=True)
    p.add_argument("--sources", required=True)
    p.add_argument("--references")
    p.add_argument("--output", required=True)
    p.add_argument("--bleu-order", dest="bleu_order", type=int, default=4)
    p.add_argument("--bleu-smoothing", dest="bleu_smoothing", default="add-one",
                   choices=["add-one", "none"])
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--no-split-punct", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CLIError as exc:
        print(f"refdec: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
