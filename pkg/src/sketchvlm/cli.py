"""Command-line entry point.

Subcommands cover the full pipeline: corpus handling (ingest, synth),
representation (tokenize, render, export-svg), learning (train), and
evaluation/generation (eval, complete, constrain). Everything is pipeable:
JSONL in, JSONL or JSON out, no prompts. Exit codes: 0 success, 1 usage
error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from .data import (
    ParseError,
    Split,
    export,
    ingest,
    make_example,
    synth_corpus,
)
from .geometry import (
    GeometryError,
    Sketch,
    sketch_from_dict,
    sketch_to_dict,
)
from .inference import (
    CheckpointMismatch,
    autoconstrain_many,
    complete_many,
    nucleus_sample,
)
from .metrics import EmptyCorpus, aggregate, constraint_match, entity_match
from .model import Mode, ModelConfig, SketchVLM, load_model
from .nn import TrainConfig
from .raster import AugmentSpec, RenderMode, rasterize, to_svg, write_png
from .tokens import decode_primitives, encode_constraints, encode_primitives, tokens_to_line
from .train import EmptyTrainSet, TrainDiverged, train

OUT_ENV = "SKETCHVLM_OUT"
EVAL_BATCH = 32

RENDER_MODES = {
    "precise": RenderMode.PRECISE,
    "hand": RenderMode.HAND_DRAWN,
    "noisy": RenderMode.NOISY_HAND_DRAWN,
}

TASK_MODES = {
    "complete": Mode.AUTOCOMPLETE,
    "constrain": Mode.AUTOCONSTRAIN,
    "image-cond": Mode.IMAGE_CONDITIONED,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit 1, not 2."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _read_sketches(path: str) -> list[Sketch]:
    """Parse sketches from a JSONL file, or stdin when path is '-'."""
    fh = sys.stdin if path == "-" else open(path, "r", encoding="utf-8")
    try:
        out = []
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                out.append(sketch_from_dict(json.loads(raw)))
            except (json.JSONDecodeError, GeometryError) as exc:
                raise ParseError(lineno, str(exc)) from exc
        return out
    finally:
        if fh is not sys.stdin:
            fh.close()


def _emit(payload: dict, as_json: bool, file=None) -> None:
    file = file if file is not None else sys.stdout
    if as_json:
        print(json.dumps(payload), file=file)
    else:
        for key, value in payload.items():
            print(f"{key}: {value}", file=file)


def _out_dir(args, flag: str = "out") -> Path:
    given = getattr(args, flag, None)
    if given is None:
        given = os.environ.get(OUT_ENV)
    if given is None:
        raise _UsageError(
            f"an output directory is required (--{flag.replace('_', '-')} or ${OUT_ENV})"
        )
    path = Path(given)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _augment_spec(args, index: int = 0) -> AugmentSpec:
    return AugmentSpec(RENDER_MODES[args.mode], args.seed + index)


# -- subcommand handlers ------------------------------------------------------


def _cmd_synth(args) -> int:
    corpus = synth_corpus(args.n, args.seed)
    if args.out is None:
        for s in corpus.sketches:
            print(json.dumps(sketch_to_dict(s)))
        _emit({"n": len(corpus.sketches), "seed": args.seed}, args.json, sys.stderr)
    else:
        export(corpus, args.out)
        _emit({"n": len(corpus.sketches), "seed": args.seed, "out": args.out}, args.json)
    return 0


def _cmd_ingest(args) -> int:
    result = ingest(args.infile, strict=args.strict)
    summary = {sp.value: len(result[sp].sketches) for sp in Split}
    summary["skipped"] = len(result.skipped)
    if args.out is not None or os.environ.get(OUT_ENV):
        out = _out_dir(args)
        for sp in Split:
            export(result[sp], out / f"{sp.value}.jsonl")
        summary["out"] = str(out)
    _emit(summary, args.json)
    if not args.json:
        for report in result.skipped:
            print(f"skipped line {report.line}: {report.reason}", file=sys.stderr)
    return 0


def _cmd_tokenize(args) -> int:
    sketches = _read_sketches(args.infile)
    encode = encode_primitives if args.stream == "primitive" else encode_constraints
    lines = [tokens_to_line(encode(s).tokens) for s in sketches]
    if args.out is None:
        for line in lines:
            print(line)
    else:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        _emit({"n": len(lines), "out": args.out}, args.json)
    return 0


def _render_jobs(paths_and_payloads, jobs: int, write) -> None:
    if jobs <= 1:
        for task in paths_and_payloads:
            write(task)
        return
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        list(pool.map(write, paths_and_payloads))


def _cmd_render(args) -> int:
    sketches = _read_sketches(args.infile)
    out = _out_dir(args)
    tasks = [
        (out / f"{i:05d}.png", s, _augment_spec(args, i))
        for i, s in enumerate(sketches)
    ]

    def write(task):
        path, s, spec = task
        write_png(rasterize(s, spec), path)

    _render_jobs(tasks, args.jobs, write)
    _emit({"rendered": len(tasks), "mode": args.mode, "out": str(out)}, args.json)
    return 0


def _cmd_export_svg(args) -> int:
    sketches = _read_sketches(args.infile)
    out = _out_dir(args)
    tasks = [(out / f"{i:05d}.svg", s) for i, s in enumerate(sketches)]

    def write(task):
        path, s = task
        path.write_text(to_svg(s), encoding="utf-8")

    _render_jobs(tasks, args.jobs, write)
    _emit({"exported": len(tasks), "out": str(out)}, args.json)
    return 0


def _load_config_file(path) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return raw.get("model", {}), raw.get("train", {})


def _cmd_train(args) -> int:
    model_kw, train_kw = _load_config_file(args.config)
    model_kw["mode"] = TASK_MODES[args.task]
    for flag in ("d_model", "n_heads", "enc_layers", "dec_layers"):
        value = getattr(args, flag)
        if value is not None:
            model_kw[flag] = value
    if args.no_image:
        model_kw["use_image"] = False
    for flag in ("epochs", "batch", "lr0", "seed"):
        value = getattr(args, flag)
        if value is not None:
            train_kw[flag] = value
    ratio = train_kw.pop("ratio_override", None)
    model = SketchVLM(ModelConfig(**model_kw))
    cfg = TrainConfig(**train_kw)

    result = ingest(args.corpus)
    sketches = result[Split.TRAIN].sketches
    if args.no_split:
        sketches = sketches + result[Split.VAL].sketches + result[Split.TEST].sketches
    out = _out_dir(args)
    history = train(
        model,
        sketches,
        cfg,
        out_dir=out,
        log_path=out / "metrics.jsonl",
        augment=AugmentSpec(RENDER_MODES[args.mode], cfg.seed),
        ratio_override=ratio,
    )
    last = history[-1]
    _emit(
        {
            "steps": len(history),
            "final_lm": last["lm"],
            "final_total": last["total"],
            "out": str(out),
        },
        args.json,
    )
    return 0


def _paired_reports(preds, truths, task: str):
    if len(preds) != len(truths):
        raise ParseError(0, f"{len(preds)} predictions vs {len(truths)} truths")
    if task == "constrain":
        return [constraint_match(p.constraints, t.constraints) for p, t in zip(preds, truths)]
    return [entity_match(p, t) for p, t in zip(preds, truths)]


def _checkpoint_reports(args):
    model, _ = load_model(args.ckpt)
    sketches = _read_sketches(args.corpus)
    rng = random.Random(args.seed)
    spec = AugmentSpec(RENDER_MODES[args.mode], args.seed)
    reports = []
    if model.cfg.mode is Mode.AUTOCONSTRAIN:
        for lo in range(0, len(sketches), EVAL_BATCH):
            chunk = sketches[lo : lo + EVAL_BATCH]
            for res in autoconstrain_many(model, chunk, with_report=True, augment=spec):
                reports.append(res.report)
        return reports
    usable = [s for s in sketches if len(s.entities) >= 2]
    examples = [make_example(s, rng, args.ratio, spec) for s in usable]
    for lo in range(0, len(examples), EVAL_BATCH):
        chunk = examples[lo : lo + EVAL_BATCH]
        partials = [ex.prefix_sketch for ex in chunk]
        truths = usable[lo : lo + EVAL_BATCH]
        for res in complete_many(model, partials, truths, augment=spec):
            reports.append(res.report)
    return reports


def _cmd_eval(args) -> int:
    have_pair = args.pred is not None and args.truth is not None
    have_ckpt = args.ckpt is not None and args.corpus is not None
    if have_pair == have_ckpt:
        raise _UsageError(
            "eval needs exactly one input form: --pred/--truth or --ckpt/--corpus"
        )
    if have_pair:
        reports = _paired_reports(
            _read_sketches(args.pred), _read_sketches(args.truth), args.task
        )
    else:
        reports = _checkpoint_reports(args)
    _emit(aggregate(reports), args.json)
    return 0


def _cmd_complete(args) -> int:
    model, _ = load_model(args.ckpt)
    partials = _read_sketches(args.infile)
    spec = AugmentSpec(RENDER_MODES[args.mode], args.seed)
    out_fh = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    written = 0
    try:
        if args.nucleus is not None:
            if model.cfg.mode is Mode.AUTOCONSTRAIN:
                raise CheckpointMismatch(
                    "completion needs a completion checkpoint, got mode constrain"
                )
            for s in partials:
                text = (
                    encode_primitives(s).tokens
                    if model.cfg.mode is not Mode.IMAGE_CONDITIONED
                    else None
                )
                image = rasterize(s, spec) if model.cfg.use_image else None
                result = nucleus_sample(
                    model, text, image, p=args.nucleus, seed=args.seed, k=args.samples
                )
                best, _ = decode_primitives(result.best)
                line = sketch_to_dict(Sketch(s.entities + best.entities, s.constraints))
                if args.samples > 1:
                    line["alternates"] = [
                        sketch_to_dict(
                            Sketch(s.entities + decode_primitives(cand)[0].entities)
                        )
                        for cand in result.samples
                    ]
                out_fh.write(json.dumps(line) + "\n")
                written += 1
        else:
            for lo in range(0, len(partials), EVAL_BATCH):
                chunk = partials[lo : lo + EVAL_BATCH]
                for res in complete_many(model, chunk, augment=spec):
                    out_fh.write(json.dumps(sketch_to_dict(res.sketch)) + "\n")
                    written += 1
    finally:
        if out_fh is not sys.stdout:
            out_fh.close()
    if args.out is not None:
        _emit({"completed": written, "out": args.out}, args.json)
    return 0


def _cmd_constrain(args) -> int:
    model, _ = load_model(args.ckpt)
    sketches = _read_sketches(args.infile)
    spec = AugmentSpec(RENDER_MODES[args.mode], args.seed)
    out_fh = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    written = 0
    try:
        for lo in range(0, len(sketches), EVAL_BATCH):
            chunk = sketches[lo : lo + EVAL_BATCH]
            for s, res in zip(chunk, autoconstrain_many(model, chunk, augment=spec)):
                constrained = Sketch(s.entities, tuple(res.constraints))
                out_fh.write(json.dumps(sketch_to_dict(constrained)) + "\n")
                written += 1
    finally:
        if out_fh is not sys.stdout:
            out_fh.close()
    if args.out is not None:
        _emit({"constrained": written, "out": args.out}, args.json)
    return 0


# -- parser wiring ------------------------------------------------------------


def _add_common(p, render_mode: bool = True, seed_default: int | None = 0):
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--seed", type=int, default=seed_default)
    if render_mode:
        p.add_argument("--mode", choices=sorted(RENDER_MODES), default="precise")


def build_parser() -> _Parser:
    parser = _Parser(prog="sketchvlm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out")
    _add_common(p, render_mode=False)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("ingest", help="dedup and split a sketch JSONL file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true")
    _add_common(p, render_mode=False)
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("tokenize", help="emit token lines for sketches")
    p.add_argument("--in", dest="infile", required=True, help="JSONL path or -")
    p.add_argument("--stream", choices=["primitive", "constraint"], default="primitive")
    p.add_argument("--out")
    _add_common(p, render_mode=False)
    p.set_defaults(handler=_cmd_tokenize)

    p = sub.add_parser("render", help="rasterize sketches to PNG files")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(handler=_cmd_render)

    p = sub.add_parser("export-svg", help="write smooth vector renderings")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p, render_mode=False)
    p.set_defaults(handler=_cmd_export_svg)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--task", choices=sorted(TASK_MODES), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.add_argument("--config", help="JSON file with model/train sections")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--enc-layers", dest="enc_layers", type=int)
    p.add_argument("--dec-layers", dest="dec_layers", type=int)
    p.add_argument("--no-image", action="store_true")
    p.add_argument("--no-split", action="store_true", help="train on every sketch")
    _add_common(p, seed_default=None)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="score predictions or a checkpoint")
    p.add_argument("--pred")
    p.add_argument("--truth")
    p.add_argument("--ckpt")
    p.add_argument("--corpus")
    p.add_argument("--task", choices=["complete", "constrain"], default="complete")
    p.add_argument("--ratio", type=float, choices=[0.2, 0.4, 0.6, 0.8])
    _add_common(p)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("complete", help="autocomplete partial sketches")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True, help="JSONL path or -")
    p.add_argument("--out")
    p.add_argument("--nucleus", type=float, help="top-p sampling instead of greedy")
    p.add_argument("--samples", type=int, default=1)
    _add_common(p)
    p.set_defaults(handler=_cmd_complete)

    p = sub.add_parser("constrain", help="generate constraints for sketches")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True, help="JSONL path or -")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(handler=_cmd_constrain)

    return parser


DATA_ERRORS = (
    GeometryError,
    ParseError,
    CheckpointMismatch,
    TrainDiverged,
    EmptyTrainSet,
    EmptyCorpus,
    OSError,
    json.JSONDecodeError,
    ValueError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return args.handler(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
