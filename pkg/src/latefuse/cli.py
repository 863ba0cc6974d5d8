"""``latefuse`` command line: text cleaning, lexicon scoring, image prep, synthesis, fusion.

Every subcommand accepts ``--config FILE``, a JSON object whose keys mirror the
long flag names (``out-report`` or ``out_report``); flags given on the command
line win.  Diagnostics go to stderr; exit status is 0 only if nothing failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fusion, imageprep, textprep
from .automl import SearchBudget
from .core import ContractError, accuracy, argmax_rows
from .models import predict_proba
from .models.serialize import deserialize, serialize

log = logging.getLogger("latefuse")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


class UsageError(Exception):
    pass


def _error(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# --- subcommands -------------------------------------------------------------

def _text_records(path):
    """Yield ``(lineno, id, text)``; malformed lines yield ``(lineno, None, message)``."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, None, f"invalid JSON ({exc.msg})"
                continue
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
                yield lineno, None, 'missing string "id"'
            elif not isinstance(obj.get("text"), str):
                yield lineno, None, 'missing string "text"'
            else:
                yield lineno, obj["id"], obj["text"]


def _map_text_file(args, transform) -> int:
    failures = 0
    with open(args.out, "w", encoding="utf-8") as out:
        for lineno, rid, payload in _text_records(args.in_):
            if rid is None:
                _error(f"{args.in_}: line {lineno}: {payload}")
                failures += 1
                continue
            out.write(json.dumps(transform(rid, payload)) + "\n")
    return EXIT_FAIL if failures else EXIT_OK


def cmd_clean_text(args) -> int:
    stop = textprep.load_stopwords(args.stopwords)
    return _map_text_file(args, lambda rid, text: {
        "id": rid, "text": textprep.clean_pipeline(text, stop)})


def cmd_lexicon_classify(args) -> int:
    lex = textprep.load_lexicon(args.lexicon)

    def classify(rid, text):
        _, label = textprep.lexicon_polarity(text, lex)
        probs = [0.0, 0.0, 0.0]
        probs[int(label)] = 1.0
        return {"id": rid, "probs": probs}

    return _map_text_file(args, classify)


def cmd_image_prep(args) -> int:
    src, dst = Path(args.in_), Path(args.out)
    paths = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise UsageError(f"no .ppm/.pgm images in {src}")
    size = int(args.size)
    images = [imageprep.resize_bilinear(imageprep.read_pnm(p), size, size) for p in paths]
    channels = {img.channels for img in images}
    if len(channels) != 1:
        raise ContractError(f"images mix channel counts {sorted(channels)}")
    if args.lbp and channels != {3}:
        raise ContractError("--lbp needs RGB (.ppm) images")
    if args.stats_in:
        stats = imageprep.ChannelStats.from_json(Path(args.stats_in).read_text())
    else:
        stats = imageprep.channel_stats(images)
    if args.stats:
        Path(args.stats).write_text(stats.to_json(size=size) + "\n")
    dst.mkdir(parents=True, exist_ok=True)
    for path, img in zip(paths, images):
        out = imageprep.normalize(img, stats)
        if args.lbp:
            # codes come from the resized pixels, before normalization
            codes = imageprep.lbp(imageprep.to_grayscale(img)).data
            out = imageprep.Image(np.concatenate([out.data, codes], axis=2))
        np.save(dst / f"{path.stem}.npy", out.data)
    return EXIT_OK


def cmd_synth(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(doc, dict):
        raise UsageError("synth config must be a JSON object")
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        config = fusion.SynthConfig.from_dict(doc)
    except (ContractError, TypeError) as exc:
        raise UsageError(f"invalid synth config: {exc}") from None
    fusion.generate_synthetic(config).write(args.out_dir)
    return EXIT_OK


def _load_modalities(args):
    img = fusion.ModalityPredictions.read_jsonl(args.img, "image")
    text = fusion.ModalityPredictions.read_jsonl(args.text, "text")
    return img, text


def cmd_fuse(args) -> int:
    img, text = _load_modalities(args)
    gold = fusion.read_gold(args.gold)
    feats, missing = fusion.join_modalities(img, text, gold)
    if missing:
        print(f"warning: {missing} ids present in only one modality file", file=sys.stderr)
    split = fusion.build_split(feats, fusion.read_splits(args.splits))
    budget = SearchBudget(int(args.budget) if args.budget is not None else None,
                          float(args.max_wall_clock) if args.max_wall_clock else None)
    result = fusion.fuse_train_evaluate(split, budget, int(args.seed), one_hot=args.one_hot)
    report = result.report_json()
    if args.out_report:
        Path(args.out_report).write_text(report)
    if args.out_model:
        encoding = result.report["input_encoding"]
        Path(args.out_model).write_bytes(serialize(result.model, input_encoding=encoding))
    if args.out_leaderboard:
        Path(args.out_leaderboard).write_text(result.leaderboard.to_json())
    if args.print_report:
        sys.stdout.write(report)
    return EXIT_OK


def cmd_predict(args) -> int:
    raw = Path(args.model).read_bytes()
    model = deserialize(raw)
    encoding = json.loads(raw).get("input_encoding", "probabilities")
    img, text = _load_modalities(args)
    feats, missing = fusion.join_modalities(img, text)
    if missing:
        print(f"warning: {missing} ids present in only one modality file", file=sys.stderr)
    X = np.array([f.x for f in feats])
    if encoding == "one_hot":
        X = fusion.one_hot_inputs(X)
    P = predict_proba(model, X)
    labels = argmax_rows(P)
    with open(args.out, "w", encoding="utf-8") as out:
        for f, label, p in zip(feats, labels, P):
            out.write(json.dumps({"id": f.id, "label": int(label), "probs": p.tolist()}) + "\n")
    if args.gold:
        gold = fusion.read_gold(args.gold)
        scored = [(int(lab), int(gold[f.id])) for f, lab in zip(feats, labels) if f.id in gold]
        if scored:
            pred, ref = zip(*scored)
            print(f"accuracy {accuracy(pred, ref)!r} on {len(scored)} labeled ids",
                  file=sys.stderr)
    return EXIT_OK


# --- parsing -----------------------------------------------------------------

# (flag, dest, kind) where kind is "path" (must exist), "out", "value", "flag"
COMMANDS = {
    "clean-text": (cmd_clean_text, "clean tweet text (JSONL id/text)", [
        ("--in", "in_", "path"), ("--out", "out", "out"), ("--stopwords", "stopwords", "path")]),
    "lexicon-classify": (cmd_lexicon_classify, "lexicon polarity as one-hot class vectors", [
        ("--in", "in_", "path"), ("--out", "out", "out"), ("--lexicon", "lexicon", "path")]),
    "image-prep": (cmd_image_prep, "resize, normalize and optionally add an LBP plane", [
        ("--in", "in_", "path"), ("--out", "out", "out"), ("--stats", "stats", "out"),
        ("--stats-in", "stats_in", "path"), ("--size", "size", "value"),
        ("--lbp", "lbp", "flag")]),
    "synth": (cmd_synth, "write a synthetic two-modality dataset", [
        ("--config", "config", "path"), ("--out-dir", "out_dir", "out"),
        ("--seed", "seed", "value")]),
    "fuse": (cmd_fuse, "search a fusion model and evaluate it on the test split", [
        ("--img", "img", "path"), ("--text", "text", "path"), ("--gold", "gold", "path"),
        ("--splits", "splits", "path"), ("--budget", "budget", "value"),
        ("--max-wall-clock", "max_wall_clock", "value"), ("--seed", "seed", "value"),
        ("--out-report", "out_report", "out"), ("--out-model", "out_model", "out"),
        ("--out-leaderboard", "out_leaderboard", "out"), ("--one-hot", "one_hot", "flag"),
        ("--print-report", "print_report", "flag")]),
    "predict": (cmd_predict, "apply a saved fusion model", [
        ("--model", "model", "path"), ("--img", "img", "path"), ("--text", "text", "path"),
        ("--out", "out", "out"), ("--gold", "gold", "path")]),
}

REQUIRED = {
    "clean-text": ("in_", "out"),
    "lexicon-classify": ("in_", "out"),
    "image-prep": ("in_", "out"),
    "synth": ("out_dir",),
    "fuse": ("img", "text", "gold", "splits"),
    "predict": ("model", "img", "text", "out"),
}

DEFAULTS = {"seed": 0, "budget": 60, "size": imageprep.DEFAULT_SIZE[0], "lbp": False,
            "one_hot": False, "print_report": False}

INTEGER_VALUES = {"seed", "budget", "size"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latefuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, flags) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        if not any(dest == "config" for _, dest, _ in flags):
            p.add_argument("--config", help="JSON file of flag values")
        for flag, dest, kind in flags:
            if kind == "flag":
                p.add_argument(flag, dest=dest, action="store_true", default=None)
            elif dest in INTEGER_VALUES:
                p.add_argument(flag, dest=dest, type=int)
            elif dest == "max_wall_clock":
                p.add_argument(flag, dest=dest, type=float)
            else:
                p.add_argument(flag, dest=dest)
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from ``--config`` and defaults, then check required and input paths."""
    _, _, flags = COMMANDS[args.command]
    kinds = {dest: kind for _, dest, kind in flags}
    names = {flag.lstrip("-"): dest for flag, dest, _ in flags}
    if args.command != "synth" and getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        for key, value in doc.items():
            dest = names.get(key.replace("_", "-"))
            if dest is None:
                raise UsageError(f"unknown key {key!r} in config file {path}")
            if getattr(args, dest) is None:
                setattr(args, dest, value)
    for dest, value in DEFAULTS.items():
        if dest in kinds and getattr(args, dest) is None:
            setattr(args, dest, value)
    for dest in REQUIRED[args.command]:
        if getattr(args, dest) is None:
            flag = next(f for f, d, _ in flags if d == dest)
            raise UsageError(f"{args.command} needs {flag}")
    for dest, kind in kinds.items():
        value = getattr(args, dest)
        if kind == "path" and value is not None and not Path(value).exists():
            flag = next(f for f, d, _ in flags if d == dest)
            raise UsageError(f"{flag}: no such file or directory: {value}")
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        resolve(args)
        return COMMANDS[args.command][0](args)
    except UsageError as exc:
        _error(str(exc))
        return EXIT_USAGE
    except (ContractError, OSError, json.JSONDecodeError, KeyError) as exc:
        _error(str(exc))
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
