"""Command-line entry point: corpus, train, eval, predict, align, render.

Every option can also come from a flat ``key = value`` file given with
``--config``; flags override file values. The merged settings are written to
``run_config.txt`` in each output directory.

Exit codes: 0 success, 2 usage error, 3 bad or missing data, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__

log = logging.getLogger("rollnet")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
RUN_CONFIG = "run_config.txt"


class UsageError(Exception):
    pass


def _int_pair(text: str) -> tuple[int, int]:
    parts = [int(p) for p in str(text).split(",")]
    if len(parts) != 2 or not 1 <= parts[0] <= parts[1]:
        raise ValueError(f"expected 'lo,hi' with 1 <= lo <= hi, got {text!r}")
    return parts[0], parts[1]


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in str(text).split(","))


def _names(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in str(text).split(",") if p.strip())


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Option:
    key: str
    type: Callable
    default: object
    help: str
    required: bool = False


COMMON = [Option("threads", int, 1, "worker/BLAS thread count (ROLLNET_THREADS overrides)")]

COMMANDS: dict[str, tuple[str, list[Option]]] = {
    "corpus": (
        "generate MIDI, render audio and write PRL labels",
        [
            Option("out", str, None, "output directory", True),
            Option("seed", int, 0, "generator seed"),
            Option("clips", int, 8, "number of clips"),
            Option("seconds", float, 20.0, "clip length in seconds"),
            Option("split", float, 0.75, "fraction of clips in the train split"),
            Option("vocab", str, "", "instrument vocabulary JSON (default: built-in 8 instruments)"),
            Option("instruments", _names, (), "comma-separated subset of vocabulary names"),
            Option("per_clip", _int_pair, (1, 4), "instruments per clip as lo,hi"),
            Option("polyphony", _int_pair, (1, 2), "simultaneous notes per instrument as lo,hi"),
        ],
    ),
    "train": (
        "train the U-net on a corpus train split",
        [
            Option("manifest", str, None, "corpus manifest.tsv", True),
            Option("out", str, None, "output directory", True),
            Option("vocab", str, "", "vocabulary JSON (default: vocab.json next to the manifest)"),
            Option("epochs", int, 1, "passes over the training segments"),
            Option("batch_size", int, 8, "segments per SGD step"),
            Option("lr", float, 0.005, "SGD learning rate"),
            Option("seed", int, 0, "initialization and shuffling seed"),
            Option("max_steps", int, 0, "stop after this many steps (0 = no limit)"),
            Option("widths", _int_list, (16, 32, 64, 128), "encoder channel widths"),
        ],
    ),
    "eval": (
        "evaluate a checkpoint on a corpus split",
        [
            Option("manifest", str, None, "corpus manifest.tsv", True),
            Option("checkpoint", str, "", "checkpoint file (not needed with --oracle)"),
            Option("split", str, "test", "train or test"),
            Option("oracle", _flag, False, "score the ground truth against itself"),
            Option("threshold", float, 0.5, "binarization threshold"),
            Option("out", str, "", "directory for report.txt and records.tsv"),
        ],
    ),
    "predict": (
        "transcribe a WAV file to pianoroll, pitch roll and instrument roll",
        [
            Option("checkpoint", str, None, "checkpoint file", True),
            Option("wav", str, None, "16 kHz mono WAV input", True),
            Option("out", str, None, "output directory for the three PRL files", True),
            Option("png", str, "", "also render the thresholded pianoroll to this PNG"),
            Option("threshold", float, 0.5, "binarization threshold for the PNG"),
        ],
    ),
    "align": (
        "retime a MIDI file to a recording by DTW",
        [
            Option("wav", str, None, "recording (16 kHz mono WAV)", True),
            Option("midi", str, None, "MIDI file to retime", True),
            Option("out", str, None, "output directory for aligned.mid and path.tsv", True),
            Option("vocab", str, "", "vocabulary JSON used to pick timbres"),
        ],
    ),
    "render": (
        "render a PRL pianoroll to PNG",
        [
            Option("prl", str, None, "pianoroll PRL file", True),
            Option("out", str, None, "output PNG path", True),
            Option("threshold", float, 0.5, "binarization threshold for probability rolls"),
            Option("seconds", float, 0.0, "render only the first N seconds (0 = all)"),
            Option("vocab", str, "", "vocabulary JSON for legend names"),
        ],
    ),
}


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key = value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rollnet", description="Multitask pianoroll transcription.")
    parser.add_argument("--version", action="version", version=f"rollnet {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name, (summary, options) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", help="flat key = value file; flags override its values")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for opt in options + COMMON:
            flag = "--" + opt.key.replace("_", "-")
            shown = "required" if opt.required else f"default: {_show(opt.default)}"
            if opt.type is _flag:
                p.add_argument(flag, dest=opt.key, action="store_const", const=True, default=None,
                               help=f"{opt.help} ({shown})")
            else:
                p.add_argument(flag, dest=opt.key, type=str, default=None, help=f"{opt.help} ({shown})")
    return parser


def _show(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value) or "none"
    return str(value)


def resolve(command: str, args: argparse.Namespace, env=os.environ) -> dict:
    """Merge defaults, config file and flags into typed settings."""
    options = COMMANDS[command][1] + COMMON
    known = {o.key for o in options}
    file_values = read_config_file(args.config) if args.config else {}
    unknown = set(file_values) - known
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    settings = {}
    for opt in options:
        raw = getattr(args, opt.key)
        if raw is None:
            raw = file_values.get(opt.key)
        if raw is None:
            if opt.required:
                raise UsageError(f"--{opt.key.replace('_', '-')} is required")
            settings[opt.key] = opt.default
            continue
        try:
            settings[opt.key] = opt.type(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {opt.key}: {exc}") from None
    if env.get("ROLLNET_THREADS"):
        try:
            settings["threads"] = int(env["ROLLNET_THREADS"])
        except ValueError:
            raise UsageError("ROLLNET_THREADS must be an integer") from None
    if settings["threads"] < 1:
        raise UsageError("threads must be at least 1")
    return settings


def write_run_config(out_dir, command: str, settings: dict) -> None:
    """Serialize the settings; the output location itself is left out so reruns elsewhere match."""
    lines = [f"command = {command}", f"version = {__version__}"]
    lines += [f"{k} = {_show(v)}" for k, v in sorted(settings.items()) if k != "out"]
    Path(out_dir, RUN_CONFIG).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _vocab(path: str, fallback_dir=None):
    from .rolls import InstrumentVocab

    if path:
        return InstrumentVocab.load(path)
    if fallback_dir is not None and Path(fallback_dir, "vocab.json").exists():
        return InstrumentVocab.load(Path(fallback_dir, "vocab.json"))
    return InstrumentVocab.default()


def cmd_corpus(s: dict) -> None:
    from .corpus import CorpusConfig, build_corpus

    vocab = _vocab(s["vocab"])
    if s["instruments"]:
        vocab = vocab.subset(s["instruments"])
    cfg = CorpusConfig(
        n_clips=s["clips"],
        clip_seconds=s["seconds"],
        vocab=vocab,
        instruments_per_clip=s["per_clip"],
        polyphony=s["polyphony"],
        split_fraction=s["split"],
    )
    out = Path(s["out"])
    manifest = build_corpus(s["seed"], cfg, out, workers=s["threads"])
    write_run_config(out, "corpus", s)
    n_train = len(manifest.split("train"))
    print(f"{len(manifest.entries)} clips ({n_train} train, {len(manifest.entries) - n_train} test) in {out}")


def cmd_train(s: dict) -> None:
    from .corpus import CorpusManifest
    from .model.train import TrainConfig, train

    manifest = CorpusManifest.read(s["manifest"])
    vocab = _vocab(s["vocab"], manifest.root)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(
        epochs=s["epochs"],
        batch_size=s["batch_size"],
        lr=s["lr"],
        seed=s["seed"],
        max_steps=s["max_steps"] or None,
        widths=s["widths"],
    )
    if cfg.batch_size < 1 or cfg.epochs < 1 or not cfg.lr > 0:
        raise UsageError("batch_size and epochs must be positive and lr > 0")
    write_run_config(out, "train", s)

    def report(step, loss):
        if step % 10 == 0:
            log.info("step %d loss %.5f", step, loss.total)

    result = train(manifest, vocab, cfg, out_dir=out, on_step=report)
    if result.skipped:
        print(f"skipped {len(result.skipped)} clips: {', '.join(result.skipped)}", file=sys.stderr)
    last = result.log[-1][1].total if result.log else float("nan")
    print(f"{result.checkpoint.step} steps, final loss {last:.5f}; checkpoint in {out / 'checkpoint.unw'}")


def cmd_eval(s: dict) -> None:
    from .corpus import CorpusManifest
    from .metrics import evaluate
    from .model.checkpoint import load_checkpoint

    manifest = CorpusManifest.read(s["manifest"])
    if s["split"] not in ("train", "test"):
        raise UsageError("split must be train or test")
    if not 0 < s["threshold"] < 1:
        raise UsageError("threshold must lie in (0, 1)")
    if s["oracle"]:
        ckpt = None
    elif not s["checkpoint"]:
        raise UsageError("--checkpoint is required unless --oracle is given")
    else:
        ckpt = load_checkpoint(s["checkpoint"])
    report = evaluate(ckpt, manifest, s["split"], oracle=s["oracle"], threshold=s["threshold"])
    sys.stdout.write(report.table())
    if s["out"]:
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.table(), encoding="utf-8")
        (out / "records.tsv").write_text(report.records_text(), encoding="utf-8")
        write_run_config(out, "eval", s)


def cmd_predict(s: dict) -> None:
    from .model.checkpoint import load_checkpoint
    from .model.train import predict
    from .rolls import binarize, write_prl
    from .synth import read_wav

    ckpt = load_checkpoint(s["checkpoint"])
    pred = predict(read_wav(s["wav"]), ckpt)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_prl(pred.roll, out / "pianoroll.prl")
    write_prl(pred.pitch, out / "pitch.prl")
    write_prl(pred.instrument, out / "instrument.prl")
    if s["png"]:
        from .render import render_png

        if not 0 < s["threshold"] < 1:
            raise UsageError("threshold must lie in (0, 1)")
        render_png(binarize(pred.roll, s["threshold"]), s["png"], ckpt.vocab.names)
    write_run_config(out, "predict", s)
    print(f"{pred.roll.n_frames} frames x {len(ckpt.vocab.names)} instruments written to {out}")


def cmd_align(s: dict) -> None:
    from .align import align_audio
    from .midi import events_to_midi, read_midi
    from .synth import read_wav

    vocab = _vocab(s["vocab"])
    events = read_midi(s["midi"])
    if not events:
        raise ValueError(f"{s['midi']}: no notes to align")
    path, warped = align_audio(read_wav(s["wav"]), events, vocab)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "aligned.mid").write_bytes(events_to_midi(warped))
    (out / "path.tsv").write_text(path.dump(), encoding="utf-8")
    write_run_config(out, "align", s)
    print(f"path of {len(path.pairs)} steps, normalized cost {path.cost:.6f}")


def cmd_render(s: dict) -> None:
    from .render import render_png
    from .rolls import Pianoroll, binarize, read_prl

    roll = read_prl(s["prl"])
    if not isinstance(roll, Pianoroll):
        raise ValueError(f"{s['prl']} holds a {type(roll).__name__}, not a pianoroll")
    if roll.data.dtype != np.uint8:
        if not 0 < s["threshold"] < 1:
            raise UsageError("threshold must lie in (0, 1)")
        roll = binarize(roll, s["threshold"])
    if s["seconds"] > 0:
        n = max(1, int(round(s["seconds"] * roll.frame_rate)))
        roll = Pianoroll(roll.data[:, :n], roll.frame_rate, roll.pitch_offset, roll.vocab_id)
    names = _vocab(s["vocab"]).names if s["vocab"] else None
    legend = render_png(roll, s["out"], names)
    print(f"wrote {s['out']} and {legend}")


HANDLERS = {
    "corpus": cmd_corpus,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "align": cmd_align,
    "render": cmd_render,
}


def main(argv=None) -> int:
    from threadpoolctl import threadpool_limits

    from .model.train import NumericError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = resolve(args.command, args)
        with threadpool_limits(limits=settings["threads"]):
            HANDLERS[args.command](settings)
    except UsageError as exc:
        print(f"rollnet {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"rollnet {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, EOFError) as exc:
        print(f"rollnet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
