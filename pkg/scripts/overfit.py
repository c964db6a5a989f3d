"""Overfit experiment: train on a small generated corpus and score both splits.

    python scripts/overfit.py --out runs/overfit [--steps 2000] [--widths 8,16,32,64]

Writes the corpus, checkpoint.unw, loss.tsv, train/test reports and a
summary.json with wall-clock timings.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from rollnet.corpus import CorpusConfig, build_corpus
from rollnet.metrics import evaluate
from rollnet.model.train import TrainConfig, load_segments, train_segments
from rollnet.rolls import InstrumentVocab

INSTRUMENTS = ("piano", "violin", "flute")


@dataclass
class OverfitConfig:
    seed: int = 7
    clips: int = 8
    seconds: float = 20.0
    steps: int = 2000
    lr: float = 0.005
    batch_size: int = 8
    widths: tuple[int, ...] = (8, 16, 32, 64)
    train_seed: int = 0


def run(out_dir, cfg: OverfitConfig = OverfitConfig(), log_every: int = 100) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    vocab = InstrumentVocab.default().subset(list(INSTRUMENTS))
    corpus_cfg = CorpusConfig(n_clips=cfg.clips, clip_seconds=cfg.seconds, vocab=vocab, instruments_per_clip=(1, 3))
    manifest = build_corpus(cfg.seed, corpus_cfg, out / "corpus")
    segments = load_segments(manifest.split("train"), manifest, vocab)
    t_data = time.perf_counter() - t0

    def on_step(step, loss):
        if log_every and step % log_every == 0:
            print(f"step {step:5d}  loss {loss.total:.4f}  {time.perf_counter() - t0:7.1f}s", flush=True)

    train_cfg = TrainConfig(
        epochs=10**9, batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.train_seed, max_steps=cfg.steps, widths=cfg.widths
    )
    result = train_segments(segments, vocab, train_cfg, out_dir=out, on_step=on_step)
    t_train = time.perf_counter() - t0 - t_data

    summary = {"config": asdict(cfg), "segments": len(segments), "steps": result.checkpoint.step}
    for split in ("train", "test"):
        report = evaluate(result.checkpoint, manifest, split)
        (out / f"report_{split}.txt").write_text(report.table())
        summary[split] = {
            "clips": report.n_clips,
            "pianoroll_acc": report.roll_accuracy,
            "pitch_acc": report.pitch_accuracy,
            "instrument_f1": report.f1_macro,
            "instrument_f1_micro": report.f1_micro,
            "auc_mean": report.auc_mean,
        }
    summary["seconds"] = {"data": t_data, "train": t_train, "total": time.perf_counter() - t0}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=OverfitConfig.steps)
    p.add_argument("--widths", default=",".join(map(str, OverfitConfig.widths)))
    p.add_argument("--lr", type=float, default=OverfitConfig.lr)
    p.add_argument("--train-seed", type=int, default=OverfitConfig.train_seed)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    cfg = OverfitConfig(
        steps=args.steps, lr=args.lr, train_seed=args.train_seed,
        widths=tuple(int(w) for w in args.widths.split(",")),
    )
    print(json.dumps(run(args.out, cfg), indent=2))


if __name__ == "__main__":
    main()
