#!/usr/bin/env python3
"""Generate -> train -> attack -> report, end to end, at a chosen scale.

    python scripts/run_pipeline.py --per-label 200 --epochs 20 --attack-per-label 100 --out runs/desk

The defaults reproduce the desk-scale setup used by the acceptance suite.
Everything lands in ``--out``: datasets, checkpoint, per-epoch log, the
attack report (text and CSV) and a few before/after figures per label.
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from candlexai.attack import AttackConfig, batch_attack
from candlexai.cli import render_campaign
from candlexai.gasf import encode_prices_batch
from candlexai.market_data import class_targets, generate_dataset, save_dataset, split
from candlexai.nn import TrainConfig, build_classifier, evaluate, save_checkpoint, train


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--per-label", type=int, default=200)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--attack-per-label", type=int, default=100)
    p.add_argument("--attack-pool", type=int, default=130, help="fresh windows per pattern label to draw attack targets from")
    p.add_argument("--attack-seed", type=int, default=11)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--render", type=int, default=2)
    p.add_argument("--out", default="runs/desk")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    data = generate_dataset(class_targets(args.per_label), args.seed)
    tr, va = split(data, 0.8, args.seed)
    save_dataset(tr, out / "train.gafl")
    save_dataset(va, out / "valid.gafl")
    print(f"data: {len(tr)} train / {len(va)} valid ({time.perf_counter() - t0:.1f}s)")

    t0 = time.perf_counter()
    log_lines = []

    def on_epoch(m):
        log_lines.append(m.log_line())
        print(m.log_line())

    result = train(
        build_classifier(args.seed),
        encode_prices_batch(tr.prices),
        tr.labels,
        encode_prices_batch(va.prices),
        va.labels,
        TrainConfig(epochs=args.epochs),
        seed=args.seed,
        on_epoch=on_epoch,
    )
    (out / "metrics.log").write_text("\n".join(log_lines) + "\n")
    save_checkpoint(result.model, out / "model.ckpt")
    ev = evaluate(result.model, encode_prices_batch(va.prices), va.labels)
    (out / "eval.json").write_text(json.dumps(ev.as_dict(), indent=2, sort_keys=True) + "\n")
    print(f"train: best epoch {result.best_epoch}, valid accuracy {ev.accuracy:.3f} ({time.perf_counter() - t0:.1f}s)")

    t0 = time.perf_counter()
    pool = generate_dataset({k: args.attack_pool for k in range(1, 9)}, args.seed + 2017)
    config = AttackConfig(seed=args.attack_seed)
    campaign = batch_attack(result.model, pool, config, workers=args.workers, per_label=args.attack_per_label)
    (out / "report.txt").write_text(campaign.report.to_table())
    (out / "report.csv").write_text(campaign.report.to_csv())
    if args.render:
        render_campaign(campaign, out / "figures", args.render, {"seed": args.seed, "attack": config.as_dict()})
    print(campaign.report.to_table(), end="")
    print(f"attack: {len(campaign.outcomes)} samples ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
