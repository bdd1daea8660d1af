"""``candlexai`` command line: generate / ingest / train / eval / attack / render.

Exit codes: 0 success, 1 internal error, 2 missing or invalid input,
3 numeric divergence during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import attack as atk
from . import market_data as md
from . import nn
from . import render
from .config import ConfigError, RunConfig, load_config
from .gasf import encode_prices_batch, encode_window
from .patterns import Pattern

log = logging.getLogger("candlexai")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3


class InputError(Exception):
    """Missing or invalid input; maps to exit code 2."""


def _write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load_dataset(path: Path) -> md.Dataset:
    if not path.is_file():
        raise InputError(f"dataset file {path} not found")
    try:
        return md.load_dataset(path)
    except md.DatasetFormatError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _load_model(path: Path) -> nn.Classifier:
    if not path.is_file():
        raise InputError(f"checkpoint {path} not found")
    try:
        return nn.load_checkpoint(path)
    except (ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _resolve(args, **overrides) -> RunConfig:
    run = {"seed": args.seed}
    run.update(overrides.pop("run", {}))
    return load_config(args.config, {"run": run, **overrides})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.per_label is not None and args.per_label < 1:
        raise InputError(f"--per-label must be >= 1, got {args.per_label}")
    cfg = _resolve(args, run={"per_label": args.per_label, "train_fraction": args.train_fraction})
    counts = md.class_targets(cfg.run.per_label, cfg.run.none_multiplier)
    ds = md.generate_dataset(counts, cfg.run.seed, cfg.generator, cfg.patterns)
    ds.meta["run_config"] = cfg.to_dict()
    train, test = md.split(ds, cfg.run.train_fraction, cfg.run.seed)
    out = _outdir(args.out)
    md.save_dataset(train, out / "train.gafl")
    md.save_dataset(test, out / "test.gafl")
    manifest = {
        "seed": cfg.run.seed,
        "counts": {str(k): v for k, v in counts.items()},
        "train_counts": {str(k): v for k, v in train.class_counts().items()},
        "test_counts": {str(k): v for k, v in test.class_counts().items()},
        "run_config": cfg.to_dict(),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _resolve(args, run={"train_fraction": args.train_fraction})
    src = Path(args.csv)
    if not src.is_file():
        raise InputError(f"CSV file {src} not found")
    schema = md.CsvSchema(args.timestamp_col or None, args.open_col, args.high_col, args.low_col, args.close_col)
    with src.open("rb") as fh:
        try:
            parsed = md.parse_csv(fh, schema)
        except md.SchemaError as exc:
            raise InputError(str(exc)) from exc
    for err in parsed.errors[:20]:
        log.warning("line %d skipped: %s", err.line, err.message)
    try:
        windows = md.slide_windows(parsed.bars, args.stride)
    except md.EmptyInputError as exc:
        raise InputError(str(exc)) from exc
    ds = md.label_windows(windows, cfg.patterns)
    ds.seed = cfg.run.seed
    ds.meta["run_config"] = cfg.to_dict()
    ds.meta["source"] = {"rows_skipped": parsed.skipped, "bars": len(parsed.bars), "stride": args.stride}
    out = _outdir(args.out)
    md.save_dataset(ds, out / "all.gafl")
    try:
        train, test = md.split(ds, cfg.run.train_fraction, cfg.run.seed)
    except md.StratificationError as exc:
        log.warning("no train/test split written: %s", exc)
    else:
        md.save_dataset(train, out / "train.gafl")
        md.save_dataset(test, out / "test.gafl")
    print(f"parsed {len(parsed.bars)} bars ({parsed.skipped} rows skipped), {len(ds)} windows, classes {ds.class_counts()}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args, optimizer={"epochs": args.epochs})
    data = _load_dataset(Path(args.data) / "train.gafl" if Path(args.data).is_dir() else Path(args.data))
    train, valid = md.split(data, 1.0 - cfg.run.valid_fraction, cfg.run.seed)
    out = _outdir(args.out)
    log_path = out / "metrics.log"
    lines: list[str] = []

    def on_epoch(m: nn.EpochMetrics) -> None:
        lines.append(m.log_line())
        log_path.write_text("\n".join(lines) + "\n")
        print(m.log_line())

    model = nn.build_classifier(cfg.run.seed)
    model.metadata["run_config"] = cfg.to_dict()
    try:
        result = nn.train(
            model,
            encode_prices_batch(train.prices),
            train.labels,
            encode_prices_batch(valid.prices),
            valid.labels,
            cfg.optimizer,
            seed=cfg.run.seed,
            on_epoch=on_epoch,
        )
    except nn.TrainingDiverged as exc:
        nn.save_checkpoint(exc.last_good, out / "model.last_good.ckpt")
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    nn.save_checkpoint(result.model, out / "model.ckpt")
    final = result.history[result.best_epoch - 1]
    print(f"best epoch {result.best_epoch}: valid_accuracy={final.valid_accuracy:.4f}; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(Path(args.model))
    data = _load_dataset(Path(args.data))
    ev = nn.evaluate(model, encode_prices_batch(data.prices), data.labels)
    print(f"accuracy {ev.accuracy:.4f} on {len(data)} samples")
    print("label  support  precision  recall")
    for k in range(model.num_classes):
        prec = "n/a" if np.isnan(ev.precision[k]) else f"{ev.precision[k]:.3f}"
        rec = "n/a" if np.isnan(ev.recall[k]) else f"{ev.recall[k]:.3f}"
        print(f"{k:<6} {ev.support[k]:<8} {prec:<10} {rec}")
    if args.out:
        _write(Path(args.out) / "eval.json", json.dumps(ev.as_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _label_list(text: Optional[str]) -> list[int]:
    if not text:
        return [int(p) for p in Pattern if p != Pattern.NONE]
    return [int(v) for v in text.split(",")]


def cmd_attack(args) -> int:
    cfg = _resolve(args, run={"workers": args.workers, "render": args.render}, attack={"seed": args.seed})
    model = _load_model(Path(args.model))
    data = _load_dataset(Path(args.data) / "test.gafl" if Path(args.data).is_dir() else Path(args.data))
    campaign = atk.batch_attack(
        model, data, cfg.attack, workers=cfg.run.workers, labels=_label_list(args.labels), per_label=args.per_label
    )
    campaign.report.config = cfg.to_dict()
    out = Path(args.out)
    header = "# " + json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
    _write(out / "report.txt", header + campaign.report.to_table())
    _write(out / "report.csv", campaign.report.to_csv())
    print(campaign.report.to_table(), end="")
    if args.archive:
        atk.write_archive(campaign, out / "outcomes")
    if cfg.run.render > 0:
        render_campaign(campaign, out / "figures", cfg.run.render, cfg.to_dict())
    return EXIT_OK


def render_campaign(campaign: atk.Campaign, directory: Path, per_label: int, provenance: dict) -> None:
    done: dict[int, int] = {}
    for i, outcome in campaign.outcomes.items():
        adv = outcome.adversarial
        if adv is None or adv.window is None or done.get(outcome.original_label, 0) >= per_label:
            continue
        done[outcome.original_label] = done.get(outcome.original_label, 0) + 1
        stem = f"label{outcome.original_label}_sample{i:06d}"
        before = dict(label=outcome.original_label, confidence=outcome.original_confidence, title="original")
        after = dict(label=adv.label, confidence=adv.confidence, title="after attack")
        _write(
            directory / f"{stem}_candles.svg",
            render.side_by_side(
                [render.candle_panel(outcome.original_window, **before), render.candle_panel(adv.window, **after)],
                provenance,
            ),
        )
        _write(
            directory / f"{stem}_gasf.svg",
            render.side_by_side(
                [render.gasf_panel(outcome.original_tensor, "close", **before), render.gasf_panel(adv.tensor, "close", **after)],
                provenance,
            ),
        )
    missing = {lab: per_label - n for lab, n in done.items() if n < per_label}
    if missing:
        log.warning("fewer successful attacks than requested figures: %s", missing)


def cmd_render(args) -> int:
    data = _load_dataset(Path(args.data))
    if not 0 <= args.index < len(data):
        raise InputError(f"--index {args.index} out of range for {len(data)} samples")
    window = data.window(args.index)
    label = int(data.labels[args.index])
    out = Path(args.out)
    try:
        gasf_svg = render.render_gasf(encode_window(window.prices), args.channel, label=label)
    except render.UsageError as exc:
        raise InputError(str(exc)) from exc
    _write(out / f"sample{args.index:06d}_candles.svg", render.render_candles(window, label=label))
    _write(out / f"sample{args.index:06d}_gasf_{args.channel}.svg", gasf_svg)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="candlexai", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default: Optional[str] = None):
        sp.add_argument("--config", default=None, help="INI config file; flags override it")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=out_default, required=out_default is None)

    g = sub.add_parser("generate", help="synthesize rule-labeled train/test datasets")
    common(g)
    g.add_argument("--per-label", type=int, default=None, help="samples per pattern label (label 0 gets twice as many)")
    g.add_argument("--train-fraction", type=float, default=None)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("ingest", help="label 10-bar windows from an OHLC CSV")
    common(i)
    i.add_argument("--csv", required=True)
    i.add_argument("--stride", type=int, default=10)
    i.add_argument("--train-fraction", type=float, default=None)
    i.add_argument("--timestamp-col", default="timestamp", help="empty string for none")
    i.add_argument("--open-col", default="open")
    i.add_argument("--high-col", default="high")
    i.add_argument("--low-col", default="low")
    i.add_argument("--close-col", default="close")
    i.set_defaults(func=cmd_ingest)

    t = sub.add_parser("train", help="train the GASF classifier")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory (uses train.gafl) or file")
    t.add_argument("--epochs", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("attack", help="run the diagonal local-search attack campaign")
    common(a)  # --seed also seeds the per-sample attack streams
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True, help="dataset directory (uses test.gafl) or file")
    a.add_argument("--workers", type=int, default=None)
    a.add_argument("--render", type=int, default=None, help="before/after figure pairs per label")
    a.add_argument("--per-label", type=int, default=None, help="attack at most N correctly classified samples per label")
    a.add_argument("--labels", default=None, help="comma-separated labels to attack (default 1-8)")
    a.add_argument("--archive", action="store_true", help="write per-sample outcome records")
    a.set_defaults(func=cmd_attack)

    r = sub.add_parser("render", help="render one dataset sample as candlesticks and a GASF heatmap")
    r.add_argument("--data", required=True)
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--channel", default="close")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except nn.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
