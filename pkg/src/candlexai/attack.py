"""Black-box local search over the GASF diagonal.

Each episode rescales every diagonal entry by a random factor drawn per
timestep, rejects any product whose magnitude reaches ``bound``, rebuilds a
consistent GASF from the perturbed diagonal and queries the classifier.
Perturbations accumulate until ``reset_period`` episodes pass without a
label flip, at which point the working tensor is restored from the original.

There is no separate step-size parameter: the scale range and ``bound`` fully
determine each move.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .bars import Window
from .gasf import (
    DegenerateWindowError,
    GasfTensor,
    NormalizedSeries,
    decode_diagonal,
    denormalize,
    encode_window,
    gasf_matrix,
)
from .market_data import Dataset, LabeledWindow
from .nn import Prediction

log = logging.getLogger(__name__)


class MisclassifiedSample(Exception):
    """The model already gets the clean sample wrong; it is skipped, not failed."""


class Model(Protocol):
    def predict(self, x: np.ndarray) -> Prediction: ...


@dataclass(frozen=True)
class AttackConfig:
    scale_low: float = 0.8
    scale_high: float = 1.2
    bound: float = 0.5
    episodes: int = 150
    reset_period: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.scale_low <= self.scale_high:
            raise ValueError("need 0 < scale_low <= scale_high")
        if not 0 < self.bound <= 1:
            raise ValueError("need 0 < bound <= 1")
        if self.episodes < 1 or self.reset_period < 1:
            raise ValueError("episodes and reset_period must be >= 1")

    @property
    def unreachable(self) -> float:
        """Diagonal magnitude from which no admissible scale can pass the bound test."""
        return self.bound / self.scale_low

    def as_dict(self) -> dict:
        return asdict(self)


def scale_diagonal(diag: np.ndarray, scales: np.ndarray, bound: float) -> tuple[np.ndarray, np.ndarray]:
    """Apply per-timestep ``scales`` to a ``(C, T)`` diagonal stack.

    Returns the new diagonal and the mask of accepted entries; a rejected
    entry keeps its previous value.
    """
    proposed = diag * scales[None, :]
    accepted = np.abs(proposed) < bound
    return np.where(accepted, proposed, diag), accepted


def perturb_diagonal(tensor: GasfTensor, rng: np.random.Generator, config: AttackConfig = AttackConfig()) -> GasfTensor:
    """One random rescaling step on the diagonal; off-diagonal entries are left alone."""
    scales = rng.uniform(config.scale_low, config.scale_high, tensor.matrices.shape[-1])
    new_diag, _ = scale_diagonal(tensor.diagonals, scales, config.bound)
    m = tensor.matrices.copy()
    idx = np.arange(m.shape[-1])
    m[:, idx, idx] = new_diag
    return tensor.with_matrices(m)


def reencode(tensor: GasfTensor) -> GasfTensor:
    """Recover the series from the diagonal and encode it again."""
    return tensor.with_matrices(gasf_matrix(decode_diagonal(tensor.diagonals)))


@dataclass
class EpisodeRecord:
    episode: int
    label: int
    confidence: float
    reset: bool


@dataclass
class Adversarial:
    tensor: GasfTensor
    diagonal: np.ndarray  # working diagonal before re-encoding
    window: Optional[Window]  # None for degenerate (flat) windows
    label: int
    confidence: float
    modified: np.ndarray  # (C, T) entries touched since the last restart


@dataclass
class AttackOutcome:
    success: bool
    episodes_used: int
    queries: int
    original_window: Window
    original_label: int
    original_confidence: float
    original_tensor: GasfTensor
    adversarial: Optional[Adversarial]
    trace: list[EpisodeRecord] = field(default_factory=list)
    final_diagonal: Optional[np.ndarray] = None  # working diagonal when the search stopped
    snapshots: Optional[list[np.ndarray]] = None  # working diagonal at the start of each episode

    def to_dict(self) -> dict:
        adv = self.adversarial
        return {
            "success": self.success,
            "episodes_used": self.episodes_used,
            "queries": self.queries,
            "original": {
                "label": self.original_label,
                "confidence": self.original_confidence,
                "window": self.original_window.prices.tolist(),
            },
            "adversarial": None
            if adv is None
            else {
                "label": adv.label,
                "confidence": adv.confidence,
                "window": None if adv.window is None else adv.window.prices.tolist(),
                "diagonal": adv.diagonal.tolist(),
            },
            "trace": [asdict(r) for r in self.trace],
        }


def recover_window(tensor: GasfTensor) -> Optional[Window]:
    try:
        prices = denormalize(NormalizedSeries(decode_diagonal(tensor.diagonals), tensor.norm))
    except DegenerateWindowError:
        return None
    return Window(prices)


def attack(
    model: Model,
    sample: LabeledWindow,
    config: AttackConfig = AttackConfig(),
    rng: Optional[np.random.Generator] = None,
    original: Optional[Prediction] = None,
    record_snapshots: bool = False,
) -> AttackOutcome:
    """Untargeted local search on one sample.

    ``original`` is the model's prediction on the clean sample; when omitted it
    is computed here with one extra query that is not counted in ``queries``.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    clean = encode_window(sample.window.prices)
    if original is None:
        original = model.predict(clean.as_input())
    if original.label != sample.label:
        raise MisclassifiedSample(f"model predicts {original.label} for a sample labeled {sample.label}")

    n = clean.matrices.shape[-1]
    memory = clean.diagonals  # restore point
    diag = memory.copy()
    touched = np.zeros_like(diag, dtype=bool)
    counter = 0
    trace: list[EpisodeRecord] = []
    snapshots: Optional[list[np.ndarray]] = [] if record_snapshots else None
    for episode in range(config.episodes):
        reset = counter == config.reset_period
        if reset:
            diag = memory.copy()
            touched[:] = False
            counter = 0
        if snapshots is not None:
            snapshots.append(diag.copy())
        scales = rng.uniform(config.scale_low, config.scale_high, n)
        diag, accepted = scale_diagonal(diag, scales, config.bound)
        touched |= accepted
        counter += 1
        candidate = clean.with_matrices(gasf_matrix(decode_diagonal(diag)))
        pred = model.predict(candidate.as_input())
        trace.append(EpisodeRecord(episode, pred.label, pred.confidence, reset))
        if pred.label != sample.label:
            adv = Adversarial(candidate, diag, recover_window(candidate), pred.label, pred.confidence, touched.copy())
            return AttackOutcome(
                True, episode + 1, episode + 1, sample.window, sample.label, original.confidence, clean, adv,
                trace, diag, snapshots,
            )
    return AttackOutcome(
        False, config.episodes, config.episodes, sample.window, sample.label, original.confidence, clean, None,
        trace, diag, snapshots,
    )


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


@dataclass
class LabelStats:
    label: int
    attempted: int
    succeeded: int
    skipped: int = 0

    @property
    def ratio(self) -> float:
        return self.succeeded / self.attempted if self.attempted else float("nan")

    @property
    def percent(self) -> str:
        return format_percent(self.succeeded, self.attempted)


def format_percent(succeeded: int, attempted: int) -> str:
    return f"{100.0 * succeeded / attempted:.1f}" if attempted else "n/a"


@dataclass
class AttackReport:
    rows: list[LabelStats]
    config: dict = field(default_factory=dict)

    @property
    def mean_ratio(self) -> float:
        ratios = [r.ratio for r in self.rows if r.attempted]
        return float(np.mean(ratios)) if ratios else float("nan")

    def to_table(self) -> str:
        lines = [f"{'Label':<7} | {'Success Rate':<14} | Percent (%)", f"{'-' * 7}-+-{'-' * 14}-+-{'-' * 11}"]
        for r in self.rows:
            lines.append(f"{r.label:<7} | {f'{r.succeeded} / {r.attempted}':<14} | {r.percent}")
        mean = self.mean_ratio
        lines.append(f"{'Average':<7} | {'':<14} | {'n/a' if math.isnan(mean) else f'{100 * mean:.2f}'}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        out = [f"# config={json.dumps(self.config, sort_keys=True, separators=(',', ':'))}"]
        out.append("label,succeeded,attempted,skipped,ratio,percent")
        for r in self.rows:
            ratio = "" if not r.attempted else repr(r.ratio)
            out.append(f"{r.label},{r.succeeded},{r.attempted},{r.skipped},{ratio},{r.percent}")
        mean = self.mean_ratio
        out.append(f"mean,,,,{'' if math.isnan(mean) else repr(mean)},{'n/a' if math.isnan(mean) else f'{100 * mean:.2f}'}")
        return "\n".join(out) + "\n"


@dataclass
class Campaign:
    report: AttackReport
    outcomes: dict[int, AttackOutcome]  # dataset index -> outcome


def _attack_one(args) -> tuple[int, AttackOutcome]:
    model, index, prices, label, config, original = args
    rng = np.random.default_rng([config.seed, index])
    outcome = attack(model, LabeledWindow(Window(prices), label), config, rng, original)
    return index, outcome


def _attack_chunk(args) -> list[tuple[int, AttackOutcome]]:
    model, jobs, config = args
    return [_attack_one((model, i, p, lab, config, orig)) for i, p, lab, orig in jobs]


def batch_attack(
    model,
    data: Dataset,
    config: AttackConfig = AttackConfig(),
    workers: int = 1,
    labels: Optional[Sequence[int]] = None,
    per_label: Optional[int] = None,
) -> Campaign:
    """Attack every correctly classified sample (optionally the first ``per_label`` per class).

    Sample ``i`` uses the random stream seeded by ``(config.seed, i)``, so the
    result does not depend on ``workers``.
    """
    from .gasf import encode_prices_batch

    labels = sorted(set(int(v) for v in data.labels)) if labels is None else sorted(set(labels))
    x = encode_prices_batch(data.prices)
    probs = model.probabilities(x) if len(x) else np.zeros((0, 0))
    pred = np.argmax(probs, axis=1) if len(x) else np.zeros(0, dtype=np.int64)

    rows: list[LabelStats] = []
    jobs = []
    for label in labels:
        idx = np.flatnonzero(data.labels == label)
        if len(idx) == 0:
            log.warning("label %d has no samples; omitted from report", label)
            continue
        correct = idx[pred[idx] == label]
        chosen = correct if per_label is None else correct[:per_label]
        rows.append(LabelStats(label, len(chosen), 0, skipped=int(len(idx) - len(correct))))
        for i in chosen:
            p = probs[i]
            jobs.append((int(i), data.prices[i], label, Prediction(p, label, float(p[label]))))

    if workers <= 1 or len(jobs) < 2:
        results = _attack_chunk((model, jobs, config))
    else:
        chunks = [jobs[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_attack_chunk, [(model, c, config) for c in chunks]) for r in part]
    outcomes = dict(sorted(results, key=lambda t: t[0]))

    by_label = {r.label: r for r in rows}
    for i, outcome in outcomes.items():
        if outcome.success:
            by_label[outcome.original_label].succeeded += 1
    return Campaign(AttackReport(rows, {"attack": config.as_dict()}), outcomes)


def write_archive(campaign: Campaign, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, outcome in campaign.outcomes.items():
        (directory / f"sample_{i:06d}.json").write_text(json.dumps(outcome.to_dict(), sort_keys=True) + "\n")
