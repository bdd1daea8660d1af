import math

import numpy as np
import pytest

from candlexai.attack import (
    AttackConfig,
    AttackReport,
    LabelStats,
    MisclassifiedSample,
    attack,
    batch_attack,
    format_percent,
    perturb_diagonal,
    reencode,
    scale_diagonal,
)
from candlexai.gasf import encode_window
from candlexai.market_data import generate_dataset, synthesize_window
from candlexai.nn import Prediction


class ConstantModel:
    """Ignores its input."""

    def __init__(self, label, k=9):
        self.label = label
        self.k = k
        self.calls = 0

    def predict(self, x):
        self.calls += 1
        p = np.full(self.k, 0.1 / (self.k - 1))
        p[self.label] = 0.9
        return Prediction(p, self.label, 0.9)

    def probabilities(self, x):
        return np.array([self.predict(xi).probabilities for xi in x])


class DriftModel:
    """Predicts ``label`` until the close-channel diagonal moves away from ``reference``."""

    def __init__(self, label, reference, threshold):
        self.label = label
        self.reference = reference
        self.threshold = threshold
        self.calls = 0

    def predict(self, x):
        self.calls += 1
        drift = np.max(np.abs(np.diag(x[..., 3]) - self.reference))
        k = self.label if drift < self.threshold else (self.label + 1) % 9
        p = np.full(9, 0.01)
        p[k] = 0.92
        return Prediction(p, k, 0.92)


@pytest.fixture
def sample():
    return synthesize_window(np.random.default_rng(17), 1)


def test_unit_scale_is_identity():
    d = np.array([[0.3, -0.2, 0.9]])
    out, acc = scale_diagonal(d, np.ones(3), 0.5)
    assert np.array_equal(out, d)
    assert acc.tolist() == [[True, True, False]]


def test_bound_arithmetic():
    d = np.array([[0.6]])
    out, acc = scale_diagonal(d, np.array([0.8]), 0.5)
    assert out[0, 0] == pytest.approx(0.48) and acc[0, 0]
    out, acc = scale_diagonal(d, np.array([1.1]), 0.5)
    assert out[0, 0] == 0.6 and not acc[0, 0]
    for r in np.linspace(0.8, 1.2, 41):
        out, acc = scale_diagonal(np.array([[0.7]]), np.array([r]), 0.5)
        assert out[0, 0] == 0.7 and not acc[0, 0]


def test_scale_shared_across_channels_rejection_per_channel():
    d = np.array([[0.3], [0.45], [-0.3]])
    out, acc = scale_diagonal(d, np.array([1.2]), 0.5)
    np.testing.assert_allclose(out[:, 0], [0.36, 0.45, -0.36])
    assert acc[:, 0].tolist() == [True, False, True]


def test_perturb_touches_only_diagonal(sample):
    t = encode_window(sample.window.prices)
    p = perturb_diagonal(t, np.random.default_rng(0))
    off = ~np.eye(10, dtype=bool)
    assert np.array_equal(p.matrices[:, off], t.matrices[:, off])
    assert not np.array_equal(p.diagonals, t.diagonals)


def test_reencode_fixed_point_and_row_update(sample):
    t = encode_window(sample.window.prices)
    np.testing.assert_allclose(reencode(t).matrices, t.matrices, atol=1e-12, rtol=0)

    # perturb one diagonal entry by hand and recompute its row from the trig definition
    m = t.matrices.copy()
    i = 4
    x = np.cos(np.arccos(np.diagonal(t.matrices, axis1=1, axis2=2)) / 2)
    new_xi = 0.62
    m[:, i, i] = 2 * new_xi**2 - 1
    out = reencode(t.with_matrices(m))
    for c in range(4):
        for j in range(10):
            xj = new_xi if j == i else x[c, j]
            expected = math.cos(math.acos(new_xi) + math.acos(xj))
            assert out.matrices[c, i, j] == pytest.approx(expected, abs=1e-12)
            assert out.matrices[c, j, i] == out.matrices[c, i, j]
    assert out.matrices.min() >= -1 and out.matrices.max() <= 1


def test_constant_model_is_unattackable(sample):
    model = ConstantModel(sample.label)
    out = attack(model, sample, AttackConfig(seed=1))
    assert not out.success and out.adversarial is None
    assert out.episodes_used == 150 == out.queries
    assert model.calls == 151  # one clean query plus R episodes
    assert sum(r.reset for r in out.trace) == 14


def test_query_budget_when_clean_prediction_is_supplied(sample):
    model = ConstantModel(sample.label)
    clean = model.predict(encode_window(sample.window.prices).as_input())
    model.calls = 0
    attack(model, sample, AttackConfig(episodes=37), original=clean)
    assert model.calls == 37


def test_misclassified_sample_is_skipped(sample):
    with pytest.raises(MisclassifiedSample):
        attack(ConstantModel(0), sample)


def drift_model(sample, threshold=0.02):
    ref = np.diag(encode_window(sample.window.prices).as_input()[..., 3])
    return DriftModel(sample.label, ref, threshold)


def test_success_path_and_consistency(sample):
    out = attack(drift_model(sample), sample, AttackConfig(seed=3))
    assert out.success
    adv = out.adversarial
    assert adv.label != sample.label
    np.testing.assert_allclose(reencode(adv.tensor).matrices, adv.tensor.matrices, atol=1e-12, rtol=0)
    # diagonal differs only where a scale was accepted
    moved = np.abs(adv.tensor.diagonals - out.original_tensor.diagonals) > 1e-12
    assert not np.any(moved & ~adv.modified)
    assert adv.window is not None
    o, h, l, c = adv.window.prices.T
    assert np.all(l <= np.minimum(o, c)) and np.all(h >= np.maximum(o, c))


def test_seeded_attack_is_reproducible(sample):
    a = attack(drift_model(sample, 0.2), sample, AttackConfig(seed=5))
    b = attack(drift_model(sample, 0.2), sample, AttackConfig(seed=5))
    assert a.to_dict() == b.to_dict()


def test_restart_restores_original_bit_for_bit(sample):
    cfg = AttackConfig(seed=2, episodes=45, reset_period=10)
    out = attack(ConstantModel(sample.label), sample, cfg, record_snapshots=True)
    original = out.original_tensor.diagonals
    for ep, snap in enumerate(out.snapshots):
        if ep % cfg.reset_period == 0:
            assert np.array_equal(snap, original)
            assert ep == 0 or out.trace[ep].reset
        else:
            assert not out.trace[ep].reset
    assert not np.array_equal(out.snapshots[5], original)


def test_unreachable_entries_never_move(sample):
    cfg = AttackConfig(seed=4)
    out = attack(ConstantModel(sample.label), sample, cfg, record_snapshots=True)
    original = out.original_tensor.diagonals
    frozen = np.abs(original) >= cfg.unreachable
    assert frozen.any()
    for snap in out.snapshots + [out.final_diagonal]:
        assert np.array_equal(snap[frozen], original[frozen])


def test_batch_attack_all_skipped():
    ds = generate_dataset({k: 3 for k in range(1, 9)}, 2)
    camp = batch_attack(ConstantModel(0), ds, AttackConfig(episodes=3))
    assert [r.attempted for r in camp.report.rows] == [0] * 8
    assert [r.skipped for r in camp.report.rows] == [3] * 8
    assert math.isnan(camp.report.mean_ratio)


def test_batch_attack_omits_empty_labels(caplog):
    ds = generate_dataset({1: 2}, 2)
    camp = batch_attack(ConstantModel(1), ds, AttackConfig(episodes=2), labels=[1, 2])
    assert [r.label for r in camp.report.rows] == [1]
    assert "label 2" in caplog.text


def test_report_layout():
    counts = [(1, 631), (2, 972), (3, 1079), (4, 1319), (5, 602), (6, 932), (7, 953), (8, 1238)]
    report = AttackReport([LabelStats(lab, 1500, s) for lab, s in counts])
    text = report.to_table()
    for lab, pct in [(1, "42.1"), (4, "87.9"), (5, "40.1"), (8, "82.5")]:
        line = next(l for l in text.splitlines() if l.startswith(f"{lab} "))
        cells = [c.strip() for c in line.split("|")]
        assert cells[1] == f"{dict(counts)[lab]} / 1500" and cells[2] == pct
    # mean of the exact ratios; averaging the rounded percents gives 64.3625
    assert 100 * report.mean_ratio == pytest.approx(64.36, abs=0.03)
    assert np.mean([float(r.percent) for r in report.rows]) == pytest.approx(64.3625)
    csv_rows = report.to_csv().splitlines()
    assert csv_rows[1] == "label,succeeded,attempted,skipped,ratio,percent"
    assert csv_rows[2].endswith(",42.1")


def test_percent_is_one_decimal_rounding():
    for s, a in [(631, 1500), (1, 3), (2, 3), (0, 7), (7, 7)]:
        assert format_percent(s, a) == f"{round(100 * s / a, 1):.1f}"


def test_attack_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(scale_low=1.3)
    with pytest.raises(ValueError):
        AttackConfig(bound=0)
    with pytest.raises(ValueError):
        AttackConfig(episodes=0)
    assert AttackConfig().unreachable == pytest.approx(0.625)
