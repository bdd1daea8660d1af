import time

import numpy as np
import pytest

from candlexai.attack import AttackConfig, batch_attack
from candlexai.gasf import encode_prices_batch
from candlexai.market_data import class_targets, generate_dataset, split
from candlexai.nn import TrainConfig, build_classifier, train

DESK_SEED = 7
DESK_EPOCHS = 20
ATTACK_SEED = 11

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((name, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_data():
    """200 per pattern label, 400 for label 0, split 80/20."""
    ds = generate_dataset(class_targets(200), DESK_SEED)
    return split(ds, 0.8, DESK_SEED)


@pytest.fixture(scope="session")
def desk_training(desk_data):
    tr, va = desk_data
    start = time.perf_counter()
    result = train(
        build_classifier(DESK_SEED),
        encode_prices_batch(tr.prices),
        tr.labels,
        encode_prices_batch(va.prices),
        va.labels,
        TrainConfig(epochs=DESK_EPOCHS),
        seed=DESK_SEED,
    )
    result.elapsed = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def desk_model(desk_training):
    return desk_training.model


@pytest.fixture(scope="session")
def attack_pool():
    """Fresh pattern windows for attacking, disjoint from training by seed."""
    return generate_dataset({k: 130 for k in range(1, 9)}, 2024)


@pytest.fixture(scope="session")
def campaign(desk_model, attack_pool):
    start = time.perf_counter()
    result = batch_attack(desk_model, attack_pool, AttackConfig(seed=ATTACK_SEED), workers=4, per_label=100)
    result.elapsed = time.perf_counter() - start
    return result
