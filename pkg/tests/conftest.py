"""Shared fixtures: a small trained MicroNet on a toy dataset, a linear backend and golden files."""

import json
from pathlib import Path

import numpy as np
import pytest

from xattack.data_io import generate_toy_dataset, split_holdout
from xattack.micronet import LinearBackend, MicroNet, train
from xattack.tensor_core import ImageTensor, Rng

FIXTURES = Path(__file__).parent / "fixtures"

TOY_CLASSES = 4
TOY_PER_CLASS = 15
TOY_SIDE = 8

# Ten-class 16×16 setup of the slow experiments
DESK_CLASSES = 10
DESK_PER_CLASS = 60
DESK_SIDE = 16


@pytest.fixture(scope="session")
def toy_dataset():
    return generate_toy_dataset(TOY_CLASSES, TOY_PER_CLASS, side=TOY_SIDE, seed=7)


@pytest.fixture(scope="session")
def toy_split(toy_dataset):
    """(train pool, held-out) split of the toy dataset"""
    return split_holdout(toy_dataset, 0.2, Rng(7).child("holdout"))


@pytest.fixture(scope="session")
def trained_net(toy_split):
    pool, _ = toy_split
    net = MicroNet.initialize(TOY_CLASSES, TOY_SIDE, TOY_SIDE, 3, Rng(7).child("init"))
    trained, _ = train(net, pool, epochs=12, lr=0.05, batch=16, rng=Rng(7).child("train"))
    return trained


@pytest.fixture(scope="session")
def desk_split():
    dataset = generate_toy_dataset(DESK_CLASSES, DESK_PER_CLASS, side=DESK_SIDE, seed=7)
    return split_holdout(dataset, 0.2, Rng(7).child("holdout"))


@pytest.fixture(scope="session")
def desk_net(desk_split):
    """MicroNet trained 40 epochs on the ten-class pool; only the slow tests request it"""
    pool, _ = desk_split
    net = MicroNet.initialize(DESK_CLASSES, DESK_SIDE, DESK_SIDE, 3, Rng(7).child("init"))
    trained, _ = train(net, pool, epochs=40, lr=0.05, batch=32, rng=Rng(7).child("train"))
    return trained


@pytest.fixture
def random_net():
    return MicroNet.initialize(3, 6, 6, 3, Rng(11).child("init"))


@pytest.fixture
def linear_backend():
    """logits = W·vec(x) + b on 2×3×2 images, 3 classes"""
    weight = Rng(5).child("linear").gaussian(3 * 12).reshape(3, 12)
    return LinearBackend(weight, np.array([0.1, -0.2, 0.3]), shape=(2, 3, 2))


@pytest.fixture
def random_image():
    def make(width, height, channels, seed=0):
        return ImageTensor(Rng(seed).child("image").uniform(width * height * channels).reshape(height, width, channels))
    return make


def pytest_addoption(parser):
    parser.addoption("--record-golden", action="store_true", default=False,
                     help="write the golden fixtures under tests/fixtures/ from the current run")


@pytest.fixture
def golden(request):
    """
    Compare a JSON-serialisable value against tests/fixtures/<name>.json.
    A missing fixture fails the test; `pytest --record-golden` (re)writes it from the current run.
    """
    record = request.config.getoption("--record-golden")

    def check(name, value, rel=1e-9):
        path = FIXTURES / f"{name}.json"
        if record:
            FIXTURES.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(value, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            return
        if not path.exists():
            pytest.fail(f"golden fixture {path} is missing; record it with `pytest --record-golden`")
        expected = json.loads(path.read_text(encoding="utf-8"))
        assert _close(value, expected, rel), f"{name} differs from golden fixture {path}"
    return check


def _close(actual, expected, rel) -> bool:
    if isinstance(expected, dict):
        return isinstance(actual, dict) and actual.keys() == expected.keys() and all(
            _close(actual[k], expected[k], rel) for k in expected
        )
    if isinstance(expected, list):
        return isinstance(actual, (list, tuple)) and len(actual) == len(expected) and all(
            _close(a, e, rel) for a, e in zip(actual, expected)
        )
    if isinstance(expected, float):
        return actual == pytest.approx(expected, rel=rel, abs=1e-12)
    return actual == expected
