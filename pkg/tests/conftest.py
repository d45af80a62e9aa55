import numpy as np
import pytest

from burstwall.autoencoder import train_ensemble
from burstwall.config import Config
from burstwall.distill import embed_leaves
from burstwall.iforest import train_iforest
from burstwall.recipes import build_rules, burst_matrix, distill, train_forest, train_teacher
from burstwall.synth import (DEFAULT_BL_SCHEMA, DEFAULT_PL_SCHEMA, FeatureSetConfig, TraceConfig,
                             make_feature_dataset, make_trace)
from burstwall.traffic import FiveTuple

ACCEPTANCE = pytest.StashKey[list]()

SMALL = FeatureSetConfig(n_features=3, bit_width=6, n_train=1500, n_val=500, n_eval=500)


@pytest.fixture(scope="session")
def small_data():
    return make_feature_dataset(SMALL, seed=0)


@pytest.fixture(scope="session")
def small_teacher(small_data):
    return train_ensemble(small_data.X_train, small_data.X_val, epochs=30, seed=0)


@pytest.fixture(scope="session")
def small_distilled(small_data, small_teacher):
    forest = train_iforest(small_data.X_train, 10, 64, seed=1, schema=small_data.schema)
    return embed_leaves(forest, small_teacher, small_data.X_train, k=20, seed=0)


@pytest.fixture(scope="session")
def trace_models():
    """Distilled forest and combined rules from the default recipe on a benign trace."""
    cfg = Config()
    train = [p for p in make_trace(TraceConfig(), seed=1) if not p.malicious]
    X, _ = burst_matrix(train, DEFAULT_BL_SCHEMA)
    teacher = train_teacher(X, cfg, 0)
    df = distill(train_forest(X, DEFAULT_BL_SCHEMA, cfg, 0), teacher, DEFAULT_BL_SCHEMA, X, cfg, 0)
    return df, build_rules(df, train, DEFAULT_PL_SCHEMA, cfg, 0)


def tuple_from(rng):
    return FiveTuple(int(rng.integers(0, 2**32)), int(rng.integers(0, 2**32)), int(rng.integers(0, 2**16)),
                     int(rng.integers(0, 2**16)), int(rng.choice([6, 17])))


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
