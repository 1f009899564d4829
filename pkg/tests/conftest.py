import numpy as np
import pytest

from mmnerf.field import ModelConfig
from mmnerf.pipeline import TrainConfig
from mmnerf.synth import Intrinsics, TrajectorySpec, generate_dataset, orchard_scene


def tiny_config(**overrides) -> TrainConfig:
    model = ModelConfig(coarse_resolution=(8, 8, 8), fine_resolution=(12, 12, 12), channels=4, storage="dense",
                        hidden_width=8, hidden_layers=1, n_freqs=1)
    base = dict(iterations=3, batch=64, n_coarse=8, n_fine=8, model=model, float32=False)
    base.update(overrides)
    return TrainConfig.desk(**base)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Ten 16x16 views of the orchard scene."""
    out = tmp_path_factory.mktemp("tiny") / "data"
    generate_dataset(orchard_scene(), TrajectorySpec(n_views=10), Intrinsics(16, 16, 50.0), out,
                     event_threshold=0.2, seed=1, supersample=3)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
