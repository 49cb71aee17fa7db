import numpy as np
import pytest

from mupf.scene import Scene, SceneConfig

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def noise_free_scene():
    cfg = SceneConfig(pseudorange_sigma=0.0, carrier_sigma_cycles=0.0)
    return Scene(cfg)


@pytest.fixture(scope="session")
def noise_free_epoch(noise_free_scene):
    return noise_free_scene.synthesize_epoch(0.0, noise_free_scene.cfg.rover, 0)


@pytest.fixture(scope="session")
def noisy_epoch():
    scene = Scene(SceneConfig(seed=3))
    return scene, scene.synthesize_epoch(0.0, scene.cfg.rover, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
