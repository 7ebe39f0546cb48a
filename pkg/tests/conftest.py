import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from viewstitch.synth import Environment, default_rig, render_frame  # noqa: E402

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
RIG_YAML = os.path.join(REPO_ROOT, "configs", "surround_rig.yaml")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_rig():
    return default_rig(320, 240)


@pytest.fixture(scope="session")
def small_env():
    return Environment(seed=7)


@pytest.fixture(scope="session")
def small_frame(small_env, small_rig):
    return render_frame(small_env, small_rig)


@pytest.fixture
def textured_image(rng):
    """Smooth random texture with enough structure for the detector."""
    from scipy import ndimage

    base = ndimage.gaussian_filter(rng.uniform(0, 255, (160, 200)), 2.0)
    base = (base - base.min()) / (base.max() - base.min()) * 255
    return np.repeat(base[..., None], 3, axis=2).astype(np.uint8)


@pytest.fixture(scope="session")
def rig_yaml():
    return RIG_YAML


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; returns ``ok`` for asserting."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
