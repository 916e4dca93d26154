import numpy as np
import pytest

from glasswave.audio import fixture_assets
from glasswave.geometry import FrequencyGrid, default_geometry
from glasswave.room import RoomRanges
from glasswave.scene import SceneConfig, sample_manifest, synthesize_scene


@pytest.fixture(scope="session")
def grid():
    return FrequencyGrid()


@pytest.fixture(scope="session")
def glasses():
    return default_geometry()


@pytest.fixture(scope="session")
def assets():
    return fixture_assets()


@pytest.fixture(scope="session")
def quick_config():
    # low-order rooms keep per-test synthesis well under a second
    return SceneConfig(ranges=RoomRanges(max_order=3))


@pytest.fixture(scope="session")
def small_scene(glasses, assets, quick_config):
    manifest = sample_manifest(11, 1, assets, glasses, quick_config, scene_id="t-0011")
    return synthesize_scene(manifest, assets, glasses)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        prev = _CRITERIA.get(number, (title, True))
        _CRITERIA[number] = (title, prev[1] and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
