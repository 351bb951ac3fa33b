import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from anomvol.geometry import CameraIntrinsics  # noqa: E402
from anomvol.synthbench import BenchPreset, ScanSpec, detect_dataset, write_dataset  # noqa: E402
from anomvol.manifest import load_manifest  # noqa: E402

# a reduced easy preset: 64x64 views of a coarser sphere, 2 + 2 test instances
TINY = BenchPreset(
    name="tiny", tessellation=3, n_nominal=2, n_defective=2,
    scan=ScanSpec(intrinsics=CameraIntrinsics(140.0, 140.0, 31.5, 31.5, 64, 64), noise_std=0.002),
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """``(manifest path, maps dir)`` of a rendered tiny preset with reference-diff maps."""
    root = tmp_path_factory.mktemp("tiny")
    path = write_dataset(root / "data", TINY, seed=3)
    detect_dataset(load_manifest(path), root / "maps")
    return path, root / "maps"


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, detail = results[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title} ({detail})")
