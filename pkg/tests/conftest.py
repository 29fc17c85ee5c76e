import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for a criterion, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


@dataclass
class DeskRun:
    model: object
    history: list
    seconds: float
    held_out: list  # (name, clean, noisy, truth)


@pytest.fixture(scope="session")
def desk_run():
    """Depth-7, 16-filter detector trained on tiles from four photographs."""
    import photos
    from idcnn_switch.dataset import PatchSet, iter_patch_sets
    from idcnn_switch.idcnn import TrainConfig, build_model, train
    from idcnn_switch.noise import NoiseSpec, corrupt

    tiles = photos.training_tiles(20)
    patches = PatchSet.concatenate(
        list(iter_patch_sets(tiles, 41, NoiseSpec(rho=0.3), seed=0, augmentation=True)), 41
    )
    held_out = []
    for i, (name, img) in enumerate(photos.held_out_photos().items()):
        clean = photos.center_crop(img, 200)
        noisy, truth = corrupt(clean, 0.3, "ctri", np.random.default_rng(1000 + i))
        held_out.append((name, clean, noisy, truth))
    config = TrainConfig(epochs=30, decay_epoch=20, seed=0)
    model = build_model(7, 16, rng=0)
    start = time.perf_counter()
    model, history = train(model, patches, config)
    return DeskRun(model, history, time.perf_counter() - start, held_out)
