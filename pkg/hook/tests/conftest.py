import subprocess
import sys

import numpy as np
import pytest


@pytest.fixture(scope="session")
def engine():
    """A live engine server, reached only through its CLI and wire protocol."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "featxfer", "serve", "--host", "127.0.0.1", "--port", "0"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    line = proc.stdout.readline().strip()
    assert line.startswith("listening on "), line
    host, _, port = line.removeprefix("listening on ").rpartition(":")
    yield host, int(port)
    proc.terminate()
    proc.wait(timeout=10)


def checker_image(size=64, seed=0):
    """Deterministic colorful test image."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size, 3), dtype=np.uint8)
    cell = max(1, size // 8)
    for y in range(0, size, cell):
        for x in range(0, size, cell):
            img[y:y + cell, x:x + cell] = rng.integers(0, 256, size=3)
    return img


def aligned_mask(size=64, cells=((1, 1), (1, 2), (2, 1)), cell_px=16):
    """Mask aligned to the coarsest tap-layer grid (16 image px per cell)."""
    bits = np.zeros((size, size), dtype=bool)
    for cy, cx in cells:
        bits[cy * cell_px:(cy + 1) * cell_px, cx * cell_px:(cx + 1) * cell_px] = True
    return bits
