import os
import struct
from pathlib import Path

import numpy as np
import pytest

from cffnet.collab import CollabParams, build_network
from cffnet.dataio import Dataset
from cffnet.ffcore import GoodnessConfig
from cffnet.mathcore import Rng

MNIST_DIR = Path(os.environ.get("CFFNET_MNIST_DIR", "/root/data/mnist"))

# criterion number -> (passed, detail); printed after the run
ACCEPTANCE_RESULTS = {}


def write_idx_images(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    Path(path).write_bytes(struct.pack(">IIII", 0x803, n, rows, cols) + pixels.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", 0x801, labels.size) + labels.tobytes())


def synthetic_digits(n, side=6, seed=0):
    """Class-dependent blob images: pixel intensity pattern keyed by label."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    protos = rng.integers(0, 256, (10, side * side))
    noise = rng.integers(-40, 40, (n, side * side))
    pixels = np.clip(protos[labels] + noise, 0, 255).reshape(n, side, side)
    return pixels.astype(np.uint8), labels.astype(np.uint8)


@pytest.fixture
def idx_dir(tmp_path):
    """Tiny synthetic dataset in the four canonical IDX files."""
    train_px, train_y = synthetic_digits(120, seed=1)
    test_px, test_y = synthetic_digits(40, seed=2)
    write_idx_images(tmp_path / "train-images-idx3-ubyte", train_px)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", train_y)
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", test_px)
    write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", test_y)
    return tmp_path


@pytest.fixture
def tiny_dataset():
    px, y = synthetic_digits(64, side=5, seed=3)
    return Dataset(px.reshape(64, -1) / 255.0, y)


def tiny_net(variant="baseline", widths=(25, 8, 6, 4), seed=0, gamma_init=1.0, alpha_mode="ones", reduction="mean"):
    collab = CollabParams.for_variant(variant, len(widths) - 1, gamma_init, 0.01, alpha_mode)
    return build_network(widths, Rng(seed), collab, GoodnessConfig(2.0, reduction))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
