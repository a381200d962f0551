import numpy as np
import pytest

from knnexplain import nn
from knnexplain.data import BlobSpec, make_blobs_split


def mlp(dim=6, hidden=(8,), classes=3):
    layers = []
    for i, h in enumerate(hidden, start=1):
        layers += [nn.dense(h, f"fc{i}"), nn.relu(f"relu{i}")]
    layers.append(nn.dense(classes, "logits"))
    return nn.ArchSpec((dim,), tuple(layers))


def lenient_close(a, b):
    """Elementwise relative error with a floor for entries near zero."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@pytest.fixture(scope="session")
def blobs():
    return make_blobs_split(BlobSpec(3, 6, 40, spread=1.5, sigma=1.0, seed=3), 20)


@pytest.fixture(scope="session")
def small_arch():
    return mlp()


@pytest.fixture(scope="session")
def trained(blobs, small_arch):
    train, _ = blobs
    cfg = nn.TrainConfig(epochs=20, batch_size=16, learning_rate=0.05, seed=5)
    return nn.train(nn.build_model(small_arch, 11), train, cfg)
