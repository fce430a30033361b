import numpy as np
import pytest

from onemax.data import SynthConfig, synth_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 classes x 8 instances: enough for fast end-to-end training tests."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    cfg = SynthConfig(n_classes=3, instances_per_class=8)
    manifest, bank = synth_corpus(cfg, root, rng_seed=7)
    return manifest, bank, root


@pytest.fixture
def rng():
    return np.random.default_rng(0)
