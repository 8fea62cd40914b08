import numpy as np
import pytest

from src.dataio import load_manifest, load_sequences, load_template
from src.models import CnnSpec, RnnSpec
from src.synth import SynthConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cnn_spec():
    # 22 -> 20 -> 10 -> 8 -> 4 -> 2 -> quadrants
    return CnnSpec(input_height=22, input_width=22, conv_filters=(2, 2, 2), kernel_size=3, fc_units=4, activation="tanh")


@pytest.fixture
def tiny_rnn_spec():
    return RnnSpec(input_dim=3, hidden_sizes=(4,), window_W=5, activation="tanh")


@pytest.fixture(scope="session")
def small_synth_config():
    return SynthConfig(n_train=3, n_dev=1, length=40, noise=0.05, gap_fraction=0.1, seed=3)


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory, small_synth_config):
    """A 4-sequence, 40-frame synthetic corpus on disk (3 train, 1 dev)."""
    root = tmp_path_factory.mktemp("corpus")
    generate(small_synth_config, root)
    return root


@pytest.fixture(scope="session")
def synth_spec():
    # 36 -> 32 -> 16 -> 12 -> 6 -> 2 -> quadrants
    return CnnSpec(input_height=36, input_width=36, conv_filters=(2, 3, 4), kernel_size=5, fc_units=6)


@pytest.fixture(scope="session")
def loaded_corpus(synth_corpus):
    dataset = load_manifest(synth_corpus / "manifest.csv")
    template = load_template(synth_corpus / "template.json")
    return load_sequences(dataset, template)
