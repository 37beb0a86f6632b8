import numpy as np
import pytest

from vla_services.core import sim_env
from vla_services.core.file_writer import FileWriter
from vla_services.core.sequence_builder import SequenceBuilder
from vla_services.core.vocab import build_vocab
from vla_services.entities import CodecConfig, ModelConfig, RolloutConfig
from vla_services.services import CodecService

CHUNK = 4
MAX_SEQ_LEN = 256


@pytest.fixture
def small_vocab():
    """Specials 0..6, text 7..16, vision 17..24, action 25..44."""
    return build_vocab(10, 8, 20, text_words=["pick", "place", "red"])


@pytest.fixture
def builder(small_vocab):
    return SequenceBuilder(small_vocab, max_seq_len=128)


@pytest.fixture(scope="session")
def episodes():
    return sim_env.generate_dataset(6, "pick_place", seed=0)


@pytest.fixture(scope="session")
def codec_config():
    return CodecConfig(codebook_size=16, kmeans_iters=5, chunk_size=CHUNK)


@pytest.fixture(scope="session")
def bundle(episodes, codec_config):
    return CodecService(FileWriter()).fit(episodes, codec_config)


@pytest.fixture(scope="session")
def model_config(bundle):
    return ModelConfig(vocab_size=bundle.vocab.total_size, d_model=32,
                       n_layers=1, n_heads=2, d_ff=64,
                       max_seq_len=MAX_SEQ_LEN)


@pytest.fixture
def rollout_config():
    return RolloutConfig(chunk_size=CHUNK, max_env_steps=20)


@pytest.fixture
def tiny_overrides():
    """Config sections for a run that finishes in seconds."""
    return {
        "data": {"n_episodes": 4, "seed": 0},
        "codecs": {"codebook_size": 16, "kmeans_iters": 5,
                   "chunk_size": CHUNK},
        "model": {"d_model": 32, "n_layers": 1, "n_heads": 2, "d_ff": 64,
                  "max_seq_len": MAX_SEQ_LEN},
        "posttrain": {"steps": 2, "batch_size": 2},
        "finetune": {"steps": 2, "batch_size": 2},
        "rollout": {"chunk_size": CHUNK, "max_env_steps": 12},
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
