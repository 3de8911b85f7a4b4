import pytest

from presort.config import desk_config
from presort.corpus import SyntheticSpec, generate_synthetic_corpus, load_ground_truth, split
from presort.net import NetConfig
from presort.spectro import SpectroConfig


def tiny_config(seed=0):
    """Seconds-scale configuration for end-to-end plumbing tests."""
    cfg = desk_config(seed)
    cfg.spectro = SpectroConfig(sample_rate=16000, n_fft=512, hop=256, n_mels=16)
    cfg.net = NetConfig(channels=(2, 2, 4, 4, 4))
    cfg.train.epochs_binary = 2
    cfg.train.epochs_multiclass = 2
    cfg.synth = SyntheticSpec(counts=(9, 6, 4, 4, 4), duration_range=(0.3, 1.6))
    return cfg


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    cfg = tiny_config()
    root = tmp_path_factory.mktemp("tiny_corpus")
    manifest = generate_synthetic_corpus(cfg.synth, root, seed=0)
    manifest = split(manifest, cfg.train.split_ratio, cfg.seed)
    return root, manifest, load_ground_truth(root / "ground_truth.csv")
