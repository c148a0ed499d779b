import os

# config pins BLAS threads, which only works before numpy loads
from config import Config, ModelConfig, StftConfig  # isort: skip

import numpy as np
import pytest

from dsp import Waveform

TINY_STFT = StftConfig(win_length=64, hop_length=16, fft_size=64)


def tiny_config(**overrides) -> ModelConfig:
    """Small enough for forward/backward in well under a second"""
    base = dict(encoder_channels=(4, 4), lstm_hidden=8, tdnn_channels=(16, 16, 16, 16, 8),
                embedding_dim=8, tdnn_divisor=1, stft=TINY_STFT)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return tiny_config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def speech(rng) -> Waveform:
    """Half a second of pseudo-speech: two harmonics under a syllable envelope"""
    t = np.arange(8000) / Config.SAMPLE_RATE
    envelope = 0.5 * (1 + np.sin(2 * np.pi * 4 * t))
    x = envelope * (0.3 * np.sin(2 * np.pi * 180 * t) + 0.15 * np.sin(2 * np.pi * 360 * t))
    return Waveform(x + 0.01 * rng.standard_normal(t.shape))


@pytest.fixture
def isolated_dirs(tmp_path, monkeypatch):
    """Point every process-wide folder at the test's temp dir"""
    for name in ('DATA_FOLDER', 'RUNS_FOLDER', 'UPLOAD_FOLDER'):
        folder = tmp_path / name.lower()
        monkeypatch.setattr(Config, name, str(folder))
    return tmp_path


@pytest.fixture
def corpus(tmp_path):
    """Synthetic corpus mixed into train/valid/test manifests under tmp_path/data"""
    from config import MixSpec
    from dataset import SPLITS, build_manifest, make_synthetic_corpus, mix_manifest

    clean_dir, noise_dir = make_synthetic_corpus(str(tmp_path / 'corpus'), n_speakers=4,
                                                 utts_per_speaker=3, seconds=0.5, seed=3)
    spec = MixSpec(seed=3)
    data_dir = str(tmp_path / 'data')
    manifests = build_manifest(clean_dir, noise_dir, spec, data_dir)
    offset = 0
    for split in SPLITS:
        mix_manifest(manifests[split], spec, workers=2, offset=offset)
        offset += len(manifests[split])
    return {'data_dir': data_dir, 'clean_dir': clean_dir, 'noise_dir': noise_dir,
            'manifests': manifests, 'spec': spec,
            'paths': {split: os.path.join(data_dir, f"{split}.tsv") for split in SPLITS}}
