import numpy as np
import pytest

from autodiff import ComplexTensor, Tensor
from complex_nn import Linear
from conftest import TINY_STFT, tiny_config
from dsp import Waveform, spectrogram_to_tensor, stft
from errors import ContractError, InputError
from vocal_reinforcement import (VocalEmbedding, VocalEncoder, fuse_vocal, simi_proxy, tdnn_context,
                                 vocal_embed)


@pytest.fixture
def encoder(rng):
    return VocalEncoder(tiny_config(), rng)


def _zeros(n_frames: int) -> ComplexTensor:
    shape = (1, TINY_STFT.n_bins, n_frames)
    return ComplexTensor(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def test_context_covers_fifteen_frames():
    assert tdnn_context() == 15


def test_too_short_utterance_is_rejected(encoder):
    with pytest.raises(InputError):
        vocal_embed(_zeros(14), encoder)
    assert vocal_embed(_zeros(15), encoder).vector.shape == (1, encoder.dim)


def test_embedding_of_a_spectrogram_is_a_vector(encoder, speech):
    e = vocal_embed(stft(speech, TINY_STFT), encoder, source='speech')
    assert e.vector.shape == (encoder.dim,)
    assert e.source == 'speech'
    assert np.all(np.isfinite(e.numpy()))


def test_silence_embedding_ignores_length(encoder):
    short = vocal_embed(_zeros(20), encoder).numpy()
    long = vocal_embed(_zeros(60), encoder).numpy()
    np.testing.assert_allclose(short, long, atol=1e-5)


def test_zero_embedding_adds_a_silent_channel(rng):
    shape = (1, 1, TINY_STFT.n_bins, 10)
    spec = ComplexTensor(Tensor(rng.standard_normal(shape)), Tensor(rng.standard_normal(shape)))
    proj = Linear(8, TINY_STFT.n_bins, rng)
    proj.bias.data[...] = 0
    fused = fuse_vocal(spec, VocalEmbedding(Tensor(np.zeros(8))), proj)
    assert fused.shape == (1, 2, TINY_STFT.n_bins, 10)
    assert not fused.real.data[:, 1].any()
    assert not fused.imag.data[:, 1].any()
    np.testing.assert_array_equal(fused.real.data[:, 0], spec.real.data[:, 0])


def test_unbatched_fuse_keeps_rank(rng):
    spec = ComplexTensor(Tensor(rng.standard_normal((1, TINY_STFT.n_bins, 4))),
                         Tensor(rng.standard_normal((1, TINY_STFT.n_bins, 4))))
    proj = Linear(8, TINY_STFT.n_bins, rng)
    fused = fuse_vocal(spec, VocalEmbedding(Tensor(rng.standard_normal(8))), proj)
    assert fused.shape == (2, TINY_STFT.n_bins, 4)
    column = fused.real.data[1, :, 0]
    np.testing.assert_array_equal(fused.real.data[1], np.repeat(column[:, None], 4, axis=1))


def test_projection_must_match_bins_and_embedding(rng):
    spec = _zeros(4)
    with pytest.raises(ContractError):
        fuse_vocal(spec, VocalEmbedding(Tensor(np.zeros(8))), Linear(8, TINY_STFT.n_bins + 1, rng))
    with pytest.raises(ContractError):
        fuse_vocal(spec, VocalEmbedding(Tensor(np.zeros(6))), Linear(8, TINY_STFT.n_bins, rng))


def test_similarity_proxy_properties(encoder, speech, rng):
    cfg = tiny_config()
    other = Waveform(0.2 * rng.standard_normal(len(speech)))
    flipped = Waveform(-speech.samples)
    assert simi_proxy(speech, speech, encoder, cfg) == pytest.approx(1.0, abs=1e-6)
    assert simi_proxy(speech, flipped, encoder, cfg) == pytest.approx(1.0, abs=1e-5)
    ab = simi_proxy(speech, other, encoder, cfg)
    assert ab == pytest.approx(simi_proxy(other, speech, encoder, cfg), abs=1e-9)
    assert -1.0 <= ab <= 1.0


def test_gradient_reaches_first_tdnn_layer(encoder, speech):
    spec = spectrogram_to_tensor(stft(speech, TINY_STFT))
    e = vocal_embed(spec, encoder)
    (e.vector * Tensor(np.linspace(-1, 1, encoder.dim))).sum().backward()
    assert np.abs(encoder.tdnn.layers[0].weight.grad).sum() > 0


def test_embedding_is_stable_under_duplication_and_shift(encoder, speech, rng):
    doubled = Waveform(np.concatenate([speech.samples, speech.samples]))
    shifted = Waveform(np.roll(speech.samples, 64))
    noise = Waveform(0.2 * rng.standard_normal(len(speech)))
    to_noise = simi_proxy(speech, noise, encoder, encoder.cfg)
    for variant in (doubled, shifted):
        simi = simi_proxy(speech, variant, encoder, encoder.cfg)
        assert simi >= 0.95
        assert simi > to_noise
