from dataclasses import replace

import numpy as np
import pytest

from autodiff import ComplexTensor, Tensor
from config import ModelConfig, PLACEMENTS
from conftest import tiny_config
from dsp import ComplexSpectrogram, Waveform
from errors import ContractError, DimensionError
from losses import training_loss
from metrics import si_snr_db
from models import (ComplexRatioMask, MVNet, apply_crm, bound_mask, encoder_freq_sizes, init_params,
                    oracle_mask, parameter_count)


@pytest.fixture
def short(speech) -> Waveform:
    return Waveform(speech.samples[:2000])


@pytest.fixture
def model(tiny_cfg) -> MVNet:
    return MVNet(tiny_cfg).eval()


def test_frequency_plan(tiny_cfg):
    assert encoder_freq_sizes(tiny_cfg) == (33, 17, 9)
    assert encoder_freq_sizes(ModelConfig()) == (257, 129, 65, 33, 17)


def test_output_keeps_input_length(model, short):
    enhanced, mask = model.forward(short)
    assert len(enhanced) == len(short)
    assert mask.real.shape[0] == 33
    assert np.all(np.isfinite(enhanced.samples))


def test_inference_is_deterministic(model, short):
    a, _ = model.forward(short)
    b, _ = model.forward(short)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_identity_mask_reconstructs_input(model, speech):
    enhanced, mask = model.forward(speech, mask_override='identity')
    np.testing.assert_array_equal(mask.real, 1.0)
    assert si_snr_db(enhanced, speech) > 40


def test_oracle_mask_recovers_clean_speech(model, speech, rng):
    noise = rng.standard_normal(len(speech))
    noise *= np.sqrt(np.mean(speech.samples ** 2) / np.mean(noise ** 2))
    noisy = Waveform(speech.samples + noise)
    mask = oracle_mask(speech, noisy, model.cfg)
    enhanced, _ = model.forward(noisy, mask_override=mask)
    assert si_snr_db(noisy, speech) < 1
    assert si_snr_db(enhanced, speech) > 15


def test_override_must_fit_the_spectrum(model, short):
    with pytest.raises(DimensionError):
        model.forward(short, mask_override=ComplexRatioMask(np.ones((5, 5)), np.zeros((5, 5))))
    with pytest.raises(ContractError):
        model.forward(short, mask_override='zero')


def test_batch_input_must_be_two_dimensional(model, short):
    with pytest.raises(DimensionError):
        model(short.samples)


def test_apply_crm_complex_multiplication(rng):
    shape = (33, 10)
    spec = ComplexSpectrogram(rng.standard_normal(shape), rng.standard_normal(shape))
    same = apply_crm(spec, ComplexRatioMask.identity(shape))
    np.testing.assert_allclose(same.real, spec.real, atol=1e-6)
    silent = apply_crm(spec, ComplexRatioMask(np.zeros(shape), np.zeros(shape)))
    assert not silent.real.any() and not silent.imag.any()
    rotated = apply_crm(spec, ComplexRatioMask(np.zeros(shape), np.ones(shape)))
    np.testing.assert_allclose(rotated.real, -spec.imag, atol=1e-6)
    np.testing.assert_allclose(rotated.imag, spec.real, atol=1e-6)
    with pytest.raises(DimensionError):
        apply_crm(spec, ComplexRatioMask.identity((33, 11)))


def test_tanh_bounding_limits_magnitude(rng):
    raw = ComplexTensor(Tensor(10 * rng.standard_normal((2, 5, 7))), Tensor(10 * rng.standard_normal((2, 5, 7))))
    bounded = bound_mask(raw, 'tanh_mag')
    magnitude = np.hypot(bounded.real.data, bounded.imag.data)
    assert magnitude.max() <= 1.0 + 1e-6
    phase_in = np.angle(raw.real.data + 1j * raw.imag.data)
    phase_out = np.angle(bounded.real.data + 1j * bounded.imag.data)
    np.testing.assert_allclose(phase_out, phase_in, atol=1e-4)
    assert bound_mask(raw, 'unbounded') is raw

    spec = ComplexSpectrogram(np.ones((3, 2)), np.zeros((3, 2)))
    big = apply_crm(spec, ComplexRatioMask(np.full((3, 2), 5.0), np.zeros((3, 2))), 'tanh_mag')
    np.testing.assert_allclose(big.real, np.tanh(5.0), atol=1e-6)


def test_initialization_is_seeded(tiny_cfg):
    a, b = init_params(tiny_cfg, 7), init_params(tiny_cfg, 7)
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])
    c = init_params(tiny_cfg, 8)
    assert any(not np.array_equal(a[name], c[name]) for name in a)


def test_default_model_is_small():
    assert parameter_count(ModelConfig()) < 2_000_000


def test_parameter_count_follows_channel_plan():
    base = ModelConfig()
    wider = replace(base, encoder_channels=(8, 17, 32, 32))
    c0, _, c2, _ = base.encoder_channels
    assert parameter_count(wider) - parameter_count(base) == 60 * c0 + 60 * c2 + 14 == 2414


def test_vocal_branch_influences_output(tiny_cfg, short):
    model = MVNet(tiny_cfg).eval()
    before, _ = model.forward(short)
    model.vocal_proj.bias.data[...] += 1.0
    after, _ = model.forward(short)
    assert not np.allclose(before.samples, after.samples)


def test_variant_without_vocal_branch(tiny_cfg, short):
    model = MVNet(tiny_cfg.with_variant('dccrn')).eval()
    assert not hasattr(model, 'vocal')
    enhanced, _ = model.forward(short)
    assert len(enhanced) == len(short)


@pytest.mark.parametrize('placement', PLACEMENTS)
def test_every_placement_trains(placement, speech, rng):
    model = MVNet(tiny_config(attention=placement)).train()
    clean = np.stack([speech.samples[:1500], speech.samples[2000:3500]])
    noisy = clean + 0.1 * rng.standard_normal(clean.shape).astype(np.float32)
    enhanced, mask = model(noisy)
    assert enhanced.shape == clean.shape
    assert mask.shape[0] == 2
    training_loss('joint', enhanced, clean).backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name
        assert np.all(np.isfinite(p.grad)), name
