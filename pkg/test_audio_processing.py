import numpy as np
import pytest
from scipy.io import wavfile

from audio_processing import AudioProcessor, mix_at_snr, read_wav, write_wav
from dsp import Waveform
from errors import FormatError, InputError


def test_wav_round_trip_is_within_one_quantization_step(tmp_path, rng):
    x = np.clip(0.3 * rng.standard_normal(4000), -0.99, 0.99)
    path = str(tmp_path / 'x.wav')
    write_wav(path, Waveform(x))
    back = read_wav(path)
    assert back.sample_rate_hz == 16000
    assert len(back) == 4000
    assert np.max(np.abs(back.samples - x)) <= 1 / 32768
    assert AudioProcessor.get_audio_duration(path) == pytest.approx(0.25)


def test_full_scale_is_clipped_to_pcm_range(tmp_path):
    path = str(tmp_path / 'loud.wav')
    write_wav(path, Waveform(np.array([1.5, -1.5, 0.0])))
    _, data = wavfile.read(path)
    assert data.tolist() == [32767, -32768, 0]


def test_unsupported_formats_name_every_problem(tmp_path):
    path = str(tmp_path / 'cd.wav')
    wavfile.write(path, 44100, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(FormatError) as err:
        read_wav(path)
    assert 'sample rate 44100' in str(err.value)
    assert 'channels 2' in str(err.value)

    float_path = str(tmp_path / 'float.wav')
    wavfile.write(float_path, 16000, np.zeros(100, dtype=np.float32))
    with pytest.raises(FormatError, match='sample format'):
        read_wav(float_path)


def test_unreadable_files(tmp_path):
    with pytest.raises(InputError):
        read_wav(str(tmp_path / 'missing.wav'))
    garbage = tmp_path / 'garbage.wav'
    garbage.write_bytes(b'not a riff file at all')
    with pytest.raises(FormatError):
        read_wav(str(garbage))


def test_allowed_file():
    assert AudioProcessor.allowed_file('a.WAV')
    assert not AudioProcessor.allowed_file('a.mp3')
    assert not AudioProcessor.allowed_file('wav')


def test_gain_for_equal_power_at_zero_db():
    clean = Waveform(0.1 * np.array([1.0, -1.0] * 50))
    noise = Waveform(0.1 * np.array([1.0, 1.0, -1.0, -1.0] * 25))
    result = mix_at_snr(clean, noise, 0.0)
    assert result.gain == pytest.approx(1.0)
    assert mix_at_snr(clean, noise, 20.0).gain == pytest.approx(0.1)


@pytest.mark.parametrize('draw', range(100))
def test_achieved_snr_matches_request(draw):
    rng = np.random.default_rng(draw)
    snr = float(rng.uniform(-15.0, 5.0))
    clean = Waveform(rng.uniform(0.05, 0.5) * rng.standard_normal(3000))
    noise = Waveform(rng.uniform(0.05, 0.5) * rng.standard_normal(int(rng.integers(1000, 6000))))
    result = mix_at_snr(clean, noise, snr, rng)
    achieved = 10 * np.log10(np.mean(result.clean ** 2) / np.mean((result.noisy - result.clean) ** 2))
    assert achieved == pytest.approx(snr, abs=1e-6)
    assert result.achieved_snr_db == pytest.approx(snr, abs=1e-6)
    assert np.max(np.abs(result.noisy)) <= 1.0


def test_clipping_mixture_is_rescaled_without_changing_snr(rng):
    clean = Waveform(0.9 * np.sin(np.linspace(0, 40 * np.pi, 2000)))
    noise = Waveform(rng.standard_normal(2000))
    result = mix_at_snr(clean, noise, -5.0, np.random.default_rng(2))
    assert result.rescale < 1.0
    assert np.max(np.abs(result.noisy)) == pytest.approx(0.99)
    assert result.achieved_snr_db == pytest.approx(-5.0, abs=1e-6)


def test_short_noise_is_tiled():
    clean = Waveform(np.ones(10) * 0.1)
    noise = Waveform(np.array([0.1, 0.2, 0.3]))
    result = mix_at_snr(clean, noise, 0.0, np.random.default_rng(0))
    assert result.noise.shape == (10,)
    scaled = result.noise / result.gain
    np.testing.assert_allclose(scaled[3:], scaled[:-3], atol=1e-7)


def test_degenerate_mixing_inputs():
    with pytest.raises(InputError):
        mix_at_snr(Waveform(np.zeros(10)), Waveform(np.ones(10)), 0.0)
    with pytest.raises(InputError):
        mix_at_snr(Waveform(np.ones(10)), Waveform(np.zeros(10)), 0.0)
    with pytest.raises(InputError):
        mix_at_snr(Waveform(np.ones(10)), Waveform(np.ones(10), sample_rate_hz=8000), 0.0)
