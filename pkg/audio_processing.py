"""
Audio processing utilities: PCM16 WAV I/O and SNR-controlled mixing
"""
import os
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.io import wavfile

from config import Config
from dsp import Waveform
from errors import FormatError, InputError


@dataclass
class MixResult:
    """Outputs of one mixing job, float64, all on the same (possibly rescaled) scale"""
    clean: np.ndarray
    noise: np.ndarray        # gain-scaled noise actually added
    noisy: np.ndarray
    gain: float
    rescale: float = 1.0     # common factor applied when the mixture clipped
    offset: int = 0          # start of the noise excerpt

    @property
    def achieved_snr_db(self) -> float:
        return float(10 * np.log10(np.mean(self.clean ** 2) / np.mean(self.noise ** 2)))


class AudioProcessor:
    """Handle audio file operations"""

    @staticmethod
    def allowed_file(filename: str) -> bool:
        """Check if file extension is allowed"""
        return '.' in filename and \
               filename.rsplit('.', 1)[1].lower() in Config.ALLOWED_EXTENSIONS

    @staticmethod
    def read_wav(path: str) -> Waveform:
        """Read a RIFF/WAVE PCM16 mono 16 kHz file scaled to [-1, 1)"""
        try:
            rate, data = wavfile.read(path)
        except FileNotFoundError:
            raise InputError(f"{path}: no such file") from None
        except (ValueError, OSError) as e:
            raise FormatError(f"{path}: not a readable RIFF/WAVE file ({e})") from None

        problems = []
        if rate != Config.SAMPLE_RATE:
            problems.append(f"sample rate {rate} Hz (expected {Config.SAMPLE_RATE})")
        if data.ndim != 1:
            problems.append(f"channels {data.shape[1]} (expected mono)")
        if data.dtype != np.int16:
            problems.append(f"sample format {data.dtype} (expected PCM 16-bit)")
        if problems:
            raise FormatError(f"{path}: unsupported " + ', '.join(problems))
        return Waveform(data.astype(np.float32) / Config.PCM_SCALE, rate)

    @staticmethod
    def write_wav(path: str, w: Waveform):
        """Quantize to PCM16 (round half to even) and write atomically"""
        ints = np.clip(np.rint(w.samples.astype(np.float64) * Config.PCM_SCALE), -32768, 32767)
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, suffix='.wav.tmp')
        os.close(fd)
        try:
            wavfile.write(tmp_path, w.sample_rate_hz, ints.astype('<i2'))
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise

    @staticmethod
    def fit_noise(noise: np.ndarray, length: int, rng: np.random.Generator):
        """Excerpt `length` samples of noise; shorter noise is tiled circularly from a random offset"""
        if noise.shape[0] >= length:
            offset = int(rng.integers(0, noise.shape[0] - length + 1))
            return noise[offset:offset + length], offset
        offset = int(rng.integers(0, noise.shape[0]))
        return noise[(offset + np.arange(length)) % noise.shape[0]], offset

    @staticmethod
    def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float,
                   rng: Optional[np.random.Generator] = None,
                   peak_target: float = Config.PEAK_TARGET) -> MixResult:
        """noisy = clean + g * noise with g chosen so the mixture has the requested SNR

        Powers are mean squares over the mixed extent. When the mixture peaks
        above 1.0, clean, scaled noise and mixture are all rescaled by the same
        factor, which leaves the SNR unchanged.
        """
        if clean.sample_rate_hz != noise.sample_rate_hz:
            raise InputError(
                f"sample rates differ: clean {clean.sample_rate_hz} Hz, noise {noise.sample_rate_hz} Hz")
        rng = rng if rng is not None else np.random.default_rng(0)
        clean_x = clean.samples.astype(np.float64)
        noise_x, offset = AudioProcessor.fit_noise(noise.samples.astype(np.float64), len(clean_x), rng)
        p_clean = np.mean(clean_x ** 2)
        p_noise = np.mean(noise_x ** 2)
        if p_clean == 0:
            raise InputError("clean signal is silent")
        if p_noise == 0:
            raise InputError("noise signal is silent")

        gain = float(np.sqrt(p_clean / (p_noise * 10 ** (snr_db / 10))))
        scaled = gain * noise_x
        noisy = clean_x + scaled
        rescale = 1.0
        peak = np.max(np.abs(noisy))
        if peak > 1.0:
            rescale = peak_target / peak
            clean_x, scaled, noisy = clean_x * rescale, scaled * rescale, noisy * rescale
        return MixResult(clean_x, scaled, noisy, gain, rescale, offset)

    @staticmethod
    def get_audio_duration(audio_path: str) -> float:
        """Get duration of audio file in seconds"""
        return AudioProcessor.read_wav(audio_path).duration


read_wav = AudioProcessor.read_wav
write_wav = AudioProcessor.write_wav
mix_at_snr = AudioProcessor.mix_at_snr
