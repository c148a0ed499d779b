"""
STFT analysis / synthesis frontend

Frames start at sample 0 (no center padding), the window is a periodic Hann,
and synthesis is weighted overlap-add normalized by the summed squared window.
"""
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy.signal import get_window

from autodiff import ComplexTensor, Tensor
from config import Config, StftConfig
from errors import ContractError, DimensionError, InputError

# overlap-add envelope values below this are treated as "no support"
_ENVELOPE_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = Config.SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate_hz <= 0:
            raise InputError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass
class ComplexSpectrogram:
    real: np.ndarray
    imag: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float32)
        self.imag = np.asarray(self.imag, dtype=np.float32)
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise DimensionError(
                f"spectrogram parts must be equal [F, T] arrays, got {self.real.shape} / {self.imag.shape}")

    @property
    def n_frames(self) -> int:
        return self.real.shape[1]

    def to_complex(self) -> np.ndarray:
        return self.real.astype(np.float64) + 1j * self.imag.astype(np.float64)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.to_complex())


def analysis_window(cfg: StftConfig) -> np.ndarray:
    """Periodic window of length win_length"""
    return get_window(cfg.window, cfg.win_length, fftbins=True).astype(np.float64)


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    if n_samples < cfg.win_length:
        raise InputError(f"signal of {n_samples} samples is shorter than one frame ({cfg.win_length})")
    return 1 + (n_samples - cfg.win_length) // cfg.hop_length


def synthesis_length(n_frames: int, cfg: StftConfig) -> int:
    return cfg.win_length + cfg.hop_length * (n_frames - 1)


def _frame_index(n_frames: int, cfg: StftConfig) -> np.ndarray:
    return np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]


def overlap_add_envelope(n_frames: int, cfg: StftConfig) -> np.ndarray:
    """Sum over frames of window^2 shifted by the hop"""
    window = analysis_window(cfg)
    envelope = np.zeros(synthesis_length(n_frames, cfg))
    np.add.at(envelope, _frame_index(n_frames, cfg), window * window)
    return envelope


def stft(w, cfg: StftConfig = None) -> ComplexSpectrogram:
    """One-sided STFT of a Waveform (or a 1-D array)"""
    cfg = cfg or StftConfig()
    cfg.validate()
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float32).reshape(-1)
    n_frames = frame_count(samples.shape[0], cfg)
    frames = samples.astype(np.float64)[_frame_index(n_frames, cfg)] * analysis_window(cfg)
    spectrum = sp_fft.rfft(frames, n=cfg.fft_size, axis=1).T
    return ComplexSpectrogram(spectrum.real, spectrum.imag, cfg)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add resynthesis; samples without window support come out as zero"""
    cfg = s.config
    cfg.validate()
    if s.real.shape[0] != cfg.n_bins:
        raise InputError(f"spectrogram has {s.real.shape[0]} bins, config expects {cfg.n_bins}")
    n_frames = s.n_frames
    frames = sp_fft.irfft(s.to_complex(), n=cfg.fft_size, axis=0)[:cfg.win_length].T
    frames = frames * analysis_window(cfg)
    out = np.zeros(synthesis_length(n_frames, cfg))
    np.add.at(out, _frame_index(n_frames, cfg), frames)
    envelope = overlap_add_envelope(n_frames, cfg)
    supported = envelope > _ENVELOPE_FLOOR
    out[supported] /= envelope[supported]
    out[~supported] = 0.0
    return Waveform(out.astype(np.float32))


def istft_tensor(spec: ComplexTensor, cfg: StftConfig) -> Tensor:
    """Differentiable overlap-add resynthesis

    spec parts are [N, F, T] (or [F, T]); returns [N, L] (or [L]) with
    L = win_length + hop_length * (T - 1).
    """
    real, imag = spec.real, spec.imag
    squeeze = real.ndim == 2
    if real.ndim not in (2, 3):
        raise DimensionError(f"istft_tensor expects [N, F, T] or [F, T], got {real.shape}")
    if real.shape[-2] != cfg.n_bins:
        raise InputError(f"spectrogram has {real.shape[-2]} bins, config expects {cfg.n_bins}")
    re = real.data if not squeeze else real.data[None]
    im = imag.data if not squeeze else imag.data[None]
    n, _, n_frames = re.shape
    n_fft, win, hop = cfg.fft_size, cfg.win_length, cfg.hop_length
    dtype = re.dtype
    window = analysis_window(cfg)
    index = _frame_index(n_frames, cfg)
    length = synthesis_length(n_frames, cfg)
    envelope = overlap_add_envelope(n_frames, cfg)
    supported = envelope > _ENVELOPE_FLOOR
    inv_envelope = np.where(supported, 1.0 / np.where(supported, envelope, 1.0), 0.0)

    frames = sp_fft.irfft(re + 1j * im, n=n_fft, axis=1)[:, :win, :]  # [N, win, T]
    frames = np.transpose(frames, (0, 2, 1)) * window  # [N, T, win]
    out = np.zeros((n, length))
    for t in range(n_frames):
        out[:, t * hop:t * hop + win] += frames[:, t]
    out = (out * inv_envelope).astype(dtype)

    # irfft(X)[k] = (1/n) sum_m c_m (Re X_m cos - Im X_m sin), c_m = 1 at DC / Nyquist else 2
    weights = np.full(cfg.n_bins, 2.0 / n_fft)
    weights[0] = 1.0 / n_fft
    if n_fft % 2 == 0:
        weights[-1] = 1.0 / n_fft

    def backward(g):
        g = g if not squeeze else g[None]
        gy = g * inv_envelope
        g_frames = gy[:, index] * window  # [N, T, win]
        spectrum = sp_fft.rfft(g_frames, n=n_fft, axis=2)  # [N, T, F]
        spectrum = np.transpose(spectrum, (0, 2, 1)) * weights[None, :, None]
        g_re = spectrum.real
        g_im = spectrum.imag
        g_im[:, 0, :] = 0.0
        if n_fft % 2 == 0:
            g_im[:, -1, :] = 0.0
        if squeeze:
            g_re, g_im = g_re[0], g_im[0]
        return g_re.astype(real.dtype), g_im.astype(imag.dtype)

    return Tensor.from_op(out[0] if squeeze else out, (real, imag), backward, 'istft')


def edge_padding(n_samples: int, cfg: StftConfig) -> Tuple[int, int]:
    """(front, back) zero padding giving every sample full overlap-add support

    The front margin is win_length - hop_length; the back margin extends the
    signal to a frame boundary at least the same margin past the last sample.
    """
    margin = cfg.win_length - cfg.hop_length
    needed = margin + n_samples + margin
    n_frames = 1 + max(0, math.ceil((needed - cfg.win_length) / cfg.hop_length))
    total = synthesis_length(n_frames, cfg)
    return margin, total - margin - n_samples


def pad_for_analysis(samples: np.ndarray, cfg: StftConfig) -> Tuple[np.ndarray, int]:
    front, back = edge_padding(samples.shape[-1], cfg)
    widths = [(0, 0)] * (samples.ndim - 1) + [(front, back)]
    return np.pad(samples, widths), front


def spectrogram_to_tensor(s: ComplexSpectrogram, requires_grad: bool = False) -> ComplexTensor:
    """[F, T] spectrogram -> ComplexTensor [1, F, T]"""
    return ComplexTensor(Tensor(s.real[None], requires_grad=requires_grad),
                         Tensor(s.imag[None], requires_grad=requires_grad))


def tensor_to_spectrogram(t: ComplexTensor, cfg: StftConfig = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    shape = t.shape
    if len(shape) == 3 and shape[0] == 1:
        real, imag = t.real.data[0], t.imag.data[0]
    elif len(shape) == 2:
        real, imag = t.real.data, t.imag.data
    else:
        raise ContractError(f"expected a [1, F, T] or [F, T] tensor, got {shape}")
    if real.shape[0] != cfg.n_bins:
        raise ContractError(f"tensor has {real.shape[0]} bins, config expects {cfg.n_bins}")
    return ComplexSpectrogram(real.copy(), imag.copy(), cfg)
