"""
MVNet assembly and model management

noisy waveform -> STFT -> (vocal fusion) -> complex encoder -> memory
assistance -> complex decoder with skip concatenation -> complex ratio mask
-> masked spectrum -> overlap-add resynthesis.
"""
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple, Union

import numpy as np

import autodiff as ad
from autodiff import ComplexTensor, Module, ModuleList, Tensor, no_grad
from complex_nn import (ComplexBatchNorm, ComplexConv2d, ComplexConvTranspose2d, ComplexPReLU,
                        Linear)
from config import ModelConfig
from dsp import (ComplexSpectrogram, Waveform, istft_tensor, pad_for_analysis, stft)
from errors import ContractError, DimensionError
from memory_assistance import MemoryAssistanceBlock
from vocal_reinforcement import VocalEncoder, fuse_vocal, vocal_embed

MASK_EPS = 1e-8
ORACLE_EPS = 1e-8


@dataclass
class ComplexRatioMask:
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float32)
        self.imag = np.asarray(self.imag, dtype=np.float32)
        if self.real.shape != self.imag.shape:
            raise DimensionError(f"mask parts differ in shape: {self.real.shape} / {self.imag.shape}")

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real.astype(np.float64), self.imag.astype(np.float64))

    @classmethod
    def identity(cls, shape) -> 'ComplexRatioMask':
        return cls(np.ones(shape), np.zeros(shape))


class EncoderBlock(Module):
    """Strided complex conv (causal in time) -> complex BN -> complex PReLU"""

    def __init__(self, in_channels: int, out_channels: int, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        kf, kt = cfg.kernel
        self.conv = ComplexConv2d(in_channels, out_channels, cfg.kernel, rng,
                                  stride=cfg.stride, padding=(kf // 2, kt - 1))
        self.bn = ComplexBatchNorm(out_channels, cfg.bn_mode, cfg.bn_momentum, cfg.bn_eps)
        self.act = ComplexPReLU(cfg.prelu_init)

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        n_frames = x.shape[-1]
        y = self.conv(x).slice(-1, 0, n_frames)
        return self.act(self.bn(y))


class DecoderBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, cfg: ModelConfig,
                 rng: np.random.Generator, last: bool = False):
        super().__init__()
        kf, _ = cfg.kernel
        self.last = last
        self.deconv = ComplexConvTranspose2d(in_channels, out_channels, cfg.kernel, rng,
                                             stride=cfg.stride, padding=(kf // 2, 0))
        if not last:
            self.bn = ComplexBatchNorm(out_channels, cfg.bn_mode, cfg.bn_momentum, cfg.bn_eps)
            self.act = ComplexPReLU(cfg.prelu_init)

    def __call__(self, x: ComplexTensor, n_bins: int) -> ComplexTensor:
        n_frames = x.shape[-1]
        y = _fit_freq(self.deconv(x).slice(-1, 0, n_frames), n_bins)
        if self.last:
            return y
        return self.act(self.bn(y))


def _fit_freq(x: ComplexTensor, n_bins: int) -> ComplexTensor:
    current = x.shape[-2]
    if current > n_bins:
        return x.slice(-2, 0, n_bins)
    if current < n_bins:
        widths = [(0, 0)] * (len(x.shape) - 2) + [(0, n_bins - current), (0, 0)]
        return x.pad(widths)
    return x


def encoder_freq_sizes(cfg: ModelConfig) -> Tuple[int, ...]:
    """Frequency extent entering the first encoder block, then after each block"""
    kf, _ = cfg.kernel
    sf, _ = cfg.stride
    sizes = [cfg.stft.n_bins]
    for _ in cfg.encoder_channels:
        sizes.append((sizes[-1] + 2 * (kf // 2) - kf) // sf + 1)
    return tuple(sizes)


def bound_mask(raw: ComplexTensor, bounding: str) -> ComplexTensor:
    """tanh_mag rescales the raw mask to magnitude tanh(|m|), keeping its phase"""
    if bounding == 'unbounded':
        return raw
    mag = ad.sqrt(ad.square(raw.real) + ad.square(raw.imag) + MASK_EPS)
    scale = ad.tanh(mag) / mag
    return ComplexTensor(raw.real * scale, raw.imag * scale)


class MVNet(Module):
    def __init__(self, cfg: ModelConfig = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        channels = tuple(cfg.encoder_channels)
        depth = len(channels)
        self.freq_sizes = encoder_freq_sizes(cfg)

        in_channels = 1
        if cfg.use_vocal:
            self.vocal = VocalEncoder(cfg, rng)
            self.vocal_proj = Linear(cfg.scaled_embedding_dim, cfg.stft.n_bins, rng)
            in_channels = 2

        self.encoders = ModuleList()
        for i, out_channels in enumerate(channels):
            self.encoders.append(EncoderBlock(in_channels if i == 0 else channels[i - 1],
                                              out_channels, cfg, rng))
        self.bottleneck = MemoryAssistanceBlock(cfg, channels[-1], self.freq_sizes[-1], rng)
        self.decoders = ModuleList()
        for i in range(depth):
            last = i == depth - 1
            self.decoders.append(DecoderBlock(2 * channels[depth - 1 - i],
                                              1 if last else channels[depth - 2 - i], cfg, rng, last))

    def estimate_mask(self, x: ComplexTensor) -> ComplexTensor:
        """[N, C_in, F, T] network input -> raw mask [N, F, T]"""
        skips = []
        for block in self.encoders:
            x = block(x)
            skips.append(x)
        x = self.bottleneck(x)
        depth = len(self.decoders)
        for i, block in enumerate(self.decoders):
            if i > 0:
                x = ComplexTensor.concat([x, skips[depth - 1 - i]], axis=1)
            x = block(x, self.freq_sizes[depth - 1 - i])
        return x.reshape((x.shape[0],) + x.shape[2:])

    def __call__(self, noisy: np.ndarray, mask_override: Union[ComplexRatioMask, str, None] = None
                 ) -> Tuple[Tensor, ComplexTensor]:
        """Enhance a batch [N, L]; returns (enhanced [N, L], mask [N, F, T]) as graph tensors"""
        noisy = np.asarray(noisy, dtype=np.float32)
        if noisy.ndim != 2:
            raise DimensionError(f"expected a batch [N, L], got shape {noisy.shape}")
        length = noisy.shape[1]
        padded, front = pad_for_analysis(noisy, self.cfg.stft)
        spec = _analyze(padded, self.cfg)

        if mask_override is not None:
            mask = _override(mask_override, spec.shape)
        else:
            x = spec.reshape((spec.shape[0], 1) + spec.shape[1:])
            if self.cfg.use_vocal:
                x = fuse_vocal(x, vocal_embed(spec, self.vocal), self.vocal_proj)
            mask = bound_mask(self.estimate_mask(x), self.cfg.mask_bounding)

        enhanced = istft_tensor(mask * spec, self.cfg.stft)
        return ad.slice_(enhanced, 1, front, front + length), mask

    def forward(self, noisy: Waveform, mask_override: Union[ComplexRatioMask, str, None] = None
                ) -> Tuple[Waveform, ComplexRatioMask]:
        """Single-utterance inference without graph construction"""
        with no_grad():
            enhanced, mask = self(noisy.samples[None], mask_override)
        return (Waveform(enhanced.data[0], noisy.sample_rate_hz),
                ComplexRatioMask(mask.real.data[0], mask.imag.data[0]))


def _analyze(padded: np.ndarray, cfg: ModelConfig) -> ComplexTensor:
    spectra = [stft(row, cfg.stft) for row in padded]
    return ComplexTensor(Tensor(np.stack([s.real for s in spectra])),
                         Tensor(np.stack([s.imag for s in spectra])))


def _override(mask: Union[ComplexRatioMask, str], shape) -> ComplexTensor:
    if isinstance(mask, str):
        if mask != 'identity':
            raise ContractError(f"unknown mask override '{mask}'")
        mask = ComplexRatioMask.identity(shape[1:])
    real, imag = mask.real, mask.imag
    if real.shape == tuple(shape[1:]):
        real, imag = real[None], imag[None]
    if real.shape[1:] != tuple(shape[1:]):
        raise DimensionError(f"mask of shape {mask.real.shape} does not fit spectrum {shape}")
    return ComplexTensor(Tensor(np.broadcast_to(real, shape)), Tensor(np.broadcast_to(imag, shape)))


def apply_crm(spec: ComplexSpectrogram, mask: ComplexRatioMask,
              bounding: str = 'unbounded') -> ComplexSpectrogram:
    """Complex multiply (M_r + i M_i)(Y_r + i Y_i); tanh_mag first maps the mask to tanh(|m|) e^(i angle m)"""
    if spec.real.shape != mask.real.shape:
        raise DimensionError(f"mask {mask.real.shape} and spectrogram {spec.real.shape} differ")
    m = mask.real.astype(np.float64) + 1j * mask.imag.astype(np.float64)
    if bounding == 'tanh_mag':
        mag = np.abs(m)
        m = np.tanh(mag) * np.exp(1j * np.angle(m))
    out = m * spec.to_complex()
    return ComplexSpectrogram(out.real, out.imag, spec.config)


def oracle_mask(clean: Waveform, noisy: Waveform, cfg: ModelConfig) -> ComplexRatioMask:
    """S_clean / S_noisy as conj(Y) S / (|Y|^2 + eps), on the model's padded framing"""
    if len(clean) != len(noisy):
        raise DimensionError(f"clean ({len(clean)}) and noisy ({len(noisy)}) lengths differ")
    s = stft(pad_for_analysis(clean.samples, cfg.stft)[0], cfg.stft)
    y = stft(pad_for_analysis(noisy.samples, cfg.stft)[0], cfg.stft)
    power = y.real.astype(np.float64) ** 2 + y.imag.astype(np.float64) ** 2 + ORACLE_EPS
    real = (y.real * s.real + y.imag * s.imag) / power
    imag = (y.real * s.imag - y.imag * s.real) / power
    return ComplexRatioMask(real, imag)


def init_params(cfg: ModelConfig, seed: int) -> Dict[str, np.ndarray]:
    return MVNet(replace(cfg, seed=seed)).state_dict()


def parameter_count(cfg: ModelConfig) -> int:
    return MVNet(cfg).parameter_count()


class ModelManager:
    """Load checkpoints once and serve the cached models"""

    def __init__(self):
        self.model_cache: Dict[str, MVNet] = {}

    def get_model(self, ckpt_path: str) -> MVNet:
        from checkpoint import load_checkpoint

        if ckpt_path not in self.model_cache:
            print(f"Loading MVNet checkpoint '{ckpt_path}'...")
            model = load_checkpoint(ckpt_path).model
            model.eval()
            self.model_cache[ckpt_path] = model
            print(f"✅ Model loaded ({model.parameter_count()} parameters)")
        return self.model_cache[ckpt_path]

    def clear_cache(self, ckpt_path: Optional[str] = None):
        """Clear specific or all cached models"""
        if ckpt_path:
            if ckpt_path in self.model_cache:
                del self.model_cache[ckpt_path]
                print(f"✅ Cleared {ckpt_path} from cache")
        else:
            self.model_cache.clear()
            print("✅ Cleared all models from cache")


# Global model manager instance
model_manager = ModelManager()
