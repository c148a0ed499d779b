"""
Vocal reinforcement branch

A small x-vector style TDNN turns the noisy log-magnitude spectrum into an
utterance-level embedding. The embedding is projected to one value per
frequency bin and appended to the network input as an extra channel.
"""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cosine

import autodiff as ad
from autodiff import ComplexTensor, Module, ModuleList, Tensor, no_grad
from complex_nn import Conv1d, Linear, PReLU
from config import ModelConfig
from dsp import ComplexSpectrogram, Waveform, spectrogram_to_tensor, stft
from errors import ContractError, DomainError, InputError

# (kernel, dilation) per TDNN layer
TDNN_CONTEXTS = ((5, 1), (3, 2), (3, 3), (1, 1), (1, 1))
LOG_FLOOR = 1e-6


def tdnn_context(contexts=TDNN_CONTEXTS) -> int:
    """Frames one output frame of the stack depends on"""
    return 1 + sum((k - 1) * d for k, d in contexts)


@dataclass
class VocalEmbedding:
    vector: Tensor
    source: Optional[str] = None

    def numpy(self) -> np.ndarray:
        return self.vector.data


class TdnnStack(Module):
    def __init__(self, n_bins: int, channels, rng: np.random.Generator, prelu_init: float = 0.25):
        super().__init__()
        if len(channels) != len(TDNN_CONTEXTS):
            raise ContractError(f"TDNN needs {len(TDNN_CONTEXTS)} channel entries, got {len(channels)}")
        self.layers = ModuleList()
        self.activations = ModuleList()
        in_channels = n_bins
        for out_channels, (kernel, dilation) in zip(channels, TDNN_CONTEXTS):
            self.layers.append(Conv1d(in_channels, out_channels, kernel, rng, dilation=dilation))
            self.activations.append(PReLU(prelu_init))
            in_channels = out_channels
        self.out_channels = in_channels

    def __call__(self, x: Tensor) -> Tensor:
        for layer, act in zip(self.layers, self.activations):
            x = act(layer(x))
        return x


class VocalEncoder(Module):
    """TDNN -> mean || std pooling -> linear -> PReLU -> linear"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        dim = cfg.scaled_embedding_dim
        self.tdnn = TdnnStack(cfg.stft.n_bins, cfg.scaled_tdnn_channels, rng, cfg.prelu_init)
        self.lin1 = Linear(2 * self.tdnn.out_channels, dim, rng)
        self.act = PReLU(cfg.prelu_init)
        self.lin2 = Linear(dim, dim, rng)
        self.dim = dim
        self.cfg = cfg

    def __call__(self, log_mag: Tensor) -> Tensor:
        """[N, F, T] log magnitudes -> [N, D]"""
        frames = self.tdnn(log_mag)
        pooled = ad.concat([ad.mean(frames, axis=-1), ad.std(frames, axis=-1)], axis=-1)
        return self.lin2(self.act(self.lin1(pooled)))


def log_magnitude(spec: ComplexTensor) -> Tensor:
    """log(|S| + 1e-6) with |S| = sqrt(re^2 + im^2 + 1e-12)"""
    return ad.log(spec.magnitude(eps=1e-12) + LOG_FLOOR)


def vocal_embed(s: Union[ComplexSpectrogram, ComplexTensor], encoder: VocalEncoder,
                source: str = None) -> VocalEmbedding:
    spec = spectrogram_to_tensor(s) if isinstance(s, ComplexSpectrogram) else s
    n_frames = spec.shape[-1]
    needed = tdnn_context()
    if n_frames < needed:
        raise InputError(f"utterance has {n_frames} frames, the vocal branch needs at least {needed}")
    squeeze = len(spec.shape) == 2
    log_mag = log_magnitude(spec)
    if squeeze:
        log_mag = ad.reshape(log_mag, (1,) + log_mag.shape)
    vector = encoder(log_mag)
    if squeeze or (isinstance(s, ComplexSpectrogram)):
        vector = ad.reshape(vector, (encoder.dim,))
    return VocalEmbedding(vector, source)


def fuse_vocal(s_tensor: ComplexTensor, e: VocalEmbedding, proj: Linear) -> ComplexTensor:
    """Append the projected embedding as a real-only input channel

    s_tensor is [N, 1, F, T] (or [1, F, T]); the result has two channels per part.
    """
    shape = s_tensor.shape
    squeeze = len(shape) == 3
    n_bins = shape[-2]
    if proj.weight.shape[0] != n_bins:
        raise ContractError(f"vocal projection maps to {proj.weight.shape[0]} bins, spectrum has {n_bins}")
    if proj.weight.shape[1] != e.vector.shape[-1]:
        raise ContractError(
            f"vocal projection expects a {proj.weight.shape[1]}-dim embedding, got {e.vector.shape[-1]}")
    vector = e.vector if e.vector.ndim == 2 else ad.reshape(e.vector, (1, -1))
    if squeeze:
        s_tensor = s_tensor.reshape((1,) + shape)
    n, n_frames = s_tensor.shape[0], s_tensor.shape[-1]
    if vector.shape[0] != n:
        raise ContractError(f"{vector.shape[0]} embeddings for a batch of {n}")
    projected = ad.reshape(proj(vector), (n, 1, n_bins, 1))
    channel = projected * Tensor(np.ones((1, 1, 1, n_frames)))
    fused = ComplexTensor(ad.concat([s_tensor.real, channel], axis=1),
                          ad.concat([s_tensor.imag, Tensor(np.zeros(channel.shape))], axis=1))
    return fused.reshape(fused.shape[1:]) if squeeze else fused


def simi_proxy(a: Waveform, b: Waveform, embedder: VocalEncoder, cfg: ModelConfig) -> float:
    """Cosine similarity of the two utterances' vocal embeddings"""
    with no_grad():
        ea = vocal_embed(stft(a, cfg.stft), embedder).numpy().astype(np.float64)
        eb = vocal_embed(stft(b, cfg.stft), embedder).numpy().astype(np.float64)
    if not np.any(ea) or not np.any(eb):
        raise DomainError("similarity undefined for a zero-norm embedding")
    return float(np.clip(1.0 - cosine(ea, eb), -1.0, 1.0))
