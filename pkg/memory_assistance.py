"""
Memory-assistance bottleneck: criss-cross attention around a complex LSTM

The encoder's complex output is fused into one real map (real channels then
imaginary channels), attended along each position's frequency column and time
row, and handed to the complex LSTM. The result is concatenated with the
encoder output to form the decoder input.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

import autodiff as ad
from autodiff import ComplexTensor, Module, ModuleList, Tensor
from complex_nn import ComplexConv1d, ComplexLSTM, Conv2d
from config import ModelConfig, PLACEMENTS
from errors import ConfigError, ContractError, DimensionError


@dataclass
class AttentionMap:
    """Criss-cross weights [F, T, F + T - 1]: the F - 1 other bins of the column, then the T frames of the row"""
    weights: np.ndarray

    def path_sums(self) -> np.ndarray:
        return self.weights.sum(axis=-1)


def fuse_complex(real: Tensor, imag: Tensor) -> Tensor:
    """[.., C, F, T] parts -> [.., 2C, F, T] real map"""
    if real.shape != imag.shape:
        raise DimensionError(f"cannot fuse parts of shape {real.shape} and {imag.shape}")
    return ad.concat([real, imag], axis=-3)


def unfuse_complex(x: Tensor) -> ComplexTensor:
    channels = x.shape[-3]
    if channels % 2:
        raise DimensionError(f"fused map has an odd channel count ({channels})")
    half = channels // 2
    return ComplexTensor(ad.slice_(x, -3, 0, half), ad.slice_(x, -3, half, channels))


class CrissCrossProjections(Module):
    """1x1 query / key / value projections over a fused map"""

    def __init__(self, channels: int, rng: np.random.Generator, value_init: str = 'zero'):
        super().__init__()
        qk = max(1, channels // 8)
        self.q_proj = Conv2d(channels, qk, rng)
        self.k_proj = Conv2d(channels, qk, rng)
        self.v_proj = Conv2d(channels, channels, rng, init=value_init)


def _column_mask(n_freq: int) -> np.ndarray:
    mask = np.zeros((n_freq, 1, n_freq))
    mask[np.arange(n_freq), 0, np.arange(n_freq)] = -np.inf
    return mask


def criss_cross_step(x: Tensor, proj: CrissCrossProjections) -> Tuple[Tensor, Tensor]:
    """One attention pass over x [N, C, F, T]; returns (aggregated V, softmax weights [N, F, T, F + T])"""
    n_freq = x.shape[2]
    q, k, v = proj.q_proj(x), proj.k_proj(x), proj.v_proj(x)

    # row: same frequency, every frame
    energy_row = ad.matmul(ad.transpose(q, (0, 2, 3, 1)), ad.transpose(k, (0, 2, 1, 3)))  # [N, F, T, T]
    # column: same frame, every other frequency
    energy_col = ad.matmul(ad.transpose(q, (0, 3, 2, 1)), ad.transpose(k, (0, 3, 1, 2)))  # [N, T, F, F]
    energy_col = ad.transpose(energy_col, (0, 2, 1, 3)) + Tensor(_column_mask(n_freq))

    attention = ad.softmax(ad.concat([energy_col, energy_row], axis=-1), axis=-1)
    att_col = ad.slice_(attention, -1, 0, n_freq)
    att_row = ad.slice_(attention, -1, n_freq, attention.shape[-1])

    out_row = ad.matmul(att_row, ad.transpose(v, (0, 2, 3, 1)))  # [N, F, T, C]
    out_col = ad.matmul(ad.transpose(att_col, (0, 2, 1, 3)), ad.transpose(v, (0, 3, 2, 1)))  # [N, T, F, C]
    out = out_row + ad.transpose(out_col, (0, 2, 1, 3))
    return ad.transpose(out, (0, 3, 1, 2)), attention


def criss_cross_attention(x: Tensor, projections: List[CrissCrossProjections], loops: int,
                          return_map: bool = False):
    """Residual criss-cross attention repeated `loops` times over x [N, C, F, T]

    With one loop each position sees its row and column; the second loop
    reaches the whole map. `projections` holds one entry (shared) or one per loop.
    """
    if x.ndim != 4:
        raise DimensionError(f"criss_cross_attention expects [N, C, F, T], got {x.shape}")
    attention = None
    for i in range(loops):
        proj = projections[min(i, len(projections) - 1)]
        out, attention = criss_cross_step(x, proj)
        x = x + out
    if not return_map:
        return x
    return x, (attention_map(attention.data[0]) if attention is not None else None)


def attention_map(weights: np.ndarray) -> AttentionMap:
    """Drop each position's own entry from the column part of [F, T, F + T] softmax weights"""
    n_freq, n_frames, _ = weights.shape
    keep = ~np.eye(n_freq, dtype=bool)  # [F, F']
    column = weights[:, :, :n_freq][np.broadcast_to(keep[:, None, :], (n_freq, n_frames, n_freq))]
    column = column.reshape(n_freq, n_frames, n_freq - 1)
    return AttentionMap(np.concatenate([column, weights[:, :, n_freq:]], axis=-1))


def _to_sequence(x: Tensor) -> Tensor:
    """[N, C, F, T] -> [N, T, F * C], frequency-major"""
    n, c, f, t = x.shape
    return ad.reshape(ad.transpose(x, (0, 3, 2, 1)), (n, t, f * c))


class MemoryAssistanceBlock(Module):
    def __init__(self, cfg: ModelConfig, channels: int, n_freq: int, rng: np.random.Generator):
        super().__init__()
        self.placement = cfg.attention
        self.loops = cfg.attention_loops
        self.channels = channels
        self.n_freq = n_freq
        self.wiring = placement_mode(cfg.attention)
        fused = 2 * channels
        if cfg.attention != 'off':
            n_sets = 1 if cfg.share_attention_weights else max(1, cfg.attention_loops)
            self.attention = ModuleList(
                [CrissCrossProjections(fused, rng, cfg.attention_value_init) for _ in range(n_sets)])
        lstm_channels = 2 * channels if cfg.attention == 'before_lstm' else channels
        self.clstm = ComplexLSTM(lstm_channels * n_freq, cfg.lstm_hidden, rng)
        self.post_proj = ComplexConv1d(cfg.lstm_hidden, channels * n_freq, rng)

    def __call__(self, enc: ComplexTensor) -> ComplexTensor:
        if enc.shape[1:3] != (self.channels, self.n_freq):
            raise ContractError(
                f"bottleneck expects [N, {self.channels}, {self.n_freq}, T], got {enc.shape}")
        return self.wiring(self, enc)

    def attend(self, fused: Tensor, return_map: bool = False):
        return criss_cross_attention(fused, list(self.attention), self.loops, return_map)

    def recurrent(self, seq: ComplexTensor) -> ComplexTensor:
        """[N, T, D] complex sequence -> [N, C, F', T] through the CLSTM and post projection"""
        hidden = self.clstm(seq)
        projected = self.post_proj(hidden.transpose((0, 2, 1)))  # [N, C * F', T]
        n, _, t = projected.shape
        restored = projected.reshape((n, self.n_freq, self.channels, t))
        return restored.transpose((0, 2, 1, 3))


def _before_lstm(block: MemoryAssistanceBlock, enc: ComplexTensor) -> ComplexTensor:
    fused = fuse_complex(enc.real, enc.imag)
    attended = block.attend(fused)
    values = block.attention[0].v_proj(fused)
    c = block.channels
    stacked = ad.concat([attended, values], axis=1)  # [N, 4C, F', T]
    real = ad.concat([ad.slice_(stacked, 1, 0, c), ad.slice_(stacked, 1, 2 * c, 3 * c)], axis=1)
    imag = ad.concat([ad.slice_(stacked, 1, c, 2 * c), ad.slice_(stacked, 1, 3 * c, 4 * c)], axis=1)
    out = block.recurrent(ComplexTensor(_to_sequence(real), _to_sequence(imag)))
    return ComplexTensor.concat([out, enc], axis=1)


def _after_lstm(block: MemoryAssistanceBlock, enc: ComplexTensor) -> ComplexTensor:
    out = block.recurrent(ComplexTensor(_to_sequence(enc.real), _to_sequence(enc.imag)))
    attended = block.attend(fuse_complex(out.real, out.imag))
    return ComplexTensor.concat([unfuse_complex(attended), enc], axis=1)


def _off(block: MemoryAssistanceBlock, enc: ComplexTensor) -> ComplexTensor:
    out = block.recurrent(ComplexTensor(_to_sequence(enc.real), _to_sequence(enc.imag)))
    return ComplexTensor.concat([out, enc], axis=1)


_WIRINGS: Dict[str, Callable[[MemoryAssistanceBlock, ComplexTensor], ComplexTensor]] = {
    'before_lstm': _before_lstm,
    'after_lstm': _after_lstm,
    'off': _off,
}


def placement_mode(placement: str) -> Callable[[MemoryAssistanceBlock, ComplexTensor], ComplexTensor]:
    """Bottleneck wiring for an attention placement"""
    if placement not in PLACEMENTS:
        raise ConfigError(f"unknown attention placement '{placement}' (choose from {PLACEMENTS})")
    return _WIRINGS[placement]


def memory_assist_forward(enc_r: Tensor, enc_i: Tensor, block: MemoryAssistanceBlock) -> ComplexTensor:
    return block(ComplexTensor(enc_r, enc_i))
