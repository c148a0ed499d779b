"""
Finite-difference gradient suite

Each row builds a small float64 graph, reduces its output with a random
projection R (loss = sum(out * R)) and compares reverse-mode gradients with
central differences on a sample of entries of every leaf. A row passes when
|analytic - numeric| <= ABS_TOL + REL_TOL * max|numeric| for every seed.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import autodiff as ad
from autodiff import ComplexTensor, Tensor, no_grad
from complex_nn import (ComplexBatchNorm, ComplexConv2d, ComplexConvTranspose2d, ComplexLSTM, Linear,
                        complex_batch_norm, complex_conv2d, complex_conv_transpose2d, complex_lstm)
from config import LossConfig, ModelConfig, StftConfig
from dsp import istft_tensor
from losses import joint_loss, si_snr_loss, similarity_loss
from memory_assistance import CrissCrossProjections, criss_cross_attention
from vocal_reinforcement import VocalEncoder, fuse_vocal, vocal_embed

STEP = 1e-3
ABS_TOL = 1e-4
REL_TOL = 1e-2
SEEDS = 5
ENTRIES_PER_LEAF = 6

Output = Union[Tensor, ComplexTensor]
Build = Callable[[np.random.Generator], Tuple[Callable[[], Output], List[Tensor]]]


@dataclass
class GradcheckResult:
    name: str
    max_abs_err: float
    max_rel_err: float
    passed: bool

    @property
    def tolerance(self) -> str:
        return f"abs {ABS_TOL:g} + rel {REL_TOL:g}"


def _leaf(rng: np.random.Generator, *shape, low: float = None, high: float = None) -> Tensor:
    data = rng.standard_normal(shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


def _parts(out: Output) -> List[Tensor]:
    return [out.real, out.imag] if isinstance(out, ComplexTensor) else [out]


def _projected(out: Output, projections: List[np.ndarray]) -> float:
    return float(sum(np.sum(part.data * r) for part, r in zip(_parts(out), projections)))


# ------------------------------------------------------------------ rows

def _elementwise(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, low=0.5, high=2.0)
    return (lambda: a * b + a / b - ad.neg(b) * a), [a, b]


def _nonlinear(rng):
    a = _leaf(rng, 2, 5)
    return (lambda: ad.tanh(a) + ad.sigmoid(a) * ad.exp(0.5 * a) + ad.square(a)), [a]


def _logarithmic(rng):
    a = _leaf(rng, 6, low=0.2, high=3.0)
    return (lambda: ad.log(a) + ad.log10(a) * ad.sqrt(a)), [a]


def _piecewise(rng):
    a, b = _leaf(rng, 4, 4), _leaf(rng, 4, 4)
    alpha = Tensor(np.array([0.3]), requires_grad=True)
    # keep entries away from the kinks
    a.data += np.sign(a.data) * 0.05
    a.data[np.abs(np.abs(a.data) - 0.8) < 0.05] += 0.1
    b.data[np.abs(a.data - b.data) < 0.05] += 0.2
    return (lambda: ad.maximum(a, b) + ad.clip(a, -0.8, 0.8) + ad.prelu(a, alpha)), [a, b, alpha]


def _reductions(rng):
    a = _leaf(rng, 3, 5)
    return (lambda: ad.sum_(a, axis=0) + ad.mean(a, axis=0) * ad.std(a, axis=0)), [a]


def _softmax(rng):
    a = _leaf(rng, 3, 6)
    return (lambda: ad.softmax(a, axis=-1)), [a]


def _shape_ops(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 2)
    def fn():
        x = ad.concat([a, b], axis=-1)
        x = ad.pad(ad.slice_(ad.transpose(x, (0, 2, 1)), 1, 1, 5), ((0, 0), (2, 1), (0, 0)))
        return ad.reshape(x, (2, -1))[:, 1::2]
    return fn, [a, b]


def _matmul(rng):
    a, b, w, bias = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 5), _leaf(rng, 6, 5), _leaf(rng, 6)
    return (lambda: ad.linear(ad.matmul(a, b), w, bias)), [a, b, w, bias]


def _conv1d(rng):
    x, w, b = _leaf(rng, 2, 3, 12), _leaf(rng, 4, 3, 3), _leaf(rng, 4)
    return (lambda: ad.conv1d(x, w, b, stride=1, dilation=2, padding=1)), [x, w, b]


def _conv2d(rng):
    x, w, b = _leaf(rng, 2, 2, 7, 5), _leaf(rng, 3, 2, 3, 2), _leaf(rng, 3)
    return (lambda: ad.conv2d(x, w, b, stride=(2, 1), padding=(1, 1))), [x, w, b]


def _conv_transpose2d(rng):
    x, w, b = _leaf(rng, 2, 3, 4, 3), _leaf(rng, 3, 2, 3, 2), _leaf(rng, 2)
    return (lambda: ad.conv_transpose2d(x, w, b, stride=(2, 1), padding=(1, 0),
                                        output_padding=(1, 0))), [x, w, b]


def _lstm(rng):
    hidden = 3
    x = _leaf(rng, 2, 4, 5)
    w_ih = _leaf(rng, 4 * hidden, 5, low=-0.5, high=0.5)
    w_hh = _leaf(rng, 4 * hidden, hidden, low=-0.5, high=0.5)
    b = _leaf(rng, 4 * hidden)
    return (lambda: ad.lstm(x, w_ih, w_hh, b)), [x, w_ih, w_hh, b]


def _complex_input(rng, *shape) -> Tuple[ComplexTensor, List[Tensor]]:
    real, imag = _leaf(rng, *shape), _leaf(rng, *shape)
    return ComplexTensor(real, imag), [real, imag]


def _complex_conv2d(rng):
    x, leaves = _complex_input(rng, 2, 2, 6, 4)
    layer = ComplexConv2d(2, 3, (3, 2), rng, stride=(2, 1), padding=(1, 1))
    return (lambda: complex_conv2d(x, layer)), leaves + layer.parameters()


def _complex_conv_transpose2d(rng):
    x, leaves = _complex_input(rng, 1, 3, 3, 4)
    layer = ComplexConvTranspose2d(3, 2, (3, 2), rng, stride=(2, 1), padding=(1, 0))
    return (lambda: complex_conv_transpose2d(x, layer)), leaves + layer.parameters()


def _complex_batch_norm(rng):
    x, leaves = _complex_input(rng, 2, 3, 4, 3)
    layer = ComplexBatchNorm(3, mode='joint')
    layer.gamma_ri.data[...] = rng.uniform(-0.3, 0.3, size=3)
    layer.beta_r.data[...] = rng.standard_normal(3)
    return (lambda: complex_batch_norm(x, layer, training=True)), leaves + layer.parameters()


def _complex_lstm(rng):
    x, leaves = _complex_input(rng, 1, 4, 3)
    layer = ComplexLSTM(3, 2, rng)
    return (lambda: complex_lstm(x, layer)), leaves + layer.parameters()


def _criss_cross(rng):
    x = _leaf(rng, 1, 4, 3, 3)
    proj = CrissCrossProjections(4, rng, value_init='uniform')
    return (lambda: criss_cross_attention(x, [proj], loops=2)), [x] + proj.parameters()


def _vocal_branch(rng):
    cfg = ModelConfig(tdnn_channels=(6, 6, 6, 6, 4), embedding_dim=5, tdnn_divisor=1, prelu_init=0.9,
                      stft=StftConfig(win_length=32, hop_length=8, fft_size=32))
    encoder = VocalEncoder(cfg, rng)
    proj = Linear(encoder.dim, cfg.stft.n_bins, rng)
    spec, leaves = _complex_input(rng, 1, cfg.stft.n_bins, 16)

    def fn():
        return fuse_vocal(spec.reshape((1, 1) + spec.shape[1:]), vocal_embed(spec, encoder), proj)
    return fn, leaves + encoder.parameters() + proj.parameters()


def _istft(rng):
    cfg = StftConfig(win_length=16, hop_length=4, fft_size=16)
    spec, leaves = _complex_input(rng, 1, cfg.n_bins, 5)
    return (lambda: istft_tensor(spec, cfg)), leaves


def _signal_pair(rng):
    est = _leaf(rng, 2, 64)
    ref = Tensor(rng.standard_normal((2, 64)))
    return est, ref


def _si_snr(rng):
    est, ref = _signal_pair(rng)
    return (lambda: si_snr_loss(est, ref)), [est]


def _similarity(rng):
    est, ref = _signal_pair(rng)
    return (lambda: similarity_loss(est, ref, LossConfig())), [est]


def _joint(rng):
    est, ref = _signal_pair(rng)
    return (lambda: joint_loss(est, ref)), [est]


SUITE: Dict[str, Build] = {
    'add/sub/mul/div': _elementwise,
    'tanh/sigmoid/exp/square': _nonlinear,
    'log/log10/sqrt': _logarithmic,
    'maximum/clip/prelu': _piecewise,
    'sum/mean/std': _reductions,
    'softmax': _softmax,
    'reshape/transpose/concat/slice/pad': _shape_ops,
    'matmul/linear': _matmul,
    'conv1d': _conv1d,
    'conv2d': _conv2d,
    'conv_transpose2d': _conv_transpose2d,
    'lstm': _lstm,
    'complex_conv2d': _complex_conv2d,
    'complex_conv_transpose2d': _complex_conv_transpose2d,
    'complex_batch_norm': _complex_batch_norm,
    'complex_lstm': _complex_lstm,
    'criss_cross_attention': _criss_cross,
    'vocal_embed/fuse_vocal': _vocal_branch,
    'istft': _istft,
    'si_snr_loss': _si_snr,
    'similarity_loss': _similarity,
    'joint_loss': _joint,
}


# ---------------------------------------------------------------- engine

def _check_seed(build: Build, seed: int, scale: float) -> Tuple[float, float, bool]:
    rng = np.random.default_rng(seed)
    fn, leaves = build(rng)
    out = fn()
    projections = [rng.standard_normal(p.shape) for p in _parts(out)]
    loss = sum((ad.sum_(p * Tensor(r)) for p, r in zip(_parts(out), projections)), Tensor(0.0))
    loss.backward()

    worst_abs, worst_rel, passed = 0.0, 0.0, True
    for leaf in leaves:
        analytic = (leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)) * scale
        flat = leaf.data.reshape(-1)
        picked = rng.choice(flat.size, size=min(ENTRIES_PER_LEAF, flat.size), replace=False)
        numeric = np.empty(len(picked))
        with no_grad():
            for j, idx in enumerate(picked):
                original = flat[idx]
                flat[idx] = original + STEP
                plus = _projected(fn(), projections)
                flat[idx] = original - STEP
                minus = _projected(fn(), projections)
                flat[idx] = original
                numeric[j] = (plus - minus) / (2 * STEP)
        err = np.max(np.abs(analytic.reshape(-1)[picked] - numeric))
        bound = ABS_TOL + REL_TOL * np.max(np.abs(numeric))
        worst_abs = max(worst_abs, float(err))
        worst_rel = max(worst_rel, float(err / max(np.max(np.abs(numeric)), 1e-12)))
        passed = passed and err <= bound
    return worst_abs, worst_rel, passed


def check(name: str, build: Build, seeds: Sequence[int], corrupt: bool = False) -> GradcheckResult:
    """Run one row over every seed; `corrupt` scales the analytic gradient by 1.5"""
    worst_abs, worst_rel, passed = 0.0, 0.0, True
    with ad.default_dtype(np.float64):
        for seed in seeds:
            abs_err, rel_err, ok = _check_seed(build, seed, 1.5 if corrupt else 1.0)
            worst_abs, worst_rel = max(worst_abs, abs_err), max(worst_rel, rel_err)
            passed = passed and ok
    return GradcheckResult(name, worst_abs, worst_rel, passed)


def run_suite(seed: int = 0, corrupt: Optional[str] = None,
              only: Optional[Sequence[str]] = None) -> List[GradcheckResult]:
    seeds = [seed + k for k in range(SEEDS)]
    names = list(only) if only else list(SUITE)
    return [check(name, SUITE[name], seeds, corrupt=(name == corrupt)) for name in names]


def format_table(results: List[GradcheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  {'max_rel_err':>11}  {'tolerance':<20}  result"]
    for r in results:
        status = '✅ PASS' if r.passed else '❌ FAIL'
        lines.append(f"{r.name:<{width}}  {r.max_rel_err:>11.2e}  {r.tolerance:<20}  {status}")
    return '\n'.join(lines)
