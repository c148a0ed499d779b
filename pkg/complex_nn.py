"""
Real and complex-valued layers

Complex layers hold one real parameter set per part and combine them with the
complex multiplication rule, so every layer is an ordinary autodiff graph.
"""
from typing import Tuple

import numpy as np

import autodiff as ad
from autodiff import ComplexTensor, Module, Parameter, Tensor, uniform_init
from errors import DimensionError


# ----------------------------------------------------------- real blocks

class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(uniform_init(rng, (out_features, in_features), in_features))
        self.bias = Parameter(uniform_init(rng, (out_features,), in_features))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 dilation: int = 1):
        super().__init__()
        fan_in = in_channels * kernel
        self.dilation = dilation
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kernel), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias, dilation=self.dilation)


class Conv2d(Module):
    """Real 2-D convolution (used as 1x1 projections over feature maps)"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel=(1, 1), init: str = 'uniform'):
        super().__init__()
        fan_in = in_channels * kernel[0] * kernel[1]
        shape = (out_channels, in_channels) + tuple(kernel)
        if init == 'zero':
            self.weight = Parameter(np.zeros(shape))
            self.bias = Parameter(np.zeros(out_channels))
        else:
            self.weight = Parameter(uniform_init(rng, shape, fan_in))
            self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias)


class PReLU(Module):
    def __init__(self, init: float = 0.25):
        super().__init__()
        self.alpha = Parameter(np.array([init]))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.prelu(x, self.alpha)


class LSTM(Module):
    """Unidirectional LSTM; gate order (input, forget, cell, output), forget bias 1.0"""

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        self.w_ih = Parameter(uniform_init(rng, (4 * hidden, input_dim), hidden))
        self.w_hh = Parameter(uniform_init(rng, (4 * hidden, hidden), hidden))
        bias = uniform_init(rng, (4 * hidden,), hidden)
        bias[hidden:2 * hidden] = 1.0
        self.bias = Parameter(bias)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.lstm(x, self.w_ih, self.w_hh, self.bias)


# -------------------------------------------------------- complex blocks

def _pair(v) -> Tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


class ComplexConv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel, rng: np.random.Generator,
                 stride=(1, 1), padding=(0, 0)):
        super().__init__()
        kf, kt = _pair(kernel)
        fan_in = in_channels * kf * kt
        shape = (out_channels, in_channels, kf, kt)
        self.stride, self.padding = _pair(stride), _pair(padding)
        self.w_real = Parameter(uniform_init(rng, shape, fan_in))
        self.w_imag = Parameter(uniform_init(rng, shape, fan_in))
        self.b_real = Parameter(uniform_init(rng, (out_channels,), fan_in))
        self.b_imag = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_conv2d(x, self)


def complex_conv2d(x: ComplexTensor, layer: ComplexConv2d) -> ComplexTensor:
    """(x_r + i x_i) * (w_r + i w_i) + (b_r + i b_i) as four real convolutions"""
    c_in = layer.w_real.shape[1]
    if x.shape[-3] != c_in:
        raise DimensionError(f"complex_conv2d: input has {x.shape[-3]} channels, layer expects {c_in}")
    conv = lambda v, w, b=None: ad.conv2d(v, w, b, layer.stride, layer.padding)
    real = conv(x.real, layer.w_real, layer.b_real) - conv(x.imag, layer.w_imag)
    imag = conv(x.real, layer.w_imag, layer.b_imag) + conv(x.imag, layer.w_real)
    return ComplexTensor(real, imag)


class ComplexConvTranspose2d(Module):
    """Weights are laid out [C_in, C_out, K_f, K_t]"""

    def __init__(self, in_channels: int, out_channels: int, kernel, rng: np.random.Generator,
                 stride=(1, 1), padding=(0, 0), output_padding=(0, 0)):
        super().__init__()
        kf, kt = _pair(kernel)
        fan_in = in_channels * kf * kt
        shape = (in_channels, out_channels, kf, kt)
        self.stride, self.padding = _pair(stride), _pair(padding)
        self.output_padding = _pair(output_padding)
        self.w_real = Parameter(uniform_init(rng, shape, fan_in))
        self.w_imag = Parameter(uniform_init(rng, shape, fan_in))
        self.b_real = Parameter(uniform_init(rng, (out_channels,), fan_in))
        self.b_imag = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_conv_transpose2d(x, self)


def complex_conv_transpose2d(x: ComplexTensor, layer: ComplexConvTranspose2d) -> ComplexTensor:
    c_in = layer.w_real.shape[0]
    if x.shape[-3] != c_in:
        raise DimensionError(
            f"complex_conv_transpose2d: input has {x.shape[-3]} channels, layer expects {c_in}")
    conv = lambda v, w, b=None: ad.conv_transpose2d(
        v, w, b, layer.stride, layer.padding, layer.output_padding)
    real = conv(x.real, layer.w_real, layer.b_real) - conv(x.imag, layer.w_imag)
    imag = conv(x.real, layer.w_imag, layer.b_imag) + conv(x.imag, layer.w_real)
    return ComplexTensor(real, imag)


class ComplexConv1d(Module):
    """Complex 1-D convolution over [N, C, T]; kernel 1 makes it a per-frame complex linear map"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel: int = 1):
        super().__init__()
        fan_in = in_channels * kernel
        shape = (out_channels, in_channels, kernel)
        self.w_real = Parameter(uniform_init(rng, shape, fan_in))
        self.w_imag = Parameter(uniform_init(rng, shape, fan_in))
        self.b_real = Parameter(uniform_init(rng, (out_channels,), fan_in))
        self.b_imag = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        real = ad.conv1d(x.real, self.w_real, self.b_real) - ad.conv1d(x.imag, self.w_imag)
        imag = ad.conv1d(x.real, self.w_imag, self.b_imag) + ad.conv1d(x.imag, self.w_real)
        return ComplexTensor(real, imag)


class ComplexBatchNorm(Module):
    """Batch norm over [N, C, F, T] complex maps

    'joint' whitens each channel's (real, imag) pair by the inverse square root
    of its 2x2 covariance; 'independent' drops the cross term. The affine part
    is a symmetric 2x2 scale (gamma_rr, gamma_ri, gamma_ii) plus a shift.
    """

    def __init__(self, channels: int, mode: str = 'joint', momentum: float = 0.1,
                 eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.mode = mode
        self.momentum = momentum
        self.eps = eps
        self.gamma_rr = Parameter(np.full(channels, 1 / np.sqrt(2)))
        self.gamma_ri = Parameter(np.zeros(channels))
        self.gamma_ii = Parameter(np.full(channels, 1 / np.sqrt(2)))
        self.beta_r = Parameter(np.zeros(channels))
        self.beta_i = Parameter(np.zeros(channels))
        self.register_buffer('running_mean_r', np.zeros(channels))
        self.register_buffer('running_mean_i', np.zeros(channels))
        self.register_buffer('running_vrr', np.ones(channels))
        self.register_buffer('running_vri', np.zeros(channels))
        self.register_buffer('running_vii', np.ones(channels))

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_batch_norm(x, self, self.training)


def _channel_view(v: np.ndarray) -> Tensor:
    return Tensor(v.reshape(1, -1, 1, 1))


def complex_batch_norm(x: ComplexTensor, layer: ComplexBatchNorm, training: bool) -> ComplexTensor:
    squeeze = len(x.shape) == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.shape[1] != layer.channels:
        raise DimensionError(f"complex_batch_norm: {x.shape[1]} channels, layer has {layer.channels}")
    axes = (0, 2, 3)
    population = x.shape[0] * x.shape[2] * x.shape[3]

    if training and population >= 2:
        mean_r = ad.mean(x.real, axes, keepdims=True)
        mean_i = ad.mean(x.imag, axes, keepdims=True)
        cr, ci = x.real - mean_r, x.imag - mean_i
        vrr = ad.mean(ad.square(cr), axes, keepdims=True)
        vii = ad.mean(ad.square(ci), axes, keepdims=True)
        if layer.mode == 'joint':
            vri = ad.mean(cr * ci, axes, keepdims=True)
        else:
            vri = Tensor(np.zeros((1, layer.channels, 1, 1)))
        m = layer.momentum
        for name, stat in (('running_mean_r', mean_r), ('running_mean_i', mean_i),
                           ('running_vrr', vrr), ('running_vri', vri), ('running_vii', vii)):
            buf = getattr(layer, name)
            buf[...] = (1 - m) * buf + m * stat.data.reshape(-1)
        vrr, vii = vrr + layer.eps, vii + layer.eps
    else:
        # inference, or a population too small to estimate a covariance
        cr = x.real - _channel_view(layer.running_mean_r)
        ci = x.imag - _channel_view(layer.running_mean_i)
        vrr = _channel_view(layer.running_vrr + layer.eps)
        vii = _channel_view(layer.running_vii + layer.eps)
        vri = _channel_view(layer.running_vri if layer.mode == 'joint'
                            else np.zeros_like(layer.running_vri))

    s = ad.sqrt(ad.maximum(vrr * vii - vri * vri, layer.eps * layer.eps))
    t = ad.sqrt(vrr + vii + 2 * s)
    inv = 1 / (s * t)
    w_rr = (vii + s) * inv
    w_ii = (vrr + s) * inv
    w_ri = ad.neg(vri) * inv
    xr = w_rr * cr + w_ri * ci
    xi = w_ri * cr + w_ii * ci

    shape = (1, layer.channels, 1, 1)
    g_rr, g_ri, g_ii = (ad.reshape(g, shape) for g in (layer.gamma_rr, layer.gamma_ri, layer.gamma_ii))
    out = ComplexTensor(g_rr * xr + g_ri * xi + ad.reshape(layer.beta_r, shape),
                        g_ri * xr + g_ii * xi + ad.reshape(layer.beta_i, shape))
    return out.reshape(out.shape[1:]) if squeeze else out


class ComplexPReLU(Module):
    def __init__(self, init: float = 0.25):
        super().__init__()
        self.alpha_r = Parameter(np.array([init]))
        self.alpha_i = Parameter(np.array([init]))

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_prelu(x, self.alpha_r, self.alpha_i)


def complex_prelu(x: ComplexTensor, alpha_r, alpha_i) -> ComplexTensor:
    return ComplexTensor(ad.prelu(x.real, alpha_r), ad.prelu(x.imag, alpha_i))


class ComplexLSTM(Module):
    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.lstm_real = LSTM(input_dim, hidden, rng)
        self.lstm_imag = LSTM(input_dim, hidden, rng)

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return complex_lstm(x, self)


def complex_lstm(x: ComplexTensor, layer: ComplexLSTM) -> ComplexTensor:
    """x [N, T, D] -> [N, T, H]: (L_r(x_r) - L_i(x_i)) + i (L_r(x_i) + L_i(x_r))"""
    d = layer.lstm_real.w_ih.shape[1]
    if x.shape[-1] != d:
        raise DimensionError(f"complex_lstm: feature dim {x.shape[-1]}, layer expects {d}")
    real = layer.lstm_real(x.real) - layer.lstm_imag(x.imag)
    imag = layer.lstm_real(x.imag) + layer.lstm_imag(x.real)
    return ComplexTensor(real, imag)
