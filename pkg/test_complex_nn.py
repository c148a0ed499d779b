import numpy as np
import pytest
from scipy.special import expit

from autodiff import ComplexTensor, Tensor
from complex_nn import (LSTM, ComplexBatchNorm, ComplexConv2d, ComplexConvTranspose2d, ComplexLSTM,
                        ComplexPReLU, PReLU)
from errors import DimensionError


def _complex(rng, shape) -> ComplexTensor:
    return ComplexTensor(Tensor(rng.standard_normal(shape)), Tensor(rng.standard_normal(shape)))


def _as_numpy(t: ComplexTensor) -> np.ndarray:
    return t.real.data.astype(np.float64) + 1j * t.imag.data.astype(np.float64)


def test_unit_kernel_conv_matches_complex_arithmetic(rng):
    for _ in range(100):
        layer = ComplexConv2d(1, 1, (1, 1), rng)
        x = _complex(rng, (1, 1, 1, 1))
        w = complex(layer.w_real.data.item(), layer.w_imag.data.item())
        b = complex(layer.b_real.data.item(), layer.b_imag.data.item())
        expected = w * complex(_as_numpy(x).item()) + b
        assert complex(_as_numpy(layer(x)).item()) == pytest.approx(expected, abs=1e-5)


def test_real_inputs_and_weights_reduce_to_real_conv(rng):
    layer = ComplexConv2d(2, 3, (3, 2), rng, padding=(1, 0))
    layer.w_imag.data[...] = 0
    layer.b_imag.data[...] = 0
    x = ComplexTensor(Tensor(rng.standard_normal((1, 2, 6, 4))), Tensor(np.zeros((1, 2, 6, 4))))
    out = layer(x)
    assert not out.imag.data.any()
    from autodiff import conv2d
    expected = conv2d(x.real, layer.w_real, layer.b_real, padding=(1, 0))
    np.testing.assert_allclose(out.real.data, expected.data, atol=1e-6)


def test_conv_without_bias_is_complex_linear(rng):
    layer = ComplexConv2d(2, 2, (2, 2), rng)
    layer.b_real.data[...] = 0
    layer.b_imag.data[...] = 0
    x, y = _complex(rng, (1, 2, 4, 4)), _complex(rng, (1, 2, 4, 4))
    alpha, beta = 0.7 - 1.2j, -0.3 + 0.4j

    def scale(z: ComplexTensor, c: complex) -> ComplexTensor:
        return ComplexTensor(z.real * c.real - z.imag * c.imag, z.real * c.imag + z.imag * c.real)

    lhs = _as_numpy(layer(scale(x, alpha) + scale(y, beta)))
    rhs = alpha * _as_numpy(layer(x)) + beta * _as_numpy(layer(y))
    np.testing.assert_allclose(lhs, rhs, atol=1e-4)


def test_transposed_conv_restores_encoder_extent(rng):
    down = ComplexConv2d(2, 4, (5, 2), rng, stride=(2, 1), padding=(2, 1))
    up = ComplexConvTranspose2d(4, 2, (5, 2), rng, stride=(2, 1), padding=(2, 0))
    x = _complex(rng, (1, 2, 17, 6))
    h = down(x)
    assert h.shape == (1, 4, 9, 7)
    out = up(h)
    assert out.shape[:3] == (1, 2, 17)


def test_channel_mismatch_is_reported(rng):
    with pytest.raises(DimensionError):
        ComplexConv2d(3, 2, (1, 1), rng)(_complex(rng, (1, 2, 4, 4)))


def test_batch_norm_maps_constant_input_to_shift():
    bn = ComplexBatchNorm(2)
    bn.beta_r.data[...] = [0.3, -0.1]
    bn.beta_i.data[...] = [-0.2, 0.5]
    x = ComplexTensor(Tensor(np.full((2, 2, 3, 3), 4.0)), Tensor(np.full((2, 2, 3, 3), -1.0)))
    out = bn(x)
    np.testing.assert_allclose(out.real.data[:, 0], 0.3, atol=1e-6)
    np.testing.assert_allclose(out.imag.data[:, 1], 0.5, atol=1e-6)


def test_joint_batch_norm_whitens_correlated_parts(rng):
    n1, n2 = rng.standard_normal((8, 1, 16, 16)), rng.standard_normal((8, 1, 16, 16))
    x = ComplexTensor(Tensor(2.0 * n1 + 1.0), Tensor(0.8 * n1 + 0.3 * n2 - 2.0))
    out = ComplexBatchNorm(1, mode='joint')(x)
    parts = np.stack([out.real.data.reshape(-1), out.imag.data.reshape(-1)]).astype(np.float64)
    np.testing.assert_allclose(parts.mean(axis=1), 0.0, atol=1e-4)
    np.testing.assert_allclose(np.cov(parts, bias=True), 0.5 * np.eye(2), atol=2e-3)


def test_independent_batch_norm_keeps_cross_correlation(rng):
    n1 = rng.standard_normal((4, 1, 16, 16))
    x = ComplexTensor(Tensor(n1), Tensor(n1))
    out = ComplexBatchNorm(1, mode='independent')(x)
    cross = np.mean(out.real.data * out.imag.data)
    assert cross > 0.1


def test_batch_norm_eval_at_init_scales_by_inverse_root_two(rng):
    bn = ComplexBatchNorm(3).eval()
    x = _complex(rng, (2, 3, 4, 5))
    out = bn(x)
    np.testing.assert_allclose(out.real.data, x.real.data / np.sqrt(2), rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(out.imag.data, x.imag.data / np.sqrt(2), rtol=1e-4, atol=1e-6)


def test_batch_norm_updates_running_stats_only_in_training(rng):
    bn = ComplexBatchNorm(1)
    x = ComplexTensor(Tensor(rng.standard_normal((2, 1, 4, 4)) + 3.0), Tensor(rng.standard_normal((2, 1, 4, 4))))
    bn.eval()(x)
    assert bn.running_mean_r[0] == 0.0
    bn.train()(x)
    assert bn.running_mean_r[0] == pytest.approx(0.1 * x.real.data.mean(), rel=1e-4)


def test_prelu_negative_slope():
    assert PReLU()(Tensor([-1.0, 2.0])).data.tolist() == [-0.25, 2.0]
    out = ComplexPReLU()(ComplexTensor(Tensor([-1.0]), Tensor([-4.0])))
    assert out.real.data[0] == -0.25 and out.imag.data[0] == -1.0


def test_lstm_forget_bias_starts_at_one(rng):
    layer = LSTM(3, 5, rng)
    np.testing.assert_array_equal(layer.bias.data[5:10], 1.0)


def test_lstm_zero_input_zero_bias_stays_at_rest(rng):
    layer = ComplexLSTM(3, 4, rng)
    for part in (layer.lstm_real, layer.lstm_imag):
        part.bias.data[...] = 0
    out = layer(ComplexTensor(Tensor(np.zeros((1, 6, 3))), Tensor(np.zeros((1, 6, 3)))))
    assert out.shape == (1, 6, 4)
    assert not out.real.data.any() and not out.imag.data.any()


def test_lstm_single_step_matches_gate_equations(rng):
    layer = LSTM(2, 3, rng)
    x = rng.standard_normal((1, 1, 2))
    z = layer.w_ih.data @ x[0, 0] + layer.bias.data
    i, g, o = expit(z[:3]), np.tanh(z[6:9]), expit(z[9:])
    expected = o * np.tanh(i * g)
    np.testing.assert_allclose(layer(Tensor(x)).data[0, 0], expected, atol=1e-5)


def test_lstm_is_causal(rng):
    layer = ComplexLSTM(2, 3, rng)
    x = rng.standard_normal((1, 8, 2))
    base = layer(ComplexTensor(Tensor(x), Tensor(x)))
    x2 = x.copy()
    x2[0, 5:] += 10.0
    changed = layer(ComplexTensor(Tensor(x2), Tensor(x2)))
    np.testing.assert_array_equal(changed.real.data[:, :5], base.real.data[:, :5])
    assert not np.allclose(changed.real.data[:, 5:], base.real.data[:, 5:])
