"""
Training objectives on waveforms

All terms are computed in float64 inside the graph; gradients are cast back
to the dtype of the inputs. Inputs are [L] or [N, L]; batched inputs return
the batch mean.
"""
import functools
from typing import Tuple

import numpy as np

import autodiff as ad
from autodiff import Tensor
from config import LossConfig
from errors import ConfigError, DimensionError, InputError


def _in_float64(fn):
    """Constants created inside the loss are float64 as well"""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with ad.default_dtype(np.float64):
            return fn(*args, **kwargs)
    return wrapper


def _prepare(est, ref) -> Tuple[Tensor, Tensor]:
    est = est if isinstance(est, Tensor) else Tensor(est)
    ref = ref if isinstance(ref, Tensor) else Tensor(ref)
    if est.shape != ref.shape:
        raise DimensionError(f"estimate {est.shape} and reference {ref.shape} differ in shape")
    if est.ndim not in (1, 2) or est.shape[-1] < 1:
        raise DimensionError(f"expected [L] or [N, L] signals, got {est.shape}")
    return ad.astype(est, np.float64), ad.astype(ref, np.float64)


def _energy(x: Tensor) -> Tensor:
    return ad.sum_(ad.square(x), axis=-1)


@_in_float64
def si_snr_loss(est, ref, cfg: LossConfig = None) -> Tensor:
    """Negated scale-invariant SNR in dB, clamped to +-si_snr_clamp_db"""
    cfg = cfg or LossConfig()
    est, ref = _prepare(est, ref)
    if cfg.zero_mean:
        est = est - ad.mean(est, axis=-1, keepdims=True)
        ref = ref - ad.mean(ref, axis=-1, keepdims=True)
    ref_energy = ad.sum_(ad.square(ref), axis=-1, keepdims=True)
    if np.any(ref_energy.data == 0):
        raise InputError("si_snr_loss: reference has zero energy")
    if np.any(_energy(est).data == 0):
        raise InputError("si_snr_loss: estimate has zero energy")

    scale = ad.sum_(est * ref, axis=-1, keepdims=True) / ref_energy
    target = scale * ref
    noise = est - target
    target_energy, noise_energy = _energy(target), _energy(noise)

    # flooring each energy against the other bounds the ratio to the clamp
    floor = 10.0 ** (-cfg.si_snr_clamp_db / 10.0)
    target_energy, noise_energy = (ad.maximum(target_energy, noise_energy * floor),
                                   ad.maximum(noise_energy, target_energy * floor))
    snr = 10.0 * ad.log10(target_energy / noise_energy)
    return ad.neg(ad.mean(snr))


@_in_float64
def cosine_similarity(est, ref) -> Tensor:
    """Per-signal cosine of waveforms, clipped to [-1, 1]"""
    est, ref = _prepare(est, ref)
    est_energy, ref_energy = _energy(est), _energy(ref)
    if np.any(est_energy.data == 0) or np.any(ref_energy.data == 0):
        raise InputError("cosine similarity undefined for a zero-norm signal")
    cos = ad.sum_(est * ref, axis=-1) / ad.sqrt(est_energy * ref_energy)
    return ad.clip(cos, -1.0, 1.0)


@_in_float64
def similarity_loss(est, ref, cfg: LossConfig = None) -> Tensor:
    """alpha * log10(1 - cos(est, ref) + delta)"""
    cfg = cfg or LossConfig()
    cos = cosine_similarity(est, ref)
    return ad.mean(cfg.alpha * ad.log10(1.0 - cos + cfg.delta))


def joint_loss(est, ref, cfg: LossConfig = None) -> Tensor:
    cfg = cfg or LossConfig()
    return si_snr_loss(est, ref, cfg) + similarity_loss(est, ref, cfg)


LOSSES = {'joint': joint_loss, 'si_snr': si_snr_loss}


def training_loss(name: str, est, ref, cfg: LossConfig = None) -> Tensor:
    if name not in LOSSES:
        raise ConfigError(f"unknown loss '{name}' (choose from {sorted(LOSSES)})")
    return LOSSES[name](est, ref, cfg)
