"""Raw channel data -> network input tensors, and label unit conversion.

Order of operations in ``to_input``: depth gain correction, transmit-pulse
cropping, anti-aliased decimation to a fixed time length, then a single
dataset-wide amplitude scale. Noise injection (Gaussian + quantization) is a
separate training-only step so evaluation inputs stay clean.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError
from .solver import ChannelData


@dataclass
class PreprocConfig:
    gain_rate: float = 0.48  # dB/us
    crop_time: float = 3.0e-6  # s removed from the start of every trace
    target_time_len: int = 1024
    noise_sigma: float = 0.05  # fraction of signal RMS
    quant_levels: int = 1024  # 0 disables quantization
    normalize_mode: str = "dataset-rms"
    label_offset: float = 1550.0  # m/s
    label_span: float = 250.0  # m/s
    global_scale: float | None = None  # fitted so dataset-wide RMS = 1

    def __post_init__(self):
        if self.gain_rate < 0:
            raise ConfigError("gain_rate must be >= 0")
        if self.quant_levels and self.quant_levels < 2:
            raise ConfigError("quant_levels must be >= 2 or 0 (disabled)")
        if self.label_span <= 0:
            raise ConfigError("label_span must be positive")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def gain_correct(trace: np.ndarray, gain_rate: float, sample_rate: float) -> np.ndarray:
    """Exponential depth-gain: out[k] = in[k] * 10^(gain_rate * t_us / 20)."""
    if gain_rate < 0:
        raise ConfigError("gain_rate must be >= 0 (negate via invert helpers)")
    trace = np.asarray(trace, dtype=np.float64)
    t_us = np.arange(trace.shape[-1]) / sample_rate * 1e6
    return trace * 10.0 ** (gain_rate * t_us / 20.0)


def apply_gain(trace: np.ndarray, gain_rate: float, sample_rate: float) -> np.ndarray:
    """Like gain_correct but allows negative rates (used to invert)."""
    trace = np.asarray(trace, dtype=np.float64)
    t_us = np.arange(trace.shape[-1]) / sample_rate * 1e6
    return trace * 10.0 ** (gain_rate * t_us / 20.0)


def crop_transmit(channel: ChannelData, crop_time: float) -> ChannelData:
    """Drop the first round(crop_time * sample_rate) samples of every trace."""
    n_drop = int(round(crop_time * channel.sample_rate))
    if n_drop < 0 or n_drop >= channel.n_time:
        raise ConfigError(f"crop of {n_drop} samples exceeds trace length {channel.n_time}")
    return ChannelData(traces=channel.traces[:, :, n_drop:],
                       sample_rate=channel.sample_rate)


def _lowpass_kernel(cutoff: float, n_taps: int) -> np.ndarray:
    """Hamming-windowed sinc, cutoff as a fraction of the sampling rate."""
    k = np.arange(n_taps) - (n_taps - 1) / 2
    h = 2 * cutoff * np.sinc(2 * cutoff * k)
    h *= np.hamming(n_taps)
    return h / h.sum()


def decimate(traces: np.ndarray, target_len: int) -> np.ndarray:
    """Windowed-sinc anti-aliasing low-pass then subsample along the last axis."""
    n = traces.shape[-1]
    if target_len >= n:
        idx = np.linspace(0, n - 1, target_len)
        lo = np.floor(idx).astype(int)
        hi = np.minimum(lo + 1, n - 1)
        w = idx - lo
        return traces[..., lo] * (1 - w) + traces[..., hi] * w
    ratio = n / target_len
    cutoff = 0.5 / ratio * 0.9
    n_taps = 2 * int(4 * ratio) + 1
    h = _lowpass_kernel(cutoff, n_taps)
    flat = traces.reshape(-1, n)
    filtered = np.empty_like(flat, dtype=np.float64)
    for i in range(flat.shape[0]):
        filtered[i] = np.convolve(flat[i], h, mode="same")
    idx = np.minimum(np.round(np.arange(target_len) * ratio).astype(int), n - 1)
    out = filtered[:, idx]
    return out.reshape(traces.shape[:-1] + (target_len,))


def inject_noise(tensor: np.ndarray, noise_sigma: float, quant_levels: int,
                 seed: int) -> np.ndarray:
    """Gaussian noise at a fraction of signal RMS, then uniform quantization."""
    out = np.asarray(tensor, dtype=np.float64).copy()
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        rms = math.sqrt(float(np.mean(out ** 2)))
        out += rng.normal(0.0, noise_sigma * rms, size=out.shape)
    if quant_levels:
        peak = float(np.abs(out).max())
        if peak > 0:
            # quant_levels uniform levels spanning [-peak, +peak]
            step = 2 * peak / (quant_levels - 1)
            out = np.round((out + peak) / step) * step - peak
    return out


def to_input(channel: ChannelData, cfg: PreprocConfig) -> np.ndarray:
    """(n_transmits, target_time_len, n_elements) dimensionless input tensor."""
    traces = gain_correct(channel.traces, cfg.gain_rate, channel.sample_rate)
    cropped = crop_transmit(ChannelData(traces=traces.astype(np.float32),
                                        sample_rate=channel.sample_rate), cfg.crop_time)
    dec = decimate(cropped.traces.astype(np.float64), cfg.target_time_len)
    scale = cfg.global_scale
    if scale is None:
        rms = math.sqrt(float(np.mean(dec ** 2)))
        scale = 1.0 / rms if rms > 0 else 1.0
    out = dec * scale
    # (n_transmits, n_elements, t) -> (n_transmits, t, n_elements)
    return np.ascontiguousarray(np.transpose(out, (0, 2, 1)))


def fit_global_scale(channels: list, cfg: PreprocConfig) -> float:
    """Scale factor making the dataset-wide RMS of preprocessed tensors 1."""
    acc = 0.0
    n = 0
    for ch in channels:
        traces = gain_correct(ch.traces, cfg.gain_rate, ch.sample_rate)
        cropped = crop_transmit(ChannelData(traces=traces.astype(np.float32),
                                            sample_rate=ch.sample_rate), cfg.crop_time)
        dec = decimate(cropped.traces.astype(np.float64), cfg.target_time_len)
        acc += float(np.sum(dec ** 2))
        n += dec.size
    rms = math.sqrt(acc / n) if n else 0.0
    return 1.0 / rms if rms > 0 else 1.0


def label_to_units(speed_map: np.ndarray, cfg: PreprocConfig) -> np.ndarray:
    """m/s -> dimensionless network units: (v - offset) / span."""
    return (np.asarray(speed_map, dtype=np.float64) - cfg.label_offset) / cfg.label_span


def units_to_label(units_map: np.ndarray, cfg: PreprocConfig) -> np.ndarray:
    """Inverse of label_to_units."""
    return np.asarray(units_map, dtype=np.float64) * cfg.label_span + cfg.label_offset
