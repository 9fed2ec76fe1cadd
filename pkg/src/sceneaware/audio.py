"""Sample-level audio primitives.

WAV input/output, channel and rate normalization, linear convolution and
SNR-controlled noise mixing. Every function here is pure: it takes buffers
and returns new buffers, never mutating its arguments.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

__all__ = [
    "AudioBuffer",
    "AudioError",
    "read_audio",
    "write_audio",
    "downmix_mono",
    "resample",
    "convolve",
    "fit_noise",
    "crop_noise",
    "mix_at_snr",
    "rms",
    "NO_NOISE",
]

#: Sentinel SNR meaning "noise disabled".
NO_NOISE = math.inf

# Kaiser beta for ~87 dB stopband rejection (0.1102 * (A - 8.7) with A = 87).
_KAISER_BETA = 8.6
_PCM16_SCALE = 32768.0


class AudioError(ValueError):
    """Raised for invalid audio input (empty, non-finite, unsupported, mismatched)."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Audio samples plus their sample rate.

    ``samples`` is 1-D for mono audio or 2-D ``(frames, channels)`` for
    multichannel audio. Stored as float64.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim not in (1, 2):
            raise AudioError(f"samples must be 1-D or 2-D, got {samples.ndim}-D")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("samples contain NaN or Inf")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @property
    def is_mono(self) -> bool:
        return self.samples.ndim == 1


def _require_mono(buf: AudioBuffer, name: str = "buffer"):
    if not buf.is_mono:
        raise AudioError(f"{name} must be mono, got {buf.channels} channels")
    if len(buf) == 0:
        raise AudioError(f"{name} is empty")


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def read_audio(path, downmix: str | None = None, keep_channels: bool = False) -> AudioBuffer:
    """Read a PCM or IEEE-float WAV file into a float buffer in [-1, 1].

    Multichannel files raise :class:`AudioError` unless ``downmix`` names a
    policy (see :func:`downmix_mono`) or ``keep_channels`` is set.
    """
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises ValueError/struct.error on corrupt headers
        raise AudioError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.int32:
        # 24-bit files are left-justified into int32 by scipy
        samples = data.astype(np.float64) / 2.0**31
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported sample format {data.dtype} in {path}")

    if samples.shape[0] == 0:
        raise AudioError(f"{path} contains no samples")
    buf = AudioBuffer(samples, rate)
    if buf.is_mono or keep_channels:
        return buf
    if downmix is None:
        raise AudioError(f"{path} has {buf.channels} channels; pass downmix='first' or 'average'")
    return downmix_mono(buf, downmix)


def write_audio(buffer: AudioBuffer, path, bit_depth: str = "float32") -> int:
    """Write a mono buffer as WAV. Returns the number of clipped samples.

    ``pcm16`` output clips amplitudes to [-1, 1]; ``float32`` is written
    unclipped.
    """
    _require_mono(buffer)
    x = buffer.samples
    if bit_depth == "float32":
        wavfile.write(os.fspath(path), buffer.sample_rate, x.astype(np.float32))
        return 0
    if bit_depth != "pcm16":
        raise ValueError(f"bit_depth must be 'pcm16' or 'float32', got {bit_depth!r}")
    clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    ints = np.clip(np.round(x * _PCM16_SCALE), -32768, 32767).astype(np.int16)
    wavfile.write(os.fspath(path), buffer.sample_rate, ints)
    return clipped


def downmix_mono(buffer: AudioBuffer, policy: str = "first") -> AudioBuffer:
    """Reduce a multichannel buffer to one channel.

    ``first`` keeps channel 0 (no comb filtering between spatially separated
    microphones); ``average`` takes the per-sample mean of all channels.
    """
    if buffer.is_mono:
        return buffer
    if policy == "first":
        return AudioBuffer(buffer.samples[:, 0].copy(), buffer.sample_rate)
    if policy == "average":
        return AudioBuffer(buffer.samples.mean(axis=1), buffer.sample_rate)
    raise ValueError(f"unknown downmix policy {policy!r}")


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Polyphase windowed-sinc resampling (Kaiser window).

    The output holds exactly ``round(n * target_rate / rate)`` samples.
    """
    _require_mono(buffer)
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == buffer.sample_rate:
        return buffer
    g = math.gcd(target_rate, buffer.sample_rate)
    up, down = target_rate // g, buffer.sample_rate // g
    y = sps.resample_poly(buffer.samples, up, down, window=("kaiser", _KAISER_BETA))
    n_out = int(round(len(buffer) * target_rate / buffer.sample_rate))
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return AudioBuffer(y, target_rate)


def convolve(signal: AudioBuffer, kernel: AudioBuffer) -> AudioBuffer:
    """Full linear convolution via overlap-add FFT blocks.

    Output length is ``len(signal) + len(kernel) - 1``.
    """
    _require_mono(signal, "signal")
    _require_mono(kernel, "kernel")
    if signal.sample_rate != kernel.sample_rate:
        raise AudioError(
            f"sample rate mismatch: signal {signal.sample_rate} Hz, kernel {kernel.sample_rate} Hz"
        )
    y = sps.oaconvolve(signal.samples, kernel.samples, mode="full")
    return AudioBuffer(y, signal.sample_rate)


def fit_noise(noise: AudioBuffer, length: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Crop (or loop) ``noise`` to ``length`` samples from a random offset.

    Returns the fitted samples and the offset drawn, so the same crop can be
    replayed with :func:`crop_noise`.
    """
    _require_mono(noise, "noise")
    span = len(noise) - length + 1 if len(noise) > length else len(noise)
    offset = int(rng.integers(0, span))
    return crop_noise(noise, length, offset), offset


def crop_noise(noise: AudioBuffer, length: int, offset: int) -> np.ndarray:
    """Take ``length`` samples starting at ``offset``, wrapping around if needed."""
    idx = (offset + np.arange(length)) % len(noise)
    return noise.samples[idx]


def mix_at_snr(
    speech: AudioBuffer,
    noise: AudioBuffer | None,
    snr_db: float,
    seed: int | None = None,
    offset: int | None = None,
) -> AudioBuffer:
    """Add noise to ``speech`` at a component SNR of ``snr_db``.

    The noise is cropped or looped to the speech length, starting at
    ``offset`` when given, else at an offset drawn from ``seed``. An SNR of
    ``NO_NOISE`` (+inf) or ``noise=None`` returns the speech unchanged.
    """
    _require_mono(speech, "speech")
    if noise is None or snr_db == NO_NOISE:
        return speech
    if speech.sample_rate != noise.sample_rate:
        raise AudioError(
            f"sample rate mismatch: speech {speech.sample_rate} Hz, noise {noise.sample_rate} Hz"
        )
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    speech_rms = rms(speech.samples)
    if speech_rms == 0.0:
        raise AudioError("speech is silent; SNR is undefined")
    if rms(noise.samples) == 0.0:
        raise AudioError("noise is silent")
    if offset is None:
        n, _ = fit_noise(noise, len(speech), np.random.default_rng(seed))
    else:
        n = crop_noise(noise, len(speech), offset)
    n_rms = rms(n)
    if n_rms == 0.0:
        raise AudioError("noise crop is silent")
    gain = speech_rms / (n_rms * 10.0 ** (snr_db / 20.0))
    return AudioBuffer(speech.samples + gain * n, speech.sample_rate)
