"""16-bit PCM mono WAV reading and writing on top of the stdlib ``wave`` module."""

import wave
from pathlib import Path

import numpy as np

from .dsp import Signal

PCM16_SCALE = 32768.0


class WavError(ValueError):
    pass


def resample_linear(x, sr_in, sr_out):
    """Plain linear interpolation onto the new grid. No anti-alias filtering."""
    if sr_in == sr_out:
        return np.asarray(x, dtype=np.float64).copy()
    n_out = int(round(x.shape[0] * sr_out / sr_in))
    t_out = np.arange(n_out) * (sr_in / sr_out)
    return np.interp(t_out, np.arange(x.shape[0]), x)


def read_wav(path, expected_rate=None, resample=False):
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError, OSError) as exc:
        raise WavError(f"{path}: cannot read WAV ({exc})") from None
    if channels != 1:
        raise WavError(f"{path}: {channels} channels, only mono is supported")
    if width != 2:
        raise WavError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
    if n == 0:
        raise WavError(f"{path}: no samples")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM16_SCALE
    if expected_rate is not None and rate != expected_rate:
        if not resample:
            raise WavError(f"{path}: {rate} Hz, expected {expected_rate} Hz (use --resample)")
        x = resample_linear(x, rate, expected_rate)
        rate = expected_rate
    return Signal(x, rate)


def to_pcm16(x):
    return np.clip(np.round(np.asarray(x) * PCM16_SCALE), -32768, 32767).astype("<i2")


def wav_bytes(signal):
    import io

    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(signal.sample_rate))
        w.writeframes(to_pcm16(signal.samples).tobytes())
    return buf.getvalue()


def write_wav(path, signal):
    """Atomic write: a sibling temp file renamed into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(wav_bytes(signal))
    tmp.replace(path)
