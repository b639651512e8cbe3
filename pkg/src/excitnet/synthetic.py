"""Synthetic test material: pulse-train vowels through known formant filters."""

import numpy as np

from . import dsp

# (centre Hz, bandwidth Hz). The upper resonances keep energy up to 12 kHz;
# without them a 20 ms order-40 analysis cannot pin down the high LSFs.
UPPER_RESONANCES = (
    (4500.0, 300.0), (5500.0, 400.0), (6500.0, 500.0), (7500.0, 600.0),
    (8500.0, 700.0), (9500.0, 800.0), (10500.0, 900.0), (11500.0, 1000.0),
)
VOWEL_A = ((700.0, 130.0), (1220.0, 70.0), (2600.0, 160.0), (3500.0, 250.0)) + UPPER_RESONANCES
VOWEL_I = ((300.0, 60.0), (2300.0, 100.0), (3000.0, 200.0), (3700.0, 250.0)) + UPPER_RESONANCES
VOWEL_U = ((320.0, 70.0), (800.0, 90.0), (2300.0, 150.0), (3400.0, 250.0)) + UPPER_RESONANCES


def formant_lpc(formants=VOWEL_A, sample_rate=dsp.DEFAULT_SAMPLE_RATE, order=dsp.LPC_ORDER):
    """Predictor (zero-padded to ``order``) whose poles sit on the given formants."""
    poly = np.array([1.0])
    for freq, bw in formants:
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2.0 * np.pi * freq / sample_rate
        poly = np.convolve(poly, [1.0, -2.0 * r * np.cos(theta), r * r])
    a = -poly[1:]
    if a.shape[0] > order:
        raise ValueError("too many formants for the requested order")
    return np.concatenate([a, np.zeros(order - a.shape[0])])


def pulse_train(n, period, offset=0):
    e = np.zeros(n)
    e[offset::period] = 1.0
    return e


def synthetic_vowel(duration=0.5, f0=100.0, sample_rate=dsp.DEFAULT_SAMPLE_RATE,
                    formants=VOWEL_A, noise=0.0, peak=0.5, seed=0):
    """Pulse train (plus optional white noise) through a fixed formant filter.

    Returns ``(signal, generator_lpc)``; the signal is scaled to ``peak``.
    """
    n = int(round(duration * sample_rate))
    period = int(round(sample_rate / f0))
    e = pulse_train(n, period)
    if noise > 0.0:
        e = e + noise * np.random.default_rng(seed).standard_normal(n)
    a = formant_lpc(formants, sample_rate)
    x = dsp.lp_synthesis(e, a[None, :], n)
    x *= peak / np.max(np.abs(x))
    return dsp.Signal(x, sample_rate), a


def vowel_corpus(n_utts=4, duration=0.5, sample_rate=dsp.DEFAULT_SAMPLE_RATE, seed=0):
    """A few synthetic vowels with varied pitch and formants."""
    rng = np.random.default_rng(seed)
    vowels = (VOWEL_A, VOWEL_I, VOWEL_U)
    out = []
    for i in range(n_utts):
        f0 = float(rng.uniform(90.0, 220.0))
        sig, _ = synthetic_vowel(duration, f0, sample_rate, vowels[i % len(vowels)],
                                 noise=0.01, seed=int(rng.integers(1 << 31)))
        out.append(sig)
    return out
