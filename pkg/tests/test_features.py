import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import lfilter

from excitnet import dsp, features as F
from excitnet.synthetic import pulse_train, synthetic_vowel

SR = 24000


def _rew_sew_ratio(excitation, f0, vuv):
    sew, rew = F.extract_sew_rew(excitation, f0, vuv, SR, 480, 120)
    return np.mean(rew**2) / np.mean(sew[:, : F.N_REW] ** 2)


# -- F0 ----------------------------------------------------------------------


def test_f0_sine():
    x = np.sin(2 * np.pi * 100.0 * np.arange(SR) / SR)
    f0, vuv = F.estimate_f0(x, SR, 480, 120)
    interior = slice(2, -2)
    assert np.all(vuv[interior] == 1)
    assert np.all((f0[interior] >= 99.0) & (f0[interior] <= 101.0))


def test_f0_white_noise_unvoiced():
    x = np.random.default_rng(0).standard_normal(SR)
    _, vuv = F.estimate_f0(x, SR, 480, 120)
    assert np.mean(vuv == 0) >= 0.9


def test_f0_silence():
    seq = F.analyze(np.zeros(SR))
    assert np.all(seq.vuv == 0)
    assert np.allclose(seq.log_f0, math.log(F.F0_MIN), atol=1e-6)


def test_f0_empty():
    with pytest.raises(ValueError):
        F.estimate_f0(np.zeros(0), SR, 480, 120)


# -- gain --------------------------------------------------------------------


def test_gain_cases():
    assert F.compute_gain(np.zeros(480)) == pytest.approx(0.5 * math.log(1e-10))
    assert F.compute_gain(np.ones(480)) == 0.0
    x = np.random.default_rng(1).standard_normal(480)
    assert F.compute_gain(2 * x) - F.compute_gain(x) == pytest.approx(math.log(2.0))


# -- SEW / REW -----------------------------------------------------------------


def test_sew_rew_dimensions():
    e = pulse_train(SR // 2, 200)
    f0 = np.full(97, SR / 200.0)
    sew, rew = F.extract_sew_rew(e, f0, np.ones(97, dtype=int), SR, 480, 120)
    assert sew.shape == (97, 32) and rew.shape == (97, 4)


def test_periodic_excitation_has_small_rew():
    # a bare unit pulse has a flat spectrum (SEW and REW both vanish); give it a shape
    e = lfilter([1.0, 0.6, 0.3, -0.2], [1.0], pulse_train(SR // 2, 200))
    n = dsp.num_frames(e.shape[0], 480, 120)
    assert _rew_sew_ratio(e, np.full(n, SR / 200.0), np.ones(n, dtype=int)) <= 0.05


def test_noise_excitation_has_large_rew():
    e = np.random.default_rng(2).standard_normal(SR // 2)
    n = dsp.num_frames(e.shape[0], 480, 120)
    assert _rew_sew_ratio(e, np.zeros(n), np.zeros(n, dtype=int)) >= 0.5


# -- full analysis -----------------------------------------------------------


def test_analyze_shape():
    seq = F.analyze(np.random.default_rng(3).standard_normal(SR) * 0.1)
    assert seq.data.shape == (197, 79)
    assert seq.n_frames == dsp.frame_signal(np.zeros(SR), 480, 120).shape[0]


def test_vowel_lsfs_track_generator():
    sig, a = synthetic_vowel(0.5, 120.0)
    seq = F.analyze(sig)
    ref = dsp.lpc_to_lsf(a).w
    voiced = np.nonzero(seq.vuv > 0)[0][3:-3]
    assert voiced.size > 50
    assert np.max(np.abs(seq.lsf[voiced] - ref)) <= 0.02


def test_silence_features():
    seq = F.analyze(np.zeros(SR // 4))
    flat = np.pi * np.arange(1, 41) / 41
    assert np.all(seq.vuv == 0)
    assert np.allclose(seq.gain, 0.5 * math.log(1e-10), atol=1e-5)
    assert np.max(np.abs(seq.lsf - flat)) <= 1e-6


def test_sample_rate_mismatch():
    with pytest.raises(ValueError, match="Hz"):
        F.analyze(dsp.Signal(np.zeros(1000), 16000))


def test_frame_vector_round_trip():
    v = np.arange(79, dtype=np.float64)
    v[F.VUV] = 1.0
    fr = F.AcousticFrame.from_vector(v)
    assert fr.vuv == 1 and np.array_equal(fr.to_vector(), v)
    with pytest.raises(ValueError):
        F.AcousticFrame.from_vector(np.zeros(78))


# -- normalization ---------------------------------------------------------------


def test_stats_by_hand():
    a = np.zeros((2, 79))
    b = np.zeros((2, 79))
    a[:, 0] = [1.0, 2.0]
    b[:, 0] = [3.0, 6.0]
    a[:, 5] = 7.0
    b[:, 5] = 7.0
    st_ = F.compute_stats([a, b])
    assert st_.mean[0] == 3.0
    assert st_.std[0] == pytest.approx(math.sqrt((4 + 1 + 0 + 9) / 4))
    # constant dim: std floor, normalized value 0
    assert st_.std[5] == F.STD_FLOOR
    assert np.all(F.normalize(a, st_)[:, 5] == 0.0)
    assert st_.mean[F.VUV] == 0.0 and st_.std[F.VUV] == 1.0


def test_stats_order_independent():
    rng = np.random.default_rng(4)
    mats = [rng.standard_normal((10, 79)) * 1e3 for _ in range(4)]
    s1, s2 = F.compute_stats(mats), F.compute_stats(mats[::-1])
    assert np.array_equal(s1.mean, s2.mean) and np.array_equal(s1.std, s2.std)


def test_normalize_round_trip_keeps_vuv():
    rng = np.random.default_rng(5)
    d = rng.standard_normal((30, 79))
    d[:, F.VUV] = rng.integers(0, 2, 30)
    seq = F.AcousticFeatureSequence(d)
    st_ = F.compute_stats([seq])
    n = F.normalize(seq, st_)
    assert set(np.unique(n.vuv)) <= {0.0, 1.0}
    assert np.max(np.abs(F.denormalize(n, st_).data - d)) <= 1e-10


def test_dimension_checks():
    with pytest.raises(ValueError):
        F.compute_stats([np.zeros((3, 78))])
    st_ = F.FeatureStats(np.zeros(79), np.ones(79))
    with pytest.raises(ValueError, match="mismatch"):
        F.normalize(np.zeros((3, 80)), st_)


def test_upsample():
    d = np.random.default_rng(6).standard_normal((197, 79))
    up = F.upsample_features(F.AcousticFeatureSequence(d))
    assert up.shape == (23640, 79)
    assert np.array_equal(up[120], d[1]) and np.array_equal(up[119], d[0])
    blocks = up.reshape(197, 120, 79)
    assert np.all(blocks == blocks[:, :1, :])


# -- files -----------------------------------------------------------------


def test_exnf_bit_exact(tmp_path):
    sig, _ = synthetic_vowel(0.2, 150.0)
    seq = F.analyze(sig)
    F.save_features(seq, tmp_path / "a.exnf")
    back = F.load_features(tmp_path / "a.exnf")
    assert np.array_equal(back.data, seq.data)
    assert (back.sample_rate, back.frame_len, back.shift) == (SR, 480, 120)


def test_exnf_rejects_bad_input():
    seq = F.AcousticFeatureSequence(np.zeros((3, 79)))
    buf = F.features_to_bytes(seq)
    with pytest.raises(ValueError, match="truncated"):
        F.features_from_bytes(buf[:-1])
    with pytest.raises(ValueError, match="not an EXNF"):
        F.features_from_bytes(b"XXXX" + buf[4:])


def test_exns_round_trip(tmp_path):
    st_ = F.FeatureStats(np.linspace(-1, 1, 79), np.linspace(0.5, 2, 79)).as_float32()
    F.save_stats(st_, tmp_path / "s.exns")
    back = F.load_stats(tmp_path / "s.exns")
    assert np.array_equal(back.mean, st_.mean) and np.array_equal(back.std, st_.std)


@settings(max_examples=25, deadline=None)
@given(st.integers(480, 3000))
def test_frame_count_property(n):
    x = np.random.default_rng(n).standard_normal(n) * 0.1
    seq = F.analyze(x)
    assert seq.n_frames == dsp.num_frames(n, 480, 120)
