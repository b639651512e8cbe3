"""Frame-level conditioning features.

Layout of one 79-dim frame vector::

    [ lsf (40) | sew (32) | rew (4) | log_f0 | gain | vuv ]

Values produced by :func:`analyze` are rounded to float32 precision so that an
EXNF round trip is bit-exact; arithmetic on them stays in float64.
"""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp

N_LSF = 40
N_SEW = 32
N_REW = 4
FEATURE_DIM = N_LSF + N_SEW + N_REW + 3

LSF = slice(0, N_LSF)
SEW = slice(N_LSF, N_LSF + N_SEW)
REW = slice(N_LSF + N_SEW, N_LSF + N_SEW + N_REW)
LOG_F0 = N_LSF + N_SEW + N_REW
GAIN = LOG_F0 + 1
VUV = GAIN + 1

F0_MIN = 60.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.3
SILENCE_FLOOR = 1e-8  # mean-square energy below which a frame is never voiced
GAIN_FLOOR = 1e-10
STD_FLOOR = 1e-8
SEW_SMOOTH = 2  # moving average over +-2 frames

EXNF_MAGIC = b"EXNF"
EXNS_MAGIC = b"EXNS"
EXNF_VERSION = 1


@dataclass
class AnalysisConfig:
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    frame_ms: float = 20.0
    shift_ms: float = 5.0
    lpc_order: int = N_LSF
    f0_min: float = F0_MIN
    f0_max: float = F0_MAX
    voicing_threshold: float = VOICING_THRESHOLD

    @property
    def frame_len(self):
        return dsp.ms_to_samples(self.frame_ms, self.sample_rate)

    @property
    def shift(self):
        return dsp.ms_to_samples(self.shift_ms, self.sample_rate)


@dataclass
class AcousticFrame:
    lsf: np.ndarray
    sew: np.ndarray
    rew: np.ndarray
    log_f0: float
    gain: float
    vuv: int

    def to_vector(self):
        return np.concatenate(
            [self.lsf, self.sew, self.rew, [self.log_f0, self.gain, float(self.vuv)]]
        )

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (FEATURE_DIM,):
            raise ValueError(f"expected a {FEATURE_DIM}-dim vector, got shape {v.shape}")
        return cls(v[LSF].copy(), v[SEW].copy(), v[REW].copy(), float(v[LOG_F0]),
                   float(v[GAIN]), int(round(v[VUV])))


@dataclass
class AcousticFeatureSequence:
    data: np.ndarray
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    frame_len: int = 480
    shift: int = 120

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != FEATURE_DIM:
            raise ValueError(f"feature matrix must be (n_frames, {FEATURE_DIM})")

    def __len__(self):
        return self.data.shape[0]

    @property
    def n_frames(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.n_frames * self.shift

    @property
    def lsf(self):
        return self.data[:, LSF]

    @property
    def sew(self):
        return self.data[:, SEW]

    @property
    def rew(self):
        return self.data[:, REW]

    @property
    def log_f0(self):
        return self.data[:, LOG_F0]

    @property
    def gain(self):
        return self.data[:, GAIN]

    @property
    def vuv(self):
        return self.data[:, VUV]

    def frame(self, i):
        return AcousticFrame.from_vector(self.data[i])

    def lpc_track(self):
        return dsp.lsf_track_to_lpc(self.lsf)

    def with_data(self, data):
        return AcousticFeatureSequence(data, self.sample_rate, self.frame_len, self.shift)


# --------------------------------------------------------------------------
# per-frame measurements
# --------------------------------------------------------------------------


def compute_gain(frame):
    x = np.asarray(frame, dtype=np.float64)
    ms = float(np.mean(x * x)) if x.size else 0.0
    return 0.5 * math.log(max(ms, GAIN_FLOOR))


def estimate_f0(x, sample_rate, frame_len, shift, f0_min=F0_MIN, f0_max=F0_MAX,
                threshold=VOICING_THRESHOLD):
    """Normalized-autocorrelation pitch tracker.

    Returns ``(f0, vuv)`` per frame; ``f0`` is 0 on unvoiced frames.
    """
    x = np.asarray(x.samples if isinstance(x, dsp.Signal) else x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty input")
    n = dsp.num_frames(x.shape[0], frame_len, shift)
    lag_min = max(1, int(math.ceil(sample_rate / f0_max)))
    lag_max = int(math.floor(sample_rate / f0_min))
    padded = np.concatenate([x, np.zeros(frame_len + lag_max)])
    sq = np.concatenate([[0.0], np.cumsum(padded * padded)])
    lags = np.arange(lag_min, lag_max + 1)
    f0 = np.zeros(n)
    vuv = np.zeros(n, dtype=np.int64)
    for i in range(n):
        s = i * shift
        a = padded[s : s + frame_len]
        ea = sq[s + frame_len] - sq[s]
        if ea / frame_len <= SILENCE_FLOOR:
            continue
        seg = padded[s + lag_min : s + lag_max + frame_len]
        num = np.correlate(seg, a, mode="valid")
        eb = sq[s + lags + frame_len] - sq[s + lags]
        den = np.sqrt(ea * np.maximum(eb, 0.0))
        r = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
        best = int(np.argmax(r))
        if r[best] < threshold:
            continue
        # first local maximum reaching 90% of the global one (avoids sub-octave picks)
        j = best
        for k in range(1, r.shape[0] - 1):
            if r[k] >= 0.9 * r[best] and r[k] >= r[k - 1] and r[k] >= r[k + 1]:
                j = k
                break
        lag = float(lags[j])
        if 0 < j < r.shape[0] - 1:
            y0, y1, y2 = r[j - 1], r[j], r[j + 1]
            curv = y0 - 2.0 * y1 + y2
            if curv < 0.0:
                lag += 0.5 * (y0 - y2) / curv
        f0[i] = sample_rate / lag
        vuv[i] = 1
    return f0, vuv


def _characteristic_waveform(excitation, center, period):
    start = center - period // 2
    seg = np.zeros(period)
    lo, hi = max(start, 0), min(start + period, excitation.shape[0])
    if hi > lo:
        seg[lo - start : hi - start] = excitation[lo:hi]
    mag = np.abs(np.fft.rfft(seg))
    bins = 2.0 * np.pi * np.arange(mag.shape[0]) / period
    grid = np.linspace(0.0, np.pi, N_SEW)
    logmag = np.log(np.maximum(np.interp(grid, bins, mag), 1e-8))
    return logmag - logmag.mean()


def extract_sew_rew(excitation, f0, vuv, sample_rate, frame_len, shift):
    """Simplified pitch-synchronous SEW/REW decomposition.

    One pitch cycle around each frame centre becomes a 32-point, mean-removed
    log-magnitude characteristic waveform. SEW is its +-2-frame moving average;
    REW is the first four dims of what remains.
    """
    e = np.asarray(excitation, dtype=np.float64)
    n = np.asarray(f0).shape[0]
    cw = np.zeros((n, N_SEW))
    for i in range(n):
        period = int(round(sample_rate / f0[i])) if vuv[i] and f0[i] > 0 else shift
        cw[i] = _characteristic_waveform(e, i * shift + frame_len // 2, max(period, 2))
    csum = np.concatenate([np.zeros((1, N_SEW)), np.cumsum(cw, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - SEW_SMOOTH, 0)
    hi = np.minimum(idx + SEW_SMOOTH + 1, n)
    sew = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    rew = (cw - sew)[:, :N_REW]
    return sew, rew


def analyze(signal, config=None):
    """Full feature extraction on the 20 ms / 5 ms grid."""
    config = config or AnalysisConfig()
    if isinstance(signal, dsp.Signal):
        if signal.sample_rate != config.sample_rate:
            raise ValueError(
                f"signal is {signal.sample_rate} Hz, analysis expects {config.sample_rate} Hz"
            )
        x = signal.samples
    else:
        x = np.asarray(signal, dtype=np.float64)
    if config.lpc_order != N_LSF:
        raise ValueError(f"feature layout is fixed to LPC order {N_LSF}")
    flen, shift, sr = config.frame_len, config.shift, config.sample_rate
    frames = dsp.frame_signal(x, flen, shift)
    n = frames.shape[0]
    A, _ = dsp.lpc_from_frames(frames, config.lpc_order)
    lsf = dsp.lpc_track_to_lsf(A)
    f0, vuv = estimate_f0(x, sr, flen, shift, config.f0_min, config.f0_max,
                          config.voicing_threshold)
    xt = np.zeros(n * shift)
    m = min(x.shape[0], n * shift)
    xt[:m] = x[:m]
    excitation = dsp.lp_analysis(xt, A, shift)
    sew, rew = extract_sew_rew(excitation, f0, vuv, sr, flen, shift)
    data = np.empty((n, FEATURE_DIM))
    data[:, LSF] = lsf
    data[:, SEW] = sew
    data[:, REW] = rew
    data[:, LOG_F0] = np.where(vuv > 0, np.log(np.maximum(f0, config.f0_min)), math.log(config.f0_min))
    data[:, GAIN] = [compute_gain(fr) for fr in frames]
    data[:, VUV] = vuv
    data = data.astype(np.float32).astype(np.float64)
    return AcousticFeatureSequence(data, sr, flen, shift)


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        if self.mean.shape != (FEATURE_DIM,) or self.std.shape != (FEATURE_DIM,):
            raise ValueError(f"stats must be {FEATURE_DIM}-dim")

    def as_float32(self):
        """Stats rounded the way EXNS and checkpoints store them."""
        return FeatureStats(self.mean.astype(np.float32), self.std.astype(np.float32))


def _data(seq):
    return seq.data if isinstance(seq, AcousticFeatureSequence) else np.asarray(seq, dtype=np.float64)


def compute_stats(sequences):
    """Per-dim mean/std over all frames; exact summation, so input order is irrelevant."""
    mats = [_data(s) for s in sequences]
    if not mats:
        raise ValueError("no sequences")
    for m in mats:
        if m.ndim != 2 or m.shape[1] != FEATURE_DIM:
            raise ValueError(f"dimension mismatch: expected {FEATURE_DIM} columns")
    allf = np.concatenate(mats, axis=0)
    n = allf.shape[0]
    mean = np.array([math.fsum(allf[:, d]) / n for d in range(FEATURE_DIM)])
    std = np.array(
        [math.sqrt(math.fsum((allf[:, d] - mean[d]) ** 2) / n) for d in range(FEATURE_DIM)]
    )
    # the binary voicing flag bypasses normalization
    mean[VUV] = 0.0
    std[VUV] = 1.0
    return FeatureStats(mean, std)


def _check_dims(data, stats):
    if data.ndim != 2 or data.shape[1] != stats.mean.shape[0]:
        raise ValueError(f"dimension mismatch: features {data.shape}, stats {stats.mean.shape}")


def normalize(seq, stats):
    data = _data(seq)
    _check_dims(data, stats)
    out = (data - stats.mean) / stats.std
    out[:, VUV] = data[:, VUV]
    return seq.with_data(out) if isinstance(seq, AcousticFeatureSequence) else out


def denormalize(seq, stats):
    data = _data(seq)
    _check_dims(data, stats)
    out = data * stats.std + stats.mean
    out[:, VUV] = data[:, VUV]
    return seq.with_data(out) if isinstance(seq, AcousticFeatureSequence) else out


def upsample_features(seq, shift=None):
    """Duplicate each frame ``shift`` times: row ``n`` is frame ``n // shift``."""
    data = _data(seq)
    if shift is None:
        shift = seq.shift
    return np.repeat(data, shift, axis=0)


# --------------------------------------------------------------------------
# EXNF / EXNS files
# --------------------------------------------------------------------------

_EXNF_HEADER = struct.Struct("<4sIIIIII")
_EXNS_HEADER = struct.Struct("<4sI")


def _atomic_write(path, payload):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def features_to_bytes(seq):
    head = _EXNF_HEADER.pack(EXNF_MAGIC, EXNF_VERSION, seq.n_frames, FEATURE_DIM,
                             seq.sample_rate, seq.frame_len, seq.shift)
    return head + seq.data.astype("<f4").tobytes()


def features_from_bytes(buf):
    if len(buf) < _EXNF_HEADER.size:
        raise ValueError("EXNF file truncated")
    magic, version, n, dim, sr, flen, shift = _EXNF_HEADER.unpack_from(buf)
    if magic != EXNF_MAGIC:
        raise ValueError("not an EXNF file")
    if version != EXNF_VERSION:
        raise ValueError(f"unsupported EXNF version {version}")
    if dim != FEATURE_DIM:
        raise ValueError(f"EXNF dimension {dim}, expected {FEATURE_DIM}")
    body = buf[_EXNF_HEADER.size :]
    if len(body) != n * dim * 4:
        raise ValueError("EXNF file truncated")
    data = np.frombuffer(body, dtype="<f4").reshape(n, dim).astype(np.float64)
    return AcousticFeatureSequence(data, sr, flen, shift)


def save_features(seq, path):
    _atomic_write(path, features_to_bytes(seq))


def load_features(path):
    return features_from_bytes(Path(path).read_bytes())


def save_stats(stats, path):
    payload = _EXNS_HEADER.pack(EXNS_MAGIC, FEATURE_DIM)
    payload += stats.mean.astype("<f4").tobytes() + stats.std.astype("<f4").tobytes()
    _atomic_write(path, payload)


def load_stats(path):
    buf = Path(path).read_bytes()
    if len(buf) < _EXNS_HEADER.size:
        raise ValueError("EXNS file truncated")
    magic, dim = _EXNS_HEADER.unpack_from(buf)
    if magic != EXNS_MAGIC:
        raise ValueError("not an EXNS file")
    body = buf[_EXNS_HEADER.size :]
    if len(body) != 2 * dim * 4:
        raise ValueError("EXNS file truncated")
    arr = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return FeatureStats(arr[:dim], arr[dim:])
