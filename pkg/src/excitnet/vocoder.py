"""End-to-end pipelines: dataset preparation, training, synthesis, evaluation.

Two vocoder kinds share everything except the target domain:

* ``excitnet``: the network models the LP residual; synthesis runs the
  generated excitation through the all-pole filter rebuilt from the LSFs of the
  conditioning features.
* ``wavenet_ns``: the network models speech passed through one time-invariant
  noise-shaping filter; synthesis applies the inverse of that filter.
"""

import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, features, net

EXCITATION_PEAK = 0.99
SEGSNR_MIN = -10.0
SEGSNR_MAX = 35.0
LSD_NFFT = 1024
LSD_POWER_FLOOR = 1e-12
TOY_BATCH = 4800


class VocoderKind(str, enum.Enum):
    EXCITNET = "excitnet"
    WAVENET_NS = "wavenet_ns"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown vocoder kind {value!r} (expected one of {names})") from None


@dataclass
class TrainingExample:
    """Codes at sample rate plus normalized conditions at frame rate.

    ``conditions`` gives the sample-rate view (each frame repeated ``shift``
    times); training itself works from ``frames`` to avoid that copy.
    """

    codes: np.ndarray
    frames: np.ndarray
    shift: int
    utt_id: str
    scale: float

    def __post_init__(self):
        if self.codes.shape[0] != self.frames.shape[0] * self.shift:
            raise ValueError(
                f"{self.utt_id}: {self.codes.shape[0]} codes vs {self.frames.shape[0]} frames"
                f" x shift {self.shift}"
            )

    def __len__(self):
        return self.codes.shape[0]

    @property
    def conditions(self):
        return features.upsample_features(self.frames, self.shift)


@dataclass
class Dataset:
    kind: VocoderKind
    examples: list
    stats: features.FeatureStats
    scale: float
    noise_filter: dsp.NoiseShapingFilter = None
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    frame_len: int = 480
    shift: int = 120

    @property
    def n_samples(self):
        return sum(len(ex) for ex in self.examples)


def _f32(x):
    return float(np.float32(x))


def _scale_for_peak(peak):
    """Largest float32 scale with ``peak * scale <= EXCITATION_PEAK``."""
    if peak <= 0.0:
        raise ValueError("target signal is all zeros; cannot set the amplitude scale")
    s = np.float32(EXCITATION_PEAK / peak)
    while float(s) * peak > EXCITATION_PEAK:
        s = np.nextafter(s, np.float32(0))
    return float(s)


def _as_signal(x, sample_rate):
    return x if isinstance(x, dsp.Signal) else dsp.Signal(np.asarray(x, dtype=np.float64), sample_rate)


def align(x, n):
    """Truncate or zero-pad ``x`` to exactly ``n`` samples."""
    x = np.asarray(x.samples if isinstance(x, dsp.Signal) else x, dtype=np.float64)
    out = np.zeros(n)
    m = min(n, x.shape[0])
    out[:m] = x[:m]
    return out


def target_signal(x, seq, kind, noise_filter=None):
    """The pre-scaling waveform the network learns for ``kind``."""
    xt = align(x, seq.n_samples)
    if kind is VocoderKind.EXCITNET:
        return dsp.lp_analysis(xt, seq.lpc_track(), seq.shift)
    return dsp.apply_noise_shaping(xt, noise_filter)


def prepare_dataset(signals, kind, stats=None, config=None, ids=None, noise_filter=None,
                    scale=None):
    """Analyze, build targets, scale, mu-law encode, and normalize conditions.

    ``stats``, ``noise_filter`` and ``scale`` are derived from ``signals`` when
    omitted; pass the training-split values to prepare held-out data.
    """
    kind = VocoderKind.parse(kind)
    config = config or features.AnalysisConfig()
    signals = [_as_signal(s, config.sample_rate) for s in signals]
    if not signals:
        raise ValueError("no input signals")
    ids = list(ids) if ids is not None else [f"utt{i:04d}" for i in range(len(signals))]
    if len(ids) != len(signals):
        raise ValueError("one id per signal required")
    seqs = [features.analyze(s, config) for s in signals]
    if stats is None:
        stats = features.compute_stats(seqs)
    stats = stats.as_float32()
    if kind is VocoderKind.WAVENET_NS and noise_filter is None:
        aligned = [align(s, q.n_samples) for s, q in zip(signals, seqs)]
        derived = dsp.derive_noise_shaping_filter(aligned, config.lpc_order, config.frame_len,
                                                  config.shift)
        # stored as float32 in checkpoints, so use the rounded filter from the start
        a = derived.a.astype(np.float32).astype(np.float64)
        noise_filter = dsp.NoiseShapingFilter(dsp.LpcFrame(a, derived.lpc.residual_energy))
    targets = [target_signal(s, q, kind, noise_filter) for s, q in zip(signals, seqs)]
    peak = max(float(np.max(np.abs(t))) if t.size else 0.0 for t in targets)
    if scale is None:
        scale = _scale_for_peak(peak)
    elif peak * scale > 1.0:
        raise ValueError(
            f"scaled target peaks at {peak * scale:.4f} and would clip; recompute the scale"
        )
    examples = []
    for utt, seq, e in zip(ids, seqs, targets):
        codes = dsp.mu_law_encode(e * scale)
        cond = features.normalize(seq, stats).data.astype(np.float32)
        examples.append(TrainingExample(codes, cond, seq.shift, utt, scale))
    return Dataset(kind, examples, stats, scale, noise_filter if kind is VocoderKind.WAVENET_NS
                   else None, config.sample_rate, config.frame_len, config.shift)


# --------------------------------------------------------------------------
# dataset files (prepare output)
# --------------------------------------------------------------------------


def dataset_to_bytes(ds):
    arrays = {
        "kind": np.array(ds.kind.value),
        "ids": np.array([ex.utt_id for ex in ds.examples]),
        "framing": np.array([ds.sample_rate, ds.frame_len, ds.shift], dtype=np.int64),
        "scale": np.array(ds.scale, dtype=np.float64),
        "stats_mean": ds.stats.mean,
        "stats_std": ds.stats.std,
    }
    if ds.noise_filter is not None:
        arrays["noise_filter"] = ds.noise_filter.a
    for i, ex in enumerate(ds.examples):
        arrays[f"codes_{i}"] = ex.codes.astype(np.uint8)
        arrays[f"frames_{i}"] = ex.frames
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def dataset_from_bytes(buf):
    with np.load(io.BytesIO(buf), allow_pickle=False) as z:
        kind = VocoderKind.parse(str(z["kind"]))
        sr, flen, shift = (int(v) for v in z["framing"])
        scale = float(z["scale"])
        stats = features.FeatureStats(z["stats_mean"], z["stats_std"])
        nf = None
        if "noise_filter" in z:
            nf = dsp.NoiseShapingFilter(dsp.LpcFrame(z["noise_filter"].astype(np.float64), 0.0))
        examples = [
            TrainingExample(z[f"codes_{i}"].astype(np.int64), z[f"frames_{i}"], shift, str(u), scale)
            for i, u in enumerate(z["ids"])
        ]
    return Dataset(kind, examples, stats, scale, nf, sr, flen, shift)


def save_dataset(ds, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dataset_to_bytes(ds))
    tmp.replace(path)


def load_dataset(path):
    return dataset_from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    batch_size: int = TOY_BATCH
    seed: int = 0
    checkpoint_every: int = 0
    target_loss: float = None  # stop once a step's loss falls to this value


def context_length(net_config, shift):
    """Warm-up prefix (a whole number of frames) covering the receptive field."""
    rf = net.receptive_field(net_config)
    return -(-(rf - 1) // shift) * shift


def sample_window(ds, rng, batch_size, context):
    """A frame-aligned window: a random example, a random start frame.

    The start is drawn from ``[1 - span, n_frames - 1]`` and clamped into the
    utterance, which gives every frame the same chance of being covered
    (drawing it from ``[0, n_frames - span]`` would starve both ends).
    """
    lengths = np.array([len(ex) for ex in ds.examples], dtype=np.float64)
    i = int(rng.choice(len(ds.examples), p=lengths / lengths.sum()))
    ex = ds.examples[i]
    n_frames = ex.frames.shape[0]
    span = min(-(-batch_size // ex.shift), n_frames)
    f0 = min(max(int(rng.integers(1 - span, n_frames)), 0), n_frames - span)
    return net.make_window(ex.codes, ex.frames, ex.shift, f0 * ex.shift, span * ex.shift, context)


def checkpoint_extras(ds):
    extras = {
        "stats.mean": ds.stats.mean,
        "stats.std": ds.stats.std,
        "excitation_scale": np.array([ds.scale]),
        "framing": np.array([ds.sample_rate, ds.frame_len, ds.shift]),
    }
    if ds.noise_filter is not None:
        extras["noise_filter"] = ds.noise_filter.a
    return extras


def train_vocoder(ds, net_config=None, train_config=None, log=None, checkpoint_path=None,
                  resume=None):
    """Train on ``ds`` and return ``(checkpoint, losses)``.

    ``log(step, loss)`` is called after every step. With ``checkpoint_path`` set,
    checkpoints are written every ``checkpoint_every`` steps and at the end; if
    training diverges the last good checkpoint stays on disk and the error
    propagates.
    """
    if not ds.examples or ds.n_samples == 0:
        raise ValueError("empty dataset")
    tc = train_config or TrainConfig()
    if resume is not None:
        net_config = resume.config
        network = resume.network
        opt = resume.adam or net.AdamState.zeros_like(network.params)
        step = resume.step
    else:
        net_config = net_config or net.NetConfig()
        network = net.init_network(net_config)
        opt = net.AdamState.zeros_like(network.params)
        step = 0
    if net_config.cond_dim != features.FEATURE_DIM:
        raise ValueError(f"network expects {net_config.cond_dim}-dim conditions")
    rng = np.random.default_rng(tc.seed)
    context = context_length(net_config, ds.shift)
    extras = checkpoint_extras(ds)

    def snapshot():
        return net.Checkpoint(net_config, network.params, ds.kind.value, step, extras, opt)

    losses = []
    for _ in range(tc.steps):
        window = sample_window(ds, rng, tc.batch_size, context)
        _, loss = net.train_step(network, [window], opt, tc.lr)
        step += 1
        losses.append(loss)
        if log is not None:
            log(step, loss)
        if checkpoint_path and tc.checkpoint_every and step % tc.checkpoint_every == 0:
            net.save_checkpoint(snapshot(), checkpoint_path)
        if tc.target_loss is not None and loss <= tc.target_loss:
            break
    ckpt = snapshot()
    if checkpoint_path:
        net.save_checkpoint(ckpt, checkpoint_path)
    return ckpt, losses


def teacher_forced_nll(network, example):
    """Mean NLL (nats/sample) of a whole example under teacher forcing."""
    logits = net.forward(network, example.codes, example.frames, example.shift)
    return net.loss_nll(logits, example.codes)


# --------------------------------------------------------------------------
# synthesis
# --------------------------------------------------------------------------


def _stats_from(ckpt):
    if "stats.mean" not in ckpt.extras or "stats.std" not in ckpt.extras:
        raise ValueError("checkpoint carries no feature statistics")
    return features.FeatureStats(ckpt.extras["stats.mean"], ckpt.extras["stats.std"])


def _scale_from(ckpt):
    if "excitation_scale" not in ckpt.extras:
        raise ValueError("checkpoint carries no excitation scale")
    return float(np.asarray(ckpt.extras["excitation_scale"]).reshape(-1)[0])


def synthesize(ckpt, seq, kind, mode="argmax", seed=0, backend=None):
    """Features -> codes -> waveform, returning a Signal of ``n_frames * shift`` samples."""
    kind = VocoderKind.parse(kind)
    if ckpt.kind != kind.value:
        raise ValueError(f"vocoder kind mismatch: checkpoint is {ckpt.kind}, requested {kind.value}")
    stats = _stats_from(ckpt)
    scale = _scale_from(ckpt)
    cond = features.normalize(seq, stats).data.astype(np.float32)
    codes = net.generate_fast(ckpt.network, cond, mode=mode, seed=seed, hop=seq.shift,
                              backend=backend)
    e = dsp.mu_law_decode(codes) / scale
    if kind is VocoderKind.EXCITNET:
        y = dsp.lp_synthesis(e, seq.lpc_track(), seq.shift)
    else:
        if "noise_filter" not in ckpt.extras:
            raise ValueError("checkpoint carries no noise-shaping filter")
        a = np.asarray(ckpt.extras["noise_filter"], dtype=np.float64)
        y = dsp.invert_noise_shaping(e, dsp.NoiseShapingFilter(dsp.LpcFrame(a, 0.0)))
    return dsp.Signal(y, seq.sample_rate)


def copy_synthesis(signal, quantize=False, bits=8, config=None):
    """Analysis -> residual -> (optional mu-law round trip) -> LP synthesis, no network."""
    config = config or features.AnalysisConfig()
    signal = _as_signal(signal, config.sample_rate)
    seq = features.analyze(signal, config)
    A = seq.lpc_track()
    e = dsp.lp_analysis(align(signal, seq.n_samples), A, seq.shift)
    if quantize:
        peak = float(np.max(np.abs(e)))
        if peak > 0.0:
            s = _scale_for_peak(peak)
            e = dsp.mu_law_decode(dsp.mu_law_encode(e * s, bits), bits) / s
    return dsp.Signal(dsp.lp_synthesis(e, A, seq.shift), signal.sample_rate)


# --------------------------------------------------------------------------
# objective metrics
# --------------------------------------------------------------------------


def _pair(ref, deg):
    r = np.asarray(ref.samples if isinstance(ref, dsp.Signal) else ref, dtype=np.float64)
    d = np.asarray(deg.samples if isinstance(deg, dsp.Signal) else deg, dtype=np.float64)
    n = min(r.shape[0], d.shape[0])
    if n == 0:
        raise ValueError("zero-length input")
    return r[:n], d[:n]


def _grid(sample_rate):
    return dsp.ms_to_samples(20.0, sample_rate), dsp.ms_to_samples(5.0, sample_rate)


def segmental_snr(ref, deg, sample_rate=dsp.DEFAULT_SAMPLE_RATE):
    """Mean per-frame SNR in dB, each frame clamped to [-10, 35]."""
    r, d = _pair(ref, deg)
    flen, shift = _grid(sample_rate)
    fr = dsp.frame_signal(r, flen, shift)
    fe = dsp.frame_signal(r - d, flen, shift)
    num = np.sum(fr * fr, axis=1)
    den = np.sum(fe * fe, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = 10.0 * np.log10(num / den)
    snr = np.where(den == 0.0, SEGSNR_MAX, snr)
    snr = np.where((num == 0.0) & (den > 0.0), SEGSNR_MIN, snr)
    return float(np.mean(np.clip(snr, SEGSNR_MIN, SEGSNR_MAX)))


def _log_power_spectra(x, flen, shift):
    frames = dsp.frame_signal(x, flen, shift) * dsp.hann(flen)
    spec = np.fft.rfft(frames, max(LSD_NFFT, flen), axis=1)
    return 10.0 * np.log10(spec.real**2 + spec.imag**2 + LSD_POWER_FLOOR)


def log_spectral_distortion(ref, deg, sample_rate=dsp.DEFAULT_SAMPLE_RATE):
    """Mean over frames of the RMS log-spectral difference, in dB."""
    r, d = _pair(ref, deg)
    flen, shift = _grid(sample_rate)
    diff = _log_power_spectra(r, flen, shift) - _log_power_spectra(d, flen, shift)
    return float(np.mean(np.sqrt(np.mean(diff * diff, axis=1))))


def f0_rmse(ref, deg, sample_rate=dsp.DEFAULT_SAMPLE_RATE):
    """``(rmse_hz, vuv_error)``; RMSE over frames voiced in both, 0 if there are none."""
    r, d = _pair(ref, deg)
    flen, shift = _grid(sample_rate)
    f_r, v_r = features.estimate_f0(r, sample_rate, flen, shift)
    f_d, v_d = features.estimate_f0(d, sample_rate, flen, shift)
    both = (v_r > 0) & (v_d > 0)
    rmse = float(np.sqrt(np.mean((f_r[both] - f_d[both]) ** 2))) if both.any() else 0.0
    return rmse, float(np.mean(v_r != v_d))


@dataclass
class UtteranceMetrics:
    utt_id: str
    segmental_snr: float
    log_spectral_distortion: float
    f0_rmse: float
    vuv_error: float


METRIC_NAMES = ("segmental_snr", "log_spectral_distortion", "f0_rmse", "vuv_error")


@dataclass
class MetricsReport:
    label: str = ""
    seed: int = 0
    rows: list = field(default_factory=list)

    def add(self, utt_id, ref, deg, sample_rate=dsp.DEFAULT_SAMPLE_RATE):
        rmse, vuv = f0_rmse(ref, deg, sample_rate)
        self.rows.append(UtteranceMetrics(
            utt_id,
            segmental_snr(ref, deg, sample_rate),
            log_spectral_distortion(ref, deg, sample_rate),
            rmse,
            vuv,
        ))
        return self.rows[-1]

    def means(self):
        if not self.rows:
            return {k: math.nan for k in METRIC_NAMES}
        return {k: math.fsum(getattr(r, k) for r in self.rows) / len(self.rows)
                for k in METRIC_NAMES}

    def to_tsv(self):
        lines = ["utt\t" + "\t".join(METRIC_NAMES)]
        for r in self.rows:
            lines.append(r.utt_id + "\t" + "\t".join(f"{getattr(r, k):.4f}" for k in METRIC_NAMES))
        m = self.means()
        lines.append("MEAN\t" + "\t".join(f"{m[k]:.4f}" for k in METRIC_NAMES))
        return "\n".join(lines)

    @classmethod
    def from_tsv(cls, text, label="", seed=0):
        """Parse ``to_tsv`` output; the MEAN row is recomputed, not read."""
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].split("\t") != ["utt", *METRIC_NAMES]:
            raise ValueError("not a metrics report (bad header)")
        rows = []
        for ln in lines[1:]:
            cells = ln.split("\t")
            if len(cells) != len(METRIC_NAMES) + 1:
                raise ValueError(f"malformed metrics row: {ln!r}")
            if cells[0] == "MEAN":
                continue
            rows.append(UtteranceMetrics(cells[0], *(float(c) for c in cells[1:])))
        return cls(label, seed, rows)

    def summary(self):
        m = self.means()
        head = f"label={self.label} seed={self.seed} n={len(self.rows)}"
        return head + " " + " ".join(f"{k}={m[k]:.4f}" for k in METRIC_NAMES)


def evaluate(refs, degs, ids=None, label="", seed=0, sample_rate=dsp.DEFAULT_SAMPLE_RATE):
    refs, degs = list(refs), list(degs)
    if len(refs) != len(degs):
        raise ValueError("reference and degraded lists differ in length")
    ids = list(ids) if ids is not None else [f"utt{i:04d}" for i in range(len(refs))]
    report = MetricsReport(label, seed)
    for u, r, d in zip(ids, refs, degs):
        report.add(u, r, d, sample_rate)
    return report


def compare_reports(reports):
    """Side-by-side corpus means, one row per vocoder kind."""
    lines = ["kind\t" + "\t".join(METRIC_NAMES)]
    for rep in reports:
        m = rep.means()
        lines.append(rep.label + "\t" + "\t".join(f"{m[k]:.4f}" for k in METRIC_NAMES))
    return "\n".join(lines)
