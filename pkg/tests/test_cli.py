import wave

import numpy as np
import pytest

from excitnet import cli, features as F, net, wavio
from excitnet.config import ConfigError, RunConfig, parse_config
from excitnet.synthetic import synthetic_vowel

TOY_CFG = """
# tiny network so the smoke test stays quick
n_blocks = 1
layers_per_block = 4
residual_channels = 8
gate_channels = 8
skip_channels = 8
batch_size = 1200
lr = 0.001
"""


@pytest.fixture
def wavs(tmp_path):
    paths = []
    for i, f0 in enumerate((130.0, 170.0)):
        sig, _ = synthetic_vowel(0.25, f0, seed=i)
        p = tmp_path / f"v{i}.wav"
        wavio.write_wav(p, sig)
        paths.append(p)
    return paths


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(TOY_CFG)
    return p


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- configuration ------------------------------------------------------------


def test_config_parsing():
    cfg = parse_config("seed = 3  # comment\nkind = wavenet_ns\ntarget_loss = none\nlr=0.5\n")
    assert cfg.seed == 3 and cfg.kind == "wavenet_ns" and cfg.target_loss is None and cfg.lr == 0.5
    assert RunConfig().net_config() == net.NetConfig()


@pytest.mark.parametrize("text, msg", [
    ("bogus = 1", "unknown key"),
    ("seed = x", "cannot parse"),
    ("seed 3", "key = value"),
    ("seed = 1\nseed = 2", "duplicate"),
    ("kind = other", "unknown vocoder kind"),
    ("steps = 0", "positive"),
])
def test_config_rejects(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_config_dump_round_trips():
    cfg = RunConfig(seed=9, kind="wavenet_ns", target_loss=1.5)
    assert parse_config(cfg.dump()) == cfg


# -- WAV I/O ---------------------------------------------------------------


def test_wav_round_trip(tmp_path):
    sig, _ = synthetic_vowel(0.1, 200.0)
    wavio.write_wav(tmp_path / "a.wav", sig)
    back = wavio.read_wav(tmp_path / "a.wav", 24000)
    assert np.max(np.abs(back.samples - sig.samples)) <= 1.0 / 32768


def test_wav_rejects_stereo_and_rate(tmp_path):
    p = tmp_path / "st.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(24000)
        w.writeframes(np.zeros(20, dtype="<i2").tobytes())
    with pytest.raises(wavio.WavError, match="channels"):
        wavio.read_wav(p)
    q = tmp_path / "r.wav"
    wavio.write_wav(q, synthetic_vowel(0.1, 200.0, sample_rate=44100)[0])
    with pytest.raises(wavio.WavError, match="resample"):
        wavio.read_wav(q, 24000)
    assert len(wavio.read_wav(q, 24000, resample=True)) == 2400


# -- commands ------------------------------------------------------------------


def test_analyze(wavs, tmp_path, capsys):
    out = tmp_path / "feat.exnf"
    code, stdout, _ = run(["analyze", wavs[0], "--out", out], capsys)
    assert code == 0 and "# seed = 0" in stdout
    assert F.load_features(out).n_frames == 47


def test_analyze_errors(tmp_path, capsys):
    empty = tmp_path / "empty.wav"
    empty.write_bytes(b"")
    code, _, err = run(["analyze", empty, "--out", tmp_path / "x.exnf"], capsys)
    assert code == 1 and "empty.wav" in err and len(err.strip().splitlines()) == 1
    assert not (tmp_path / "x.exnf").exists()
    hi = tmp_path / "hi.wav"
    wavio.write_wav(hi, synthetic_vowel(0.1, 200.0, sample_rate=44100)[0])
    code, _, err = run(["analyze", hi, "--out", tmp_path / "y.exnf"], capsys)
    assert code == 1 and "44100" in err


def test_analyze_jobs_same_output(wavs, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["analyze", *wavs, "--out", a], capsys)[0] == 0
    assert run(["analyze", *wavs, "--out", b, "--jobs", "2"], capsys)[0] == 0
    for w in wavs:
        name = w.stem + ".exnf"
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_unknown_flag_is_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "a", "b", "--frobnicate"])
    assert exc.value.code != 0


@pytest.mark.parametrize("command", ["analyze", "prepare", "train", "synth", "copysynth", "eval"])
def test_help_lists_common_flags(command, capsys):
    with pytest.raises(SystemExit):
        cli.main([command, "--help"])
    text = capsys.readouterr().out
    for flag in ("--config", "--seed", "--jobs", "--out"):
        assert flag in text


def test_eval_identical(wavs, capsys):
    code, out, _ = run(["eval", wavs[0], wavs[0]], capsys)
    assert code == 0
    row = [l for l in out.splitlines() if l.startswith("MEAN")][0].split("\t")
    assert float(row[2]) == 0.0 and float(row[1]) == 35.0


def test_eval_compare(wavs, tmp_path, capsys):
    first = tmp_path / "excitnet.tsv"
    assert run(["eval", wavs[0], wavs[0], "--out", first], capsys)[0] == 0
    code, out, _ = run(["eval", wavs[0], wavs[1], "--label", "wavenet_ns", "--compare", first], capsys)
    table = out[out.index("kind\t"):].splitlines()
    assert code == 0 and [r.split("\t")[0] for r in table] == ["kind", "excitnet", "wavenet_ns"]
    assert float(table[1].split("\t")[1]) == 35.0
    code, _, err = run(["eval", wavs[0], wavs[0], "--compare", wavs[0]], capsys)
    assert code == 1 and "not a metrics report" in err


def test_copysynth(wavs, tmp_path, capsys):
    out = tmp_path / "c.wav"
    assert run(["copysynth", wavs[0], "--out", out, "--quantize"], capsys)[0] == 0
    assert len(wavio.read_wav(out)) == 47 * 120


def test_end_to_end_smoke(wavs, cfg_file, tmp_path, capsys):
    ds, ck, feat, syn = (tmp_path / n for n in ("d.npz", "m.exnm", "f.exnf", "s.wav"))
    base = ["--config", cfg_file, "--seed", "4"]
    assert run(["analyze", wavs[0], "--out", feat, *base], capsys)[0] == 0
    assert run(["prepare", *wavs, "--out", ds, *base], capsys)[0] == 0
    code, out, _ = run(["train", ds, "--out", ck, "--steps", "50", *base], capsys)
    assert code == 0 and "step 50\t" in out and "# seed = 4" in out
    assert net.load_checkpoint(ck).step == 50
    assert run(["synth", ck, feat, "--out", syn, *base], capsys)[0] == 0
    code, out, _ = run(["eval", wavs[0], syn, *base], capsys)
    assert code == 0 and "segmental_snr" in out
    # same inputs, same seed: byte-identical outputs
    ck2 = tmp_path / "m2.exnm"
    run(["train", ds, "--out", ck2, "--steps", "50", *base], capsys)
    assert ck.read_bytes() == ck2.read_bytes()
    code, _, err = run(["synth", ck, feat, "--out", tmp_path / "w.wav", "--kind", "wavenet_ns",
                        *base], capsys)
    assert code == 1 and "vocoder kind mismatch" in err
    assert not (tmp_path / "w.wav").exists()
