"""Dilated causal convolution network over mu-law codes, written against numpy.

Each layer (kernel 2, dilation d) computes::

    z   = h[t-d] @ w_prev + h[t] @ w_cur + b_dil + c[t] @ w_cond
    out = tanh(z_filter) * sigmoid(z_gate)
    skip += out @ w_skip + b_skip
    h    = h + out @ w_res + b_res

and the head is ``relu -> 1x1 -> relu -> 1x1 -> logits``. The input at step t
is a learned embedding of code t-1 (code 128 at t=0).

Conditions may be given at sample rate (``hop=1``) or at frame rate with
``hop`` samples per row; frame-rate conditioning is what training uses, since
the 79->gate projection then costs one matmul per frame instead of per sample.
"""

import struct
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import kernels

SILENCE_CODE = 128


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class NetConfig:
    n_blocks: int = 2
    layers_per_block: int = 6
    kernel: int = 2
    residual_channels: int = 64
    gate_channels: int = 64
    skip_channels: int = 64
    n_classes: int = 256
    cond_dim: int = 79
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seed":
                if v < 0:
                    raise ValueError("seed must be non-negative")
            elif v < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.kernel != 2:
            raise ValueError("only kernel size 2 is supported")

    @classmethod
    def full_size(cls, seed=0):
        """3 blocks x 10 layers, 512 residual/gate channels, 256 skip channels."""
        return cls(3, 10, 2, 512, 512, 256, 256, 79, seed)

    @property
    def n_layers(self):
        return self.n_blocks * self.layers_per_block

    @property
    def dilations(self):
        return np.array(
            [2**i for _ in range(self.n_blocks) for i in range(self.layers_per_block)],
            dtype=np.int64,
        )


def receptive_field(config):
    return 1 + int(config.dilations.sum()) * (config.kernel - 1)


def param_shapes(config):
    L, R, G, S = config.n_layers, config.residual_channels, config.gate_channels, config.skip_channels
    K, C = config.n_classes, config.cond_dim
    return {
        "embed": (K, R),
        "w_prev": (L, R, 2 * G),
        "w_cur": (L, R, 2 * G),
        "b_dil": (L, 2 * G),
        "w_cond": (L, C, 2 * G),
        "w_res": (L, G, R),
        "b_res": (L, R),
        "w_skip": (L, G, S),
        "b_skip": (L, S),
        "w_out1": (S, S),
        "b_out1": (S,),
        "w_out2": (S, K),
        "b_out2": (K,),
    }


def xavier_fans(name, config):
    """(fan_in, fan_out) used for the Xavier bound of a weight tensor."""
    R, G, S = config.residual_channels, config.gate_channels, config.skip_channels
    k = config.kernel
    return {
        "embed": (config.n_classes, R),
        # both taps belong to one kernel-2 convolution
        "w_prev": (R * k, 2 * G * k),
        "w_cur": (R * k, 2 * G * k),
        "w_cond": (config.cond_dim, 2 * G),
        "w_res": (G, R),
        "w_skip": (G, S),
        "w_out1": (S, S),
        "w_out2": (S, config.n_classes),
    }[name]


class Network:
    """A config plus its parameter dict (name -> ndarray)."""

    def __init__(self, config, params):
        self.config = config
        self.params = params
        self.dilations = config.dilations

    @property
    def dtype(self):
        return self.params["embed"].dtype

    @property
    def receptive_field(self):
        return receptive_field(self.config)

    def astype(self, dtype):
        return Network(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self):
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})


def init_network(config, dtype=np.float32):
    """Xavier-uniform weights, zero biases, deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("b_"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in, fan_out = xavier_fans(name, config)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Network(config, params)


def _frame_count(T, hop):
    return -(-T // hop)


def _check_inputs(params, inputs, conditions, hop):
    T = inputs.shape[0]
    C = params["w_cond"].shape[1]
    if conditions.ndim != 2 or conditions.shape[1] != C:
        raise ValueError(f"conditions must be (rows, {C}), got {conditions.shape}")
    need = _frame_count(T, hop)
    if conditions.shape[0] < need:
        raise ValueError(f"need {need} condition rows for {T} steps at hop {hop}, got {conditions.shape[0]}")
    if np.any(inputs < 0) or np.any(inputs >= params["embed"].shape[0]):
        raise ValueError("code out of range")


def _add_framewise(z, rows, hop):
    """z[t] += rows[t // hop], without materializing the repeated matrix."""
    T = z.shape[0]
    if hop == 1:
        z += rows[:T]
        return
    full = T // hop
    if full:
        z[: full * hop].reshape(full, hop, -1)[...] += rows[:full, None, :]
    if full * hop < T:
        z[full * hop :] += rows[full]


def _sum_framewise(dz, hop, n_frames):
    if hop == 1:
        return dz
    T = dz.shape[0]
    full = T // hop
    out = np.zeros((n_frames, dz.shape[1]), dtype=dz.dtype)
    if full:
        out[:full] = dz[: full * hop].reshape(full, hop, -1).sum(axis=1)
    if full * hop < T:
        out[full] = dz[full * hop :].sum(axis=0)
    return out


def forward_inputs(net, inputs, conditions, hop=1, keep_cache=False):
    """Logits for an already-shifted input code stream."""
    params, dilations = net.params, net.dilations
    inputs = np.asarray(inputs, dtype=np.int64)
    dt = params["embed"].dtype
    conditions = np.asarray(conditions, dtype=dt)
    _check_inputs(params, inputs, conditions, hop)
    T = inputs.shape[0]
    F = _frame_count(T, hop)
    cond = conditions[:F]
    R = params["embed"].shape[1]
    G = params["w_res"].shape[1]
    S = params["w_skip"].shape[2]
    h = params["embed"][inputs]
    skip = np.zeros((T, S), dtype=dt)
    layers = []
    for l, d in enumerate(dilations):
        d = int(d)
        # [h[t-d] | h[t]] so both taps are one matmul
        hh = np.empty((T, 2 * R), dtype=dt)
        hh[:, R:] = h
        hh[: min(d, T), :R] = 0
        if d < T:
            hh[d:, :R] = h[: T - d]
        w_taps = np.concatenate([params["w_prev"][l], params["w_cur"][l]])
        z = hh @ w_taps
        _add_framewise(z, cond @ params["w_cond"][l] + params["b_dil"][l], hop)
        a = np.tanh(z[:, :G])
        # sigmoid via tanh: far cheaper than exp on float32 arrays
        s = np.tanh(z[:, G:] * 0.5)
        s *= 0.5
        s += 0.5
        out = a * s
        proj = out @ np.concatenate([params["w_skip"][l], params["w_res"][l]], axis=1)
        skip += proj[:, :S]
        skip += params["b_skip"][l]
        h = h + proj[:, S:]
        h += params["b_res"][l]
        if keep_cache:
            layers.append((hh, a, s, out))
    y0 = np.maximum(skip, 0)
    y1 = y0 @ params["w_out1"] + params["b_out1"]
    y1r = np.maximum(y1, 0)
    logits = y1r @ params["w_out2"] + params["b_out2"]
    if not keep_cache:
        return logits
    cache = dict(inputs=inputs, cond=cond, hop=hop, dilations=dilations, layers=layers,
                 skip=skip, y0=y0, y1=y1, y1r=y1r)
    return logits, cache


def teacher_forced_inputs(codes):
    codes = np.asarray(codes, dtype=np.int64)
    return np.concatenate([[SILENCE_CODE], codes[:-1]]) if codes.size else codes


def forward(net, codes, conditions, hop=1):
    """Teacher-forced logits: step t sees codes[0..t-1] and conditions up to t."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size == 0:
        return np.zeros((0, net.config.n_classes), dtype=net.dtype)
    return forward_inputs(net, teacher_forced_inputs(codes), conditions, hop)


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss_nll(logits, targets):
    """Mean negative log-likelihood in nats per sample."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[0] != targets.shape[0]:
        raise ValueError("logits and targets are not aligned")
    if targets.size == 0:
        return 0.0
    lp = log_softmax(logits.astype(np.float64))
    return float(-lp[np.arange(targets.shape[0]), targets].mean())


def backward(params, cache, dlogits):
    """Gradients of a scalar loss w.r.t. every parameter, given dL/dlogits."""
    dt = params["embed"].dtype
    dl = dlogits.astype(dt, copy=False)
    hop = cache["hop"]
    cond = cache["cond"]
    T = dl.shape[0]
    R = params["embed"].shape[1]
    S = params["w_skip"].shape[2]
    g = {}
    g["w_out2"] = cache["y1r"].T @ dl
    g["b_out2"] = dl.sum(axis=0)
    dy1 = (dl @ params["w_out2"].T) * (cache["y1"] > 0)
    g["w_out1"] = cache["y0"].T @ dy1
    g["b_out1"] = dy1.sum(axis=0)
    dskip = (dy1 @ params["w_out1"].T) * (cache["skip"] > 0)

    for n in ("w_prev", "w_cur", "b_dil", "w_cond", "w_res", "b_res", "w_skip", "b_skip"):
        g[n] = np.zeros_like(params[n])
    dskip_b = dskip.sum(axis=0)
    # [dskip | dh] feeds the fused skip/residual projection
    dproj = np.empty((T, S + R), dtype=dt)
    dproj[:, :S] = dskip
    dproj[:, S:] = 0
    for l in range(len(cache["layers"]) - 1, -1, -1):
        hh, a, s, out = cache["layers"][l]
        d = int(cache["dilations"][l])
        dh = dproj[:, S:]
        w_proj = np.concatenate([params["w_skip"][l], params["w_res"][l]], axis=1)
        gproj = out.T @ dproj
        g["w_skip"][l] = gproj[:, :S]
        g["w_res"][l] = gproj[:, S:]
        g["b_skip"][l] = dskip_b
        g["b_res"][l] = dh.sum(axis=0)
        dz = kernels.gate_backward(dproj @ w_proj.T, a, s)
        gtaps = hh.T @ dz
        g["w_prev"][l] = gtaps[:R]
        g["w_cur"][l] = gtaps[R:]
        g["b_dil"][l] = dz.sum(axis=0)
        g["w_cond"][l] = cond.T @ _sum_framewise(dz, hop, cond.shape[0])
        dhh = dz @ np.concatenate([params["w_prev"][l], params["w_cur"][l]]).T
        dh += dhh[:, R:]
        if d < T:
            dh[: T - d] += dhh[d:, :R]
    g["embed"] = np.zeros_like(params["embed"])
    np.add.at(g["embed"], cache["inputs"], dproj[:, S:])
    return g


def loss_and_grad(net, inputs, targets, conditions, hop=1, loss_from=0):
    """NLL (mean over targets[loss_from:]), its gradient, and the target count."""
    logits, cache = forward_inputs(net, inputs, conditions, hop, keep_cache=True)
    targets = np.asarray(targets, dtype=np.int64)
    lp = log_softmax(logits[loss_from:])
    n = targets.shape[0] - loss_from
    idx = np.arange(n)
    tg = targets[loss_from:]
    loss = float(-lp[idx, tg].astype(np.float64).mean())
    dl = np.zeros(logits.shape, dtype=logits.dtype)
    p = np.exp(lp)
    p[idx, tg] -= 1.0
    p /= n
    dl[loss_from:] = p
    return loss, backward(net.params, cache, dl), n


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass
class Window:
    """One contiguous training window.

    ``inputs``/``targets`` span ``[w0, w1)``; the loss covers positions from
    ``loss_from`` on, so earlier positions only warm up the receptive field.
    ``conditions`` is frame-rate with ``hop`` samples per row starting at w0.
    """

    inputs: np.ndarray
    targets: np.ndarray
    conditions: np.ndarray
    hop: int
    loss_from: int = 0


def make_window(codes, cond_frames, hop, start, length, context):
    """Window whose loss covers ``codes[start:start+length]``.

    ``start`` and ``context`` are multiples of ``hop`` so the frame grid lines up.
    """
    if start % hop or context % hop:
        raise ValueError("start and context must be multiples of hop")
    codes = np.asarray(codes, dtype=np.int64)
    w0 = max(0, start - context)
    w1 = min(codes.shape[0], start + length)
    inputs = teacher_forced_inputs(codes)[w0:w1]
    targets = codes[w0:w1]
    f0 = w0 // hop
    f1 = _frame_count(w1, hop)
    return Window(inputs, targets, np.asarray(cond_frames[f0:f1]), hop, start - w0)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params, grads, state, lr):
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, gk in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * gk
        v *= b2
        v += (1.0 - b2) * gk * gk
        step = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        params[k] -= step.astype(params[k].dtype, copy=False)


def train_step(net, batch, opt_state, lr):
    """One Adam step on a batch of windows; updates ``net.params`` in place.

    Gradients are accumulated over windows in list order, weighted by the
    number of loss positions, so the result is deterministic.
    """
    total = 0.0
    count = 0
    acc = None
    for w in batch:
        loss, grads, n = loss_and_grad(net, w.inputs, w.targets, w.conditions, w.hop, w.loss_from)
        total += loss * n
        count += n
        if acc is None:
            acc = {k: g * n for k, g in grads.items()}
        else:
            for k, g in grads.items():
                acc[k] += g * n
    loss = total / count
    if not np.isfinite(loss):
        raise TrainingDiverged("training diverged")
    for k in acc:
        acc[k] /= count
    adam_update(net.params, acc, opt_state, lr)
    return net, loss


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


def _uniforms(n, seed):
    return np.random.default_rng(seed).random(n)


def generate_naive(net, conditions, mode="argmax", seed=0, hop=1,
                   n_steps=None, return_logits=False):
    """Reference generator: a full forward pass over the history at every step."""
    greedy = _greedy(mode)
    conditions = np.asarray(conditions)
    n = conditions.shape[0] * hop if n_steps is None else n_steps
    u = _uniforms(n, seed)
    inputs = np.full(n, SILENCE_CODE, dtype=np.int64)
    codes = np.empty(n, dtype=np.int64)
    all_logits = []
    for t in range(n):
        lg = forward_inputs(net, inputs[: t + 1], conditions, hop)[-1]
        if return_logits:
            all_logits.append(lg)
        codes[t] = kernels.pick_np(lg, u[t], greedy)
        if t + 1 < n:
            inputs[t + 1] = codes[t]
    if return_logits:
        return codes, np.array(all_logits).reshape(n, -1)
    return codes


def _greedy(mode):
    if mode not in ("argmax", "sample"):
        raise ValueError(f"unknown generation mode {mode!r}")
    return mode == "argmax"


def generate_fast(net, conditions, mode="argmax", seed=0, hop=1,
                  n_steps=None, return_logits=False, backend=None):
    """Incremental generator with per-layer ring buffers; same output as the naive one."""
    greedy = _greedy(mode)
    params = net.params
    dt = params["embed"].dtype
    conditions = np.asarray(conditions, dtype=dt)
    n = conditions.shape[0] * hop if n_steps is None else n_steps
    if n == 0:
        codes = np.zeros(0, dtype=np.int64)
        return (codes, np.zeros((0, params["w_out2"].shape[1]), dtype=dt)) if return_logits else codes
    F = _frame_count(n, hop)
    if conditions.shape[0] < F:
        raise ValueError(f"need {F} condition rows, got {conditions.shape[0]}")
    cond = conditions[:F]
    cond_proj = np.ascontiguousarray(
        np.stack([cond @ params["w_cond"][l] for l in range(params["w_cond"].shape[0])], axis=1)
    )
    fn = {None: kernels.generate, "numba": kernels.generate_nb, "numpy": kernels.generate_np}[backend]
    c = np.ascontiguousarray
    codes, logits = fn(
        c(params["embed"]), c(params["w_prev"]), c(params["w_cur"]), c(params["b_dil"]),
        cond_proj, int(hop), net.dilations,
        c(params["w_res"]), c(params["b_res"]), c(params["w_skip"]), c(params["b_skip"]),
        c(params["w_out1"]), c(params["b_out1"]), c(params["w_out2"]), c(params["b_out2"]),
        int(n), _uniforms(n, seed), greedy, bool(return_logits),
    )
    return (codes, logits) if return_logits else codes


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

EXNM_MAGIC = b"EXNM"
EXNM_VERSION = 1
KINDS = {None: 0, "excitnet": 1, "wavenet_ns": 2}
_KIND_NAMES = {v: k for k, v in KINDS.items()}
_CONFIG = struct.Struct("<IIIIIIIIQ")


@dataclass
class Checkpoint:
    config: NetConfig
    params: dict
    kind: str = None
    step: int = 0
    extras: dict = field(default_factory=dict)  # stats.mean, stats.std, excitation_scale, ...
    adam: AdamState = None

    @property
    def network(self):
        return Network(self.config, self.params)


def _pack_tensor(name, arr):
    raw = name.encode("utf-8")
    arr = np.asarray(arr)
    if arr.dtype != np.float32:
        raise ValueError(f"tensor {name!r} must be float32 for serialization, got {arr.dtype}")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ValueError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def tensor(self):
        (nlen,) = self.unpack("<I")
        name = self.take(nlen).decode("utf-8")
        (rank,) = self.unpack("<I")
        shape = self.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        return name, arr


def checkpoint_to_bytes(ckpt):
    cfg = ckpt.config
    out = [EXNM_MAGIC, struct.pack("<I", EXNM_VERSION)]
    out.append(_CONFIG.pack(cfg.n_blocks, cfg.layers_per_block, cfg.kernel, cfg.residual_channels,
                            cfg.gate_channels, cfg.skip_channels, cfg.n_classes, cfg.cond_dim,
                            cfg.seed))
    out.append(struct.pack("<QI", ckpt.step, KINDS[ckpt.kind]))
    tensors = list(ckpt.params.items())
    tensors += [(f"extra.{k}", np.asarray(v, dtype=np.float32)) for k, v in ckpt.extras.items()]
    out.append(struct.pack("<I", len(tensors)))
    out.extend(_pack_tensor(k, v) for k, v in tensors)
    if ckpt.adam is None:
        out.append(struct.pack("<B", 0))
    else:
        a = ckpt.adam
        out.append(struct.pack("<BQdddI", 1, a.t, a.beta1, a.beta2, a.eps, 2 * len(a.m)))
        out.extend(_pack_tensor(f"m.{k}", v) for k, v in a.m.items())
        out.extend(_pack_tensor(f"v.{k}", v) for k, v in a.v.items())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def checkpoint_from_bytes(buf):
    if len(buf) < 8:
        raise ValueError("checkpoint truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if buf[:4] != EXNM_MAGIC:
        raise ValueError("not an EXNM checkpoint")
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != EXNM_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ValueError("checkpoint corrupt or truncated (CRC mismatch)")
    config = NetConfig(*r.unpack(_CONFIG.format))
    step, kind = r.unpack("<QI")
    if kind not in _KIND_NAMES:
        raise ValueError(f"unknown vocoder kind code {kind}")
    (n,) = r.unpack("<I")
    params, extras = {}, {}
    for _ in range(n):
        name, arr = r.tensor()
        if name.startswith("extra."):
            extras[name[6:]] = arr
        else:
            params[name] = arr
    expected = param_shapes(config)
    for k, shape in expected.items():
        if k not in params or params[k].shape != shape:
            raise ValueError(f"checkpoint tensor {k!r} missing or mis-shaped")
    (has_adam,) = r.unpack("<B")
    adam = None
    if has_adam:
        t, b1, b2, eps, na = r.unpack("<QdddI")
        m, v = {}, {}
        for _ in range(na):
            name, arr = r.tensor()
            (m if name.startswith("m.") else v)[name[2:]] = arr
        adam = AdamState(m, v, t, b1, b2, eps)
    if r.pos != len(body):
        raise ValueError("trailing bytes in checkpoint")
    return Checkpoint(config, params, _KIND_NAMES[kind], step, extras, adam)


def save_checkpoint(ckpt, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())
