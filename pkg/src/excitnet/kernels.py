"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names at the bottom dispatch on :data:`excitnet._backend.USE_NUMBA`.
Both flavours are importable directly (``*_nb`` / ``*_np``) so tests and the
benchmark can compare them side by side.
"""

import numpy as np
from numba import njit
from scipy.signal import lfilter, lfiltic

from ._backend import USE_NUMBA

# --------------------------------------------------------------------------
# autocorrelation of a batch of frames
# --------------------------------------------------------------------------


@njit(cache=True)
def autocorr_frames_nb(frames, max_lag):
    n_frames, n = frames.shape
    out = np.zeros((n_frames, max_lag + 1))
    for f in range(n_frames):
        for k in range(max_lag + 1):
            acc = 0.0
            for i in range(n - k):
                acc += frames[f, i] * frames[f, i + k]
            out[f, k] = acc
    return out


def autocorr_frames_np(frames, max_lag):
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    r = np.fft.irfft(spec.real**2 + spec.imag**2, nfft, axis=1)
    return np.ascontiguousarray(r[:, : max_lag + 1])


# --------------------------------------------------------------------------
# Levinson-Durbin, batched over rows of R
# --------------------------------------------------------------------------


@njit(cache=True)
def levinson_nb(R, order):
    n = R.shape[0]
    A = np.zeros((n, order))
    err = np.zeros(n)
    tmp = np.zeros(order)
    for f in range(n):
        e = R[f, 0]
        if e <= 0.0:
            err[f] = e
            continue
        for i in range(order):
            acc = R[f, i + 1]
            for j in range(i):
                acc -= A[f, j] * R[f, i - j]
            k = acc / e
            for j in range(i):
                tmp[j] = A[f, j] - k * A[f, i - 1 - j]
            for j in range(i):
                A[f, j] = tmp[j]
            A[f, i] = k
            e *= 1.0 - k * k
            if e <= 0.0:
                break
        err[f] = e
    return A, err


def levinson_np(R, order):
    n = R.shape[0]
    A = np.zeros((n, order))
    err = R[:, 0].astype(np.float64).copy()
    live = err > 0.0
    for i in range(order):
        acc = R[:, i + 1] - np.einsum("fj,fj->f", A[:, :i], R[:, i:0:-1])
        k = np.zeros(n)
        np.divide(acc, err, out=k, where=live)
        if i:
            A[:, :i] -= k[:, None] * A[:, i - 1 :: -1]
        A[:, i] = k
        err = np.where(live, err * (1.0 - k * k), err)
        live &= err > 0.0
    return A, err


# --------------------------------------------------------------------------
# time-varying LP analysis / synthesis with frame-duplicated coefficients
#   analysis:  e[n] = x[n] - sum_k a_k[n // shift] x[n-k]
#   synthesis: x[n] = e[n] + sum_k a_k[n // shift] x[n-k]
# --------------------------------------------------------------------------


@njit(cache=True)
def lp_analysis_nb(x, A, shift):
    n = x.shape[0]
    p = A.shape[1]
    e = np.empty(n)
    for t in range(n):
        f = t // shift
        acc = x[t]
        kmax = min(p, t)
        for k in range(kmax):
            acc -= A[f, k] * x[t - k - 1]
        e[t] = acc
    return e


@njit(cache=True)
def lp_synthesis_nb(e, A, shift):
    n = e.shape[0]
    p = A.shape[1]
    x = np.empty(n)
    for t in range(n):
        f = t // shift
        acc = e[t]
        kmax = min(p, t)
        for k in range(kmax):
            acc += A[f, k] * x[t - k - 1]
        x[t] = acc
    return x


def lp_analysis_np(x, A, shift):
    p = A.shape[1]
    if p == 0:
        return x.astype(np.float64, copy=True)
    padded = np.concatenate([np.zeros(p), x])
    # lags[t, k] = x[t - 1 - k]
    lags = np.lib.stride_tricks.sliding_window_view(padded[:-1], p)[:, ::-1]
    coeffs = np.repeat(A, shift, axis=0)[: x.shape[0]]
    return x - np.einsum("tk,tk->t", lags, coeffs)


def lp_synthesis_np(e, A, shift):
    n = e.shape[0]
    p = A.shape[1]
    x = np.zeros(n)
    for f in range(A.shape[0]):
        lo = f * shift
        hi = min(lo + shift, n)
        if lo >= hi:
            break
        den = np.concatenate([[1.0], -A[f]])
        past = x[max(0, lo - p) : lo][::-1]
        zi = lfiltic([1.0], den, past) if p else None
        if zi is None:
            x[lo:hi] = e[lo:hi]
        else:
            x[lo:hi], _ = lfilter([1.0], den, e[lo:hi], zi=zi)
    return x


# --------------------------------------------------------------------------
# gated-activation backward: out = a * s, a = tanh(zf), s = sigmoid(zg)
# --------------------------------------------------------------------------


@njit(cache=True, fastmath=True)
def gate_backward_nb(dout, a, s):
    T, G = dout.shape
    dz = np.empty((T, 2 * G), dtype=dout.dtype)
    one = dout.dtype.type(1.0)
    for t in range(T):
        for j in range(G):
            g = dout[t, j]
            aj = a[t, j]
            sj = s[t, j]
            dz[t, j] = g * sj * (one - aj * aj)
            dz[t, G + j] = g * aj * sj * (one - sj)
    return dz


def gate_backward_np(dout, a, s):
    G = dout.shape[1]
    dz = np.empty((dout.shape[0], 2 * G), dtype=dout.dtype)
    gs = dout * s
    np.multiply(gs, 1 - a * a, out=dz[:, :G])
    np.multiply(gs * a, 1 - s, out=dz[:, G:])
    return dz


# --------------------------------------------------------------------------
# incremental autoregressive generation
# --------------------------------------------------------------------------


@njit(cache=True)
def _pick_nb(logits, u, greedy):
    k = logits.shape[0]
    best = 0
    for i in range(1, k):
        if logits[i] > logits[best]:
            best = i
    if greedy:
        return best
    m = np.float64(logits[best])
    c = np.empty(k)
    acc = 0.0
    for i in range(k):
        acc += np.exp(np.float64(logits[i]) - m)
        c[i] = acc
    thr = u * acc
    for i in range(k):
        if c[i] > thr:
            return i
    return k - 1


def pick_np(logits, u, greedy):
    if greedy:
        return int(np.argmax(logits))
    lg = logits.astype(np.float64)
    c = np.cumsum(np.exp(lg - lg.max()))
    return int(min(np.searchsorted(c, u * c[-1], side="right"), lg.shape[0] - 1))


@njit(cache=True)
def generate_nb(
    embed, w_prev, w_cur, bias, cond_proj, hop, dilations,
    w_res, b_res, w_skip, b_skip, w_out1, b_out1, w_out2, b_out2,
    n_steps, uniforms, greedy, keep_logits,
):
    n_layers = dilations.shape[0]
    res_ch = embed.shape[1]
    gate_ch = w_res.shape[1]
    skip_ch = w_skip.shape[2]
    n_cls = w_out2.shape[1]
    maxd = 1
    for l in range(n_layers):
        maxd = max(maxd, dilations[l])
    buf = np.zeros((n_layers, maxd, res_ch), dtype=embed.dtype)
    codes = np.empty(n_steps, dtype=np.int64)
    logits_all = np.zeros((n_steps if keep_logits else 0, n_cls), dtype=embed.dtype)
    one = embed.dtype.type(1.0)
    zero = embed.dtype.type(0.0)
    prev = 128
    for t in range(n_steps):
        fr = t // hop
        h = embed[prev].copy()
        skip = np.zeros(skip_ch, dtype=embed.dtype)
        for l in range(n_layers):
            slot = t % dilations[l]
            hp = buf[l, slot].copy()
            buf[l, slot] = h
            z = np.dot(hp, w_prev[l]) + np.dot(h, w_cur[l]) + bias[l] + cond_proj[fr, l]
            out = np.tanh(z[:gate_ch]) * (one / (one + np.exp(-z[gate_ch:])))
            skip = skip + (np.dot(out, w_skip[l]) + b_skip[l])
            h = h + (np.dot(out, w_res[l]) + b_res[l])
        y = np.maximum(skip, zero)
        y = np.maximum(np.dot(y, w_out1) + b_out1, zero)
        lg = np.dot(y, w_out2) + b_out2
        if keep_logits:
            logits_all[t] = lg
        prev = _pick_nb(lg, uniforms[t], greedy)
        codes[t] = prev
    return codes, logits_all


def generate_np(
    embed, w_prev, w_cur, bias, cond_proj, hop, dilations,
    w_res, b_res, w_skip, b_skip, w_out1, b_out1, w_out2, b_out2,
    n_steps, uniforms, greedy, keep_logits,
):
    n_layers = dilations.shape[0]
    dt = embed.dtype
    bufs = [np.zeros((int(d), embed.shape[1]), dtype=dt) for d in dilations]
    codes = np.empty(n_steps, dtype=np.int64)
    logits_all = np.zeros((n_steps if keep_logits else 0, w_out2.shape[1]), dtype=dt)
    gate_ch = w_res.shape[1]
    prev = 128
    for t in range(n_steps):
        fr = t // hop
        h = embed[prev].copy()
        skip = np.zeros(w_skip.shape[2], dtype=dt)
        for l in range(n_layers):
            slot = t % bufs[l].shape[0]
            hp = bufs[l][slot].copy()
            bufs[l][slot] = h
            z = hp @ w_prev[l] + h @ w_cur[l] + bias[l] + cond_proj[fr, l]
            out = np.tanh(z[:gate_ch]) * (dt.type(1.0) / (dt.type(1.0) + np.exp(-z[gate_ch:])))
            skip = skip + (out @ w_skip[l] + b_skip[l])
            h = h + (out @ w_res[l] + b_res[l])
        y = np.maximum(skip, 0)
        y = np.maximum(y @ w_out1 + b_out1, 0)
        lg = y @ w_out2 + b_out2
        if keep_logits:
            logits_all[t] = lg
        prev = pick_np(lg, uniforms[t], greedy)
        codes[t] = prev
    return codes, logits_all


if USE_NUMBA:
    autocorr_frames = autocorr_frames_nb
    levinson = levinson_nb
    lp_analysis = lp_analysis_nb
    lp_synthesis = lp_synthesis_nb
    gate_backward = gate_backward_nb
    generate = generate_nb
else:
    autocorr_frames = autocorr_frames_np
    levinson = levinson_np
    lp_analysis = lp_analysis_np
    lp_synthesis = lp_synthesis_np
    gate_backward = gate_backward_np
    generate = generate_np
