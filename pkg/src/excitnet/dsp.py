"""Signal-processing primitives: framing, LP analysis/synthesis, LSFs, mu-law.

Predictor convention used throughout the package::

    A(z) = 1 - sum_{k=1..p} a_k z^-k
    e[n] = x[n] - sum_k a_k x[n-k]

Coefficient tracks are ``(n_frames, p)`` arrays; sample ``n`` uses row
``n // shift`` (hard duplication, no interpolation).
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.chebyshev import chebval
from scipy.signal import lfilter

from . import kernels

DEFAULT_SAMPLE_RATE = 24000
LPC_ORDER = 40
# multiplies r[0] before the recursion so reflection coefficients stay inside (-1, 1)
R0_REGULARIZATION = 1.0 + 1e-6
LSF_GRID = 2048
LSF_GRID_MAX = 2048 * 8**4
LSF_TOL = 1e-12


@dataclass
class Signal:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("signal must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("signal contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass
class LpcFrame:
    a: np.ndarray
    residual_energy: float = 0.0

    @property
    def order(self):
        return self.a.shape[0]

    def polynomial(self):
        """Coefficients of A(z) in ascending powers of z^-1."""
        return np.concatenate([[1.0], -self.a])


@dataclass
class LsfFrame:
    w: np.ndarray

    @property
    def order(self):
        return self.w.shape[0]


def ms_to_samples(ms, sample_rate):
    return int(round(ms * sample_rate / 1000.0))


def num_frames(n_samples, frame_len, shift):
    if n_samples < frame_len:
        return 1
    return (n_samples - frame_len) // shift + 1


def frame_signal(x, frame_len, shift):
    """Split ``x`` into overlapping frames.

    Frame ``i`` covers samples ``[i*shift, i*shift + frame_len)``. A signal
    shorter than one frame yields a single zero-padded frame.
    """
    x = np.asarray(x.samples if isinstance(x, Signal) else x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty input")
    if not (frame_len >= shift >= 1):
        raise ValueError("need frame_len >= shift >= 1")
    if x.shape[0] < frame_len:
        out = np.zeros((1, frame_len))
        out[0, : x.shape[0]] = x
        return out
    n = num_frames(x.shape[0], frame_len, shift)
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)
    return np.ascontiguousarray(windows[: (n - 1) * shift + 1 : shift])


def hann(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def autocorrelation(frame, max_lag, window=True):
    """Autocorrelation ``r[0..max_lag]`` of one frame, Hann-windowed by default."""
    frame = np.asarray(frame, dtype=np.float64)
    if max_lag >= frame.shape[0]:
        raise ValueError("max_lag must be smaller than the frame length")
    if window:
        frame = frame * hann(frame.shape[0])
    return kernels.autocorr_frames(np.ascontiguousarray(frame[None, :]), max_lag)[0]


def levinson_durbin(r, order):
    """Solve the Yule-Walker equations for an order-``order`` predictor.

    Returns the zero predictor with ``residual_energy = r[0]`` if ``r[0] <= 0``.
    """
    r = np.asarray(r, dtype=np.float64)
    if order > r.shape[0] - 1:
        raise ValueError(f"order {order} needs {order + 1} autocorrelation lags, got {r.shape[0]}")
    A, err = kernels.levinson(np.ascontiguousarray(r[None, : order + 1]), order)
    return LpcFrame(A[0], float(err[0]))


def lpc_from_frames(frames, order=LPC_ORDER):
    """Windowed, regularized LP analysis of every row of ``frames``.

    Returns ``(A, residual_energy)`` with ``A`` of shape ``(n_frames, order)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    R = kernels.autocorr_frames(np.ascontiguousarray(frames * hann(frames.shape[1])), order)
    R[:, 0] *= R0_REGULARIZATION
    return kernels.levinson(R, order)


# --------------------------------------------------------------------------
# line spectral frequencies
# --------------------------------------------------------------------------


def _sum_diff_polynomials(A):
    """Deflated symmetric halves of P(z) and Q(z), one row per predictor in ``A``."""
    n, p = A.shape
    c = np.hstack([np.ones((n, 1)), -A, np.zeros((n, 1))])
    P = c + c[:, ::-1]
    Q = c - c[:, ::-1]
    # exact deflation by synthetic division (a recursive filter over the coefficients)
    if p % 2 == 0:
        # P has a root at z = -1, Q at z = +1
        P = lfilter([1.0], [1.0, 1.0], P, axis=1)[:, :-1]
        Q = lfilter([1.0], [1.0, -1.0], Q, axis=1)[:, :-1]
    else:
        Q = lfilter([1.0], [1.0, 0.0, -1.0], Q, axis=1)[:, :-2]
    return P, Q


def _cosine_series(sym):
    """Cosine-series coefficients of symmetric polynomials of even degree 2m (one per row).

    ``sym(e^{jw}) e^{jmw} = c_0 + sum_{k>=1} c_k cos(k w)``.
    """
    m = (sym.shape[1] - 1) // 2
    coef = np.empty((sym.shape[0], m + 1))
    coef[:, 0] = sym[:, m]
    if m:
        coef[:, 1:] = 2.0 * sym[:, m - 1 :: -1]
    return coef


def _series_at(coef, w):
    """Row ``i`` of ``coef`` evaluated at the points in row ``i`` of ``w``."""
    k = np.arange(coef.shape[1])
    return np.einsum("nrk,nk->nr", np.cos(w[..., None] * k), coef)


def _half_circle_roots(coef, n_roots, n_grid):
    """Roots on (0, pi) of each row's cosine series, shape ``(rows, n_roots)``.

    Sign changes on a uniform grid bracket the roots and all brackets are
    bisected together. Rows whose grid does not show exactly ``n_roots`` sign
    changes come back as NaN so the caller can retry them on a finer grid.
    """
    out = np.full((coef.shape[0], n_roots), np.nan)
    if n_roots == 0 or coef.shape[0] == 0:
        return out
    grid = np.linspace(0.0, np.pi, n_grid + 1)
    # sum_k c_k cos(k w) is a Chebyshev series in cos(w)
    pos = chebval(np.cos(grid), coef.T) >= 0.0
    change = pos[:, :-1] != pos[:, 1:]
    ok = change.sum(axis=1) == n_roots
    if not ok.any():
        return out
    idx = np.nonzero(change[ok])[1].reshape(-1, n_roots)
    c = coef[ok]
    lo, hi = grid[idx], grid[idx + 1]
    lo_pos = np.take_along_axis(pos[ok], idx, axis=1)
    while np.max(hi - lo) > LSF_TOL:
        mid = 0.5 * (lo + hi)
        left = (_series_at(c, mid) >= 0.0) == lo_pos
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
    out[ok] = 0.5 * (lo + hi)
    return out


def lpc_to_lsf(lpc):
    """Convert a minimum-phase predictor to its line spectral frequencies."""
    a = np.asarray(lpc.a if isinstance(lpc, LpcFrame) else lpc, dtype=np.float64)
    return LsfFrame(lpc_track_to_lsf(a[None, :])[0])


def _pair_product(w, omega):
    """prod_k (1 - 2 cos w_k z^-1 + z^-2) evaluated at z = e^{j omega}."""
    mags = np.prod(2.0 * (np.cos(omega)[:, None] - np.cos(w)[None, :]), axis=1)
    return mags * np.exp(-1j * omega * w.shape[0])


def lsf_to_lpc(lsf):
    """Inverse of :func:`lpc_to_lsf`; returns an :class:`LpcFrame`.

    P and Q are evaluated as pointwise products on the unit circle and A(z)
    is recovered by inverse FFT; expanding the products by repeated
    convolution loses about five digits at order 40.
    """
    w = np.asarray(lsf.w if isinstance(lsf, LsfFrame) else lsf, dtype=np.float64)
    if w.ndim != 1 or not (np.all(np.diff(w) > 0) and w[0] > 0 and w[-1] < np.pi):
        raise ValueError("invalid LSF ordering")
    p = w.shape[0]
    n = 1 << int(np.ceil(np.log2(2 * (p + 2))))
    omega = 2.0 * np.pi * np.arange(n) / n
    zinv = np.exp(-1j * omega)
    P = _pair_product(w[0::2], omega)
    Q = _pair_product(w[1::2], omega)
    if p % 2 == 0:
        P *= 1.0 + zinv
        Q *= 1.0 - zinv
    else:
        Q *= 1.0 - zinv**2
    c = np.fft.ifft(0.5 * (P + Q)).real
    return LpcFrame(-c[1 : p + 1])


def lsf_track_to_lpc(W):
    """Row-wise :func:`lsf_to_lpc` over an ``(n_frames, p)`` LSF track."""
    W = np.asarray(W, dtype=np.float64)
    return np.stack([lsf_to_lpc(row).a for row in W]) if W.shape[0] else np.zeros((0, W.shape[1]))


def lpc_track_to_lsf(A):
    """Row-wise :func:`lpc_to_lsf`, vectorized over the frames of a track."""
    A = np.asarray(A, dtype=np.float64)
    n, p = A.shape
    if n == 0:
        return np.zeros((0, p))
    P, Q = _sum_diff_polynomials(A)
    cp, cq = _cosine_series(P), _cosine_series(Q)
    n_grid = LSF_GRID
    wp = _half_circle_roots(cp, (p + 1) // 2, n_grid)
    wq = _half_circle_roots(cq, p // 2, n_grid)
    retry = np.isnan(wp).any(axis=1) | np.isnan(wq).any(axis=1)
    while retry.any():
        # closely spaced roots can share one grid cell; densify before giving up
        n_grid *= 8
        if n_grid > LSF_GRID_MAX:
            raise ValueError("LSF conversion failed")
        wp[retry] = _half_circle_roots(cp[retry], (p + 1) // 2, n_grid)
        wq[retry] = _half_circle_roots(cq[retry], p // 2, n_grid)
        retry = np.isnan(wp).any(axis=1) | np.isnan(wq).any(axis=1)
    W = np.empty((n, p))
    W[:, 0::2] = wp
    W[:, 1::2] = wq
    if not (np.all(np.diff(W, axis=1) > 0) and np.all(W[:, 0] > 0) and np.all(W[:, -1] < np.pi)):
        raise ValueError("LSF conversion failed")
    return W


# --------------------------------------------------------------------------
# time-varying filtering
# --------------------------------------------------------------------------


def _coerce_track(track):
    if isinstance(track, np.ndarray):
        A = track
    else:
        A = np.stack([f.a if isinstance(f, LpcFrame) else np.asarray(f) for f in track])
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("coefficient track must be (n_frames, order)")
    return A


def _check_framing(n, A, shift):
    if n != A.shape[0] * shift:
        raise ValueError(
            f"signal length {n} does not match {A.shape[0]} frames x shift {shift}"
        )


def lp_analysis(x, lpc_track, shift):
    """Inverse-filter ``x`` with a frame-wise predictor track, returning the excitation."""
    x = np.ascontiguousarray(x.samples if isinstance(x, Signal) else x, dtype=np.float64)
    A = _coerce_track(lpc_track)
    _check_framing(x.shape[0], A, shift)
    return kernels.lp_analysis(x, A, shift)


def is_minimum_phase(a):
    roots = np.roots(np.concatenate([[1.0], -np.asarray(a, dtype=np.float64)]))
    return bool(np.all(np.abs(roots) < 1.0))


def lp_synthesis(excitation, lpc_track, shift, check_stability=False):
    """All-pole synthesis; the exact inverse of :func:`lp_analysis` for the same track."""
    e = np.ascontiguousarray(
        excitation.samples if isinstance(excitation, Signal) else excitation, dtype=np.float64
    )
    A = _coerce_track(lpc_track)
    _check_framing(e.shape[0], A, shift)
    if check_stability:
        import warnings

        unstable = [i for i in range(A.shape[0]) if not is_minimum_phase(A[i])]
        if unstable:
            warnings.warn(
                f"{len(unstable)} non-minimum-phase frames; synthesis output may grow",
                RuntimeWarning,
                stacklevel=2,
            )
    x = kernels.lp_synthesis(e, A, shift)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("synthesis diverged")
    return x


# --------------------------------------------------------------------------
# mu-law
# --------------------------------------------------------------------------


def mu_law_encode(x, bits=8):
    """Compand and quantize ``x`` (clamped to [-1, 1]) to integer codes."""
    q = 1 << bits
    mu = q - 1.0
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    f = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
    code = np.floor((f + 1.0) * 0.5 * q)
    return np.clip(code, 0, q - 1).astype(np.int64)


def mu_law_decode(code, bits=8):
    """Map codes back to amplitudes at the companded bin centres."""
    q = 1 << bits
    mu = q - 1.0
    code = np.asarray(code)
    if np.any(code < 0) or np.any(code > q - 1):
        raise ValueError(f"mu-law code out of range [0, {q - 1}]")
    y = (code.astype(np.float64) + 0.5) / (q / 2) - 1.0
    return np.sign(y) * np.expm1(np.abs(y) * np.log1p(mu)) / mu


# --------------------------------------------------------------------------
# time-invariant noise-shaping filter
# --------------------------------------------------------------------------


@dataclass
class NoiseShapingFilter:
    lpc: LpcFrame

    @property
    def a(self):
        return self.lpc.a


def derive_noise_shaping_filter(corpus, order=LPC_ORDER, frame_len=480, shift=120):
    """Single predictor from the frame-averaged autocorrelation of a corpus."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    total = np.zeros(order + 1)
    count = 0
    w = hann(frame_len)
    for sig in corpus:
        frames = frame_signal(sig, frame_len, shift)
        R = kernels.autocorr_frames(np.ascontiguousarray(frames * w), order)
        total += R.sum(axis=0)
        count += R.shape[0]
    r = total / count
    if r[0] <= 0.0:
        raise ValueError("corpus is silent; cannot derive a noise-shaping filter")
    r[0] *= R0_REGULARIZATION
    return NoiseShapingFilter(levinson_durbin(r, order))


def apply_noise_shaping(x, filt):
    x = np.ascontiguousarray(x.samples if isinstance(x, Signal) else x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    return kernels.lp_analysis(x, np.ascontiguousarray(filt.a[None, :]), x.shape[0])


def invert_noise_shaping(x, filt):
    x = np.ascontiguousarray(x.samples if isinstance(x, Signal) else x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    y = kernels.lp_synthesis(x, np.ascontiguousarray(filt.a[None, :]), x.shape[0])
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("synthesis diverged")
    return y
