"""Time each hot kernel under numba and under the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

The first numba call (compilation, or loading the on-disk cache) is excluded;
each row reports the best of ``--repeat`` runs and checks the two paths agree.
"""

import argparse
import time

import numpy as np

from excitnet import kernels, net
from excitnet.synthetic import formant_lpc


def best_of(fn, args, repeat):
    fn(*args)  # warm-up / JIT
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    return float(d.max()) if d.size else 0.0


def cases(quick):
    rng = np.random.default_rng(0)
    n_sec = 1 if quick else 4
    n = 24000 * n_sec
    n_frames = n // 120
    frames = rng.standard_normal((n_frames, 480))
    R = kernels.autocorr_frames_np(frames, 40)
    A = np.tile(formant_lpc(), (n_frames, 1))
    x = rng.standard_normal(n)
    dout = rng.standard_normal((4800, 64)).astype(np.float32)
    a = np.tanh(rng.standard_normal((4800, 64))).astype(np.float32)
    s = (0.5 + 0.5 * np.tanh(rng.standard_normal((4800, 64)))).astype(np.float32)

    nt = net.init_network(net.NetConfig())
    p = nt.params
    steps = 240 if quick else 1200
    cond_proj = np.zeros((steps // 120 + 1, nt.config.n_layers, 2 * nt.config.gate_channels),
                         dtype=np.float32)
    gen_args = (p["embed"], p["w_prev"], p["w_cur"], p["b_dil"], cond_proj, 120, nt.dilations,
                p["w_res"], p["b_res"], p["w_skip"], p["b_skip"], p["w_out1"], p["b_out1"],
                p["w_out2"], p["b_out2"], steps, rng.random(steps), False, False)

    return [
        (f"autocorr {n_frames}x480 lag 40", kernels.autocorr_frames_nb, kernels.autocorr_frames_np,
         (frames, 40)),
        (f"levinson {n_frames} x order 40", kernels.levinson_nb, kernels.levinson_np, (R, 40)),
        (f"lp_analysis {n} samples", kernels.lp_analysis_nb, kernels.lp_analysis_np, (x, A, 120)),
        (f"lp_synthesis {n} samples", kernels.lp_synthesis_nb, kernels.lp_synthesis_np, (x * 1e-3, A, 120)),
        ("gate_backward 4800x64", kernels.gate_backward_nb, kernels.gate_backward_np, (dout, a, s)),
        (f"generate {steps} steps (toy net)", kernels.generate_nb, kernels.generate_np, gen_args),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)
    print(f"{'kernel':<36}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, f_nb, f_np, fargs in cases(args.quick):
        t_nb, o_nb = best_of(f_nb, fargs, args.repeat)
        t_np, o_np = best_of(f_np, fargs, args.repeat)
        diff = _max_diff(o_nb, o_np)
        print(f"{name:<36}{t_nb * 1e3:>12.2f}{t_np * 1e3:>12.2f}{t_np / t_nb:>9.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()
