"""Time the compiled kernels against the numpy fallback on desk-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from graybox import kernels, lab
from graybox.quantum import pauli_eigenstates


def _cases(rng):
    B, M, H = 64, 128, 32
    fx, fy = rng.uniform(-25, 25, (2, B, M))
    steps, _ = kernels.chain_forward(fx, fy, 12.0, 1 / M)
    ubar = rng.normal(size=(B, 2, 2)) + 1j * rng.normal(size=(B, 2, 2))
    cases = {
        "chain_forward B=64": lambda: kernels.chain_forward(fx, fy, 12.0, 1 / M),
        "chain_vjp B=64": lambda: kernels.chain_vjp(fx, fy, 12.0, 1 / M, steps, ubar),
    }
    for name, cfg, n in (("fermionic", lab.fermionic_config(), 16), ("bosonic", lab.bosonic_config(), 2)):
        gen = lab.build_joint_generator(cfg)
        rho = np.stack([lab._joint_initial(cfg, pauli_eigenstates())] * n)
        cases[f"lindblad_rk4 {name} B={n}"] = (
            lambda gen=gen, rho=rho, n=n, dt=cfg.dt: kernels.lindblad_rk4(
                gen.effective_static(), gen.h_x, gen.h_y, fx[:n], fy[:n], gen.jumps, rho, dt, 4))
    a = rng.normal(size=(M, 128, 3 * H))
    U = rng.normal(size=(H, 3 * H)) * 0.3
    hs, cache = kernels.BACKENDS["python"].gru_forward(a, U)
    g = rng.normal(size=hs.shape)
    cases["gru_backward B=128 H=32"] = lambda: kernels.gru_backward(g, U, cache)
    return cases


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = _cases(np.random.default_rng(0))
    backends = sorted(kernels.BACKENDS)
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}")
    for name, fn in cases.items():
        times = {}
        for b in backends:
            kernels.set_backend(b)
            fn()
            times[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:34s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in backends) + f"{ratio:9.1f}x")


if __name__ == "__main__":
    main()
