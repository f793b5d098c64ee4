"""Time the compiled kernels against the numpy fallback.

Each kernel runs on representative shapes with both backends; the
report lists best-of-N wall times, the speed ratio, and the largest
cross-backend deviation (expected ~1e-12, last-ulp transcendentals).

    python3 benchmarks/bench_kernels.py [--batch 256] [--agents 120]
"""

import argparse
import time

import numpy as np

from pedflow.kernels import available_backends, get_backend

RING = (1.0, 2.0, 3.0, 4.0)
SECTORS = 8


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def deviation(a, b) -> float:
    """Largest elementwise gap across possibly tupled results."""
    if isinstance(a, tuple):
        return max(deviation(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64)
                               - np.asarray(b, dtype=np.float64))))


def make_cases(batch: int, hidden: int, agents: int):
    rng = np.random.default_rng(42)
    preact = rng.standard_normal((batch, 4 * hidden))
    c_prev = rng.standard_normal((batch, hidden))
    # the backward pass consumes the forward cache; build it once
    from pedflow._kernels_py import lstm_gates_forward as fwd
    _h, c, act = fwd(preact, c_prev)
    dh = rng.standard_normal((batch, hidden))
    dc = rng.standard_normal((batch, hidden))
    pos = rng.uniform(-20.0, 20.0, (agents, 2))
    theta = rng.uniform(-np.pi, np.pi, agents)
    cos_h, sin_h = np.cos(theta), np.sin(theta)
    big = rng.standard_normal((batch, 4 * hidden))
    return [
        ("sigmoid", lambda k: k.sigmoid(big)),
        ("lstm_gates_forward", lambda k: k.lstm_gates_forward(preact, c_prev)),
        ("lstm_gates_backward",
         lambda k: k.lstm_gates_backward(dh, dc, act, c_prev, c)),
        ("occupancy_counts_all",
         lambda k: k.occupancy_counts_all(pos, cos_h, sin_h, RING, SECTORS)),
        ("avoidance_terms",
         lambda k: k.avoidance_terms(pos, 2.0, 1.0, 2.5, 1e-9)),
    ]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--agents", type=int, default=120)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    backends = available_backends()
    if backends == ["py"]:
        print("compiled backend not built; timing the fallback only")
    impls = {name: get_backend(name) for name in backends}

    print(f"batch={args.batch} hidden={args.hidden} agents={args.agents} "
          f"best of {args.repeats}")
    print(f"{'kernel':<22}" + "".join(f"{n:>12}" for n in backends)
          + ("" if len(backends) < 2 else f"{'ratio':>9}{'max dev':>12}"))
    for name, call in make_cases(args.batch, args.hidden, args.agents):
        times = {n: best_of(lambda: call(impls[n]), args.repeats)
                 for n in backends}
        row = f"{name:<22}" + "".join(f"{times[n] * 1e6:>10.1f}us"
                                      for n in backends)
        if len(backends) == 2:
            dev = deviation(call(impls[backends[0]]),
                            call(impls[backends[1]]))
            row += f"{times['py'] / times['c']:>8.1f}x{dev:>12.2e}"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
