"""Time every hot kernel under numba and under its numpy twin.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both flavours are called directly, so the result does not depend on
``S2P_DISABLE_NUMBA``. Each row also reports the largest absolute difference
between the two outputs.
"""

import argparse
import timeit

import numpy as np

from speech2phone import kernels
from speech2phone._accel import HAVE_NUMBA
from speech2phone.audio import _filter_table


def workloads(rng):
    """Inputs sized like real use.

    30 s of 44.1 kHz audio, a 2,000-entry database, and 500 instances scored
    against an 8-component mixture.
    """
    up, down = 1, 2                                   # 44,100 Hz -> 22,050 Hz
    x = rng.standard_normal(44100 * 30)
    n_out = len(x) * up // down
    table = _filter_table(up, down)
    db = rng.standard_normal((2000, 80))
    frames = rng.standard_normal((500, 2808))
    means = rng.standard_normal((8, frames.shape[1]))
    variances = rng.uniform(0.5, 2.0, means.shape)
    z = rng.standard_normal((128, 572))
    return {
        "polyphase": (x, table, up, down, n_out),
        "sq_distances": (rng.standard_normal(80), db),
        "diag_logpdf": (frames, means, variances),
        "elu": (z,),
        "elu_grad": (z, rng.standard_normal(z.shape)),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repetitions; the best is reported")
    args = parser.parse_args(argv)

    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    inputs = workloads(np.random.default_rng(0))
    print(f"{'kernel':<14}{'numba ms':>12}{'numpy ms':>12}{'speed-up':>10}{'max |diff|':>14}")
    for name, call_args in inputs.items():
        fast, slow = kernels.NUMBA_KERNELS[name], kernels.NUMPY_KERNELS[name]
        diff = float(np.max(np.abs(fast(*call_args) - slow(*call_args))))   # also warms up the JIT
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<14}{1e3 * t_fast:>12.3f}{1e3 * t_slow:>12.3f}{t_slow / t_fast:>9.1f}x{diff:>14.2e}")


if __name__ == "__main__":
    main()
