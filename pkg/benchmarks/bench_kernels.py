"""Time the compiled tree kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Each row is one stage transition of a Rademacher tree with ``d`` noise
coordinates (``2**d`` children per parent) and ``F`` features per node.
"""
import argparse
import timeit

import numpy as np

from scotkit import _pykernels, kernels

try:
    from scotkit import _ckernels
except ImportError:
    _ckernels = None


def _case(d, parents, F, rng):
    J = 2**d
    signs = np.array(np.meshgrid(*[[1.0, -1.0]] * d, indexing="ij")).reshape(d, -1).T
    basis = np.hstack([np.ones((J, 1)), signs])
    coef = basis / J
    values = rng.normal(size=(parents * J, F))
    comps = rng.normal(size=(d + 1, parents, F))
    return values, coef, comps, basis


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'d':>2} {'parents':>8} {'F':>3} {'kernel':>8} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for d, parents, F in [(1, 2**8, 1), (1, 2**14, 1), (1, 2**14, 4), (2, 4**7, 2), (3, 8**5, 3)]:
        values, coef, comps, basis = _case(d, parents, F, rng)
        for name, fn, a in [("project", kernels.project_children, (values, coef)),
                            ("lift", kernels.lift_children, (comps, basis))]:
            np.testing.assert_allclose(fn(*a, impl=_ckernels), fn(*a, impl=_pykernels), rtol=1e-12, atol=1e-12)
            tp = min(timeit.repeat(lambda: fn(*a, impl=_pykernels), number=1, repeat=args.repeat))
            tc = min(timeit.repeat(lambda: fn(*a, impl=_ckernels), number=1, repeat=args.repeat))
            print(f"{d:>2} {parents:>8} {F:>3} {name:>8} {1e3 * tp:>10.3f} {1e3 * tc:>10.3f} {tp / tc:>8.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
