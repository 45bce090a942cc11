import numpy as np
import pytest

from dropstab.statespace import TransferMatrix, realize


def _mul(*polys):
    out = np.array([1.0])
    for p in polys:
        out = np.convolve(out, np.asarray(p, dtype=float))
    return out.tolist()


@pytest.fixture(scope="session")
def example_tf() -> TransferMatrix:
    """Two-channel unstable NMP benchmark plant used throughout the suite.

    G11 = (z-0.25)(z+2) / (z(z-2)(z+1.5))
    G12 = (z-1.5)       / (z(z+1.5))
    G21 = (z+2)         / (z(z-2))
    G22 = (2z-2.75)(z-1.5) / (z(z-0.25)(z-2.5))
    """
    num = [
        [_mul([1, -0.25], [1, 2]), [1, -1.5]],
        [[1, 2], _mul([2, -2.75], [1, -1.5])],
    ]
    den = [
        [_mul([1, 0], [1, -2], [1, 1.5]), _mul([1, 0], [1, 1.5])],
        [_mul([1, 0], [1, -2]), _mul([1, 0], [1, -0.25], [1, -2.5])],
    ]
    return TransferMatrix(num=tuple(map(tuple, num)), den=tuple(map(tuple, den)))


@pytest.fixture(scope="session")
def example_ss(example_tf):
    return realize(example_tf)


#: channel zeros of the benchmark plant (one simple zero outside the disc per column)
EXAMPLE_ZEROS = (-2.0, 1.5)

#: unstable eigenvalue allocations of its two admissible decompositions,
#: keyed by processing order: ordering (1,2) and ordering (2,1)
EXAMPLE_LAMBDA_12 = ((2.0, -1.5), (2.5,))
EXAMPLE_LAMBDA_21 = ((2.0,), (-1.5, 2.5))

#: exact per-channel bounds (independent Parseval/fraction oracle)
VERTEX_12 = (1.0 / 21.0, 64.0 / 2605.0)
VERTEX_21 = (16.0 / 91.0, 9216.0 / 651245.0)
