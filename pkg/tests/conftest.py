import itertools

import numpy as np
import pytest

from cantorharm.calibrate import run_construction
from cantorharm.core import GeneratorSpec

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def default_spec():
    return GeneratorSpec()


@pytest.fixture(scope="session")
def default_run(default_spec):
    return run_construction(default_spec, 12)


@pytest.fixture(scope="session")
def control_run(default_spec):
    return run_construction(default_spec, 12, calibrate=False)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def longdouble_points(params, n):
    """Coordinates of K_n from the raw word sum in extended precision."""
    spec = params.spec
    N = spec.size
    letters = spec.alphabet.letters()
    ctype = np.clongdouble if spec.alphabet.planar else np.longdouble
    r = np.longdouble(spec.r)
    out = []
    for word in itertools.product(range(N), repeat=n):
        z = ctype(0)
        for k in range(1, n + 1):
            prefix = word[: k - 1]
            idx = 0
            for d in prefix:
                idx = idx * N + d
            coef = np.longdouble(params.coefficients(k - 1)[idx])
            z += coef / 2 * r ** (k - 1) * ctype(letters[word[k - 1]])
        out.append(z)
    return np.array(out, dtype=ctype)


def brute_profile(params, n, with_error=False):
    """g_n by a direct double loop over extended-precision coordinates.

    The error estimate covers coordinate rounding (a few extended ulps of
    the largest coordinate, divided by each distance) and the summation.
    """
    pts = longdouble_points(params, n)
    d = np.abs(pts[:, None] - pts[None, :])
    np.fill_diagonal(d, 1)
    N = params.spec.size
    w = np.longdouble(N) ** -n
    vals = (np.log(d).sum(1) * w).astype(np.float64)
    if not with_error:
        return vals
    ulp = np.finfo(np.longdouble).eps * 4 * (n + 1) * np.abs(pts).max()
    inv = 1 / d
    np.fill_diagonal(inv, 0)
    err = w * ulp * inv.sum(1) + w * np.abs(np.log(d)).sum(1) * np.finfo(np.longdouble).eps * len(pts)
    return vals, err.astype(np.float64) + 4e-16 * np.abs(vals)
