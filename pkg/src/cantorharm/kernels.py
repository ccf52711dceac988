"""Potential kernels: ln|x| in the plane and the ring kernel e(t, R).

The ring kernel is the average of |p - y|^(2-n) over the unit (n-2)-sphere
y in the hyperplane orthogonal to the axis, for a point p at axis coordinate
t and distance R from the axis.  By symmetry it reduces to one integral over
the polar angle phi in [0, pi]:

    e(t, R) = Z^-1 int_0^pi (rho^2 + 4 R sin^2(phi/2))^(-(n-2)/2) sin^(n-3)(phi) dphi

with rho^2 = t^2 + (R-1)^2 and Z = int_0^pi sin^(n-3).  The integrand is
peaked at phi = 0 with width ~ rho/sqrt(R), so the interval is cut into
panels [0, s], [s, 2s], [2s, 4s], ... graded towards the peak, and each panel
gets Gauss-Legendre rules of two orders whose difference is the error
estimate.  Panels are halved until the estimate meets the tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .core import GeneratorSpec, LineBinary, RingAxis, RootsOfUnity, PARAM_TOL
from .exceptions import DomainError, NumericError, SingularityError

# Closest approach to the (0, 1) singularity that is still evaluated.
SINGULAR_RADIUS = 1e-30

_HIGH, _LOW = 20, 10
_CHUNK = 2048
_MAX_REFINE = 6


def log_kernel(d):
    """Natural logarithm of a positive distance (array-aware)."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise DomainError("log kernel needs strictly positive distances")
    out = np.log(arr)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def sphere_normalizer(ndim: int) -> float:
    """int_0^pi sin^(ndim-3)(phi) dphi, from the Gamma closed form."""
    k = ndim - 3
    return math.sqrt(math.pi) * math.exp(gammaln((k + 1) / 2) - gammaln(k / 2 + 1))


@lru_cache(maxsize=None)
def _gauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1) / 2, w / 2


def _panel_edges(scale: np.ndarray, split: int) -> np.ndarray:
    """Graded breakpoints 0, s, 2s, 4s, ... clipped at pi, each panel cut in ``split``."""
    smin = max(float(scale.min()), SINGULAR_RADIUS)
    K = max(int(math.ceil(math.log2(math.pi / smin))) + 1, 1) if smin < math.pi else 1
    base = np.concatenate([[0.0], 2.0 ** np.arange(K)])  # 0, 1, 2, 4, ...
    edges = np.minimum(scale[:, None] * base[None, :], math.pi)
    edges[:, -1] = math.pi
    if split > 1:
        frac = np.arange(split) / split
        lo, hi = edges[:, :-1], edges[:, 1:]
        fine = lo[:, :, None] + (hi - lo)[:, :, None] * frac[None, None, :]
        edges = np.concatenate([fine.reshape(len(scale), -1), edges[:, -1:]], axis=1)
    return edges


def _integrate(rho2, R, ndim, power, edges, order):
    x, w = _gauss(order)
    lo, hi = edges[:, :-1], edges[:, 1:]
    h = hi - lo
    phi = lo[:, :, None] + h[:, :, None] * x[None, None, :]
    s = np.sin(phi / 2)
    f = (rho2[:, None, None] + 4 * R[:, None, None] * s * s) ** (-power)
    if ndim > 3:
        f = f * np.sin(phi) ** (ndim - 3)
    return (f * w).sum(-1) * h


def ring_average(t, R, ndim: int = 3, power=None, tol: float = 1e-12, return_error: bool = False):
    """Normalized sphere average of (t^2 + |x' - y|^2)^(-power).

    ``power`` defaults to (ndim - 2)/2, which gives the ring kernel.
    """
    if power is None:
        power = (ndim - 2) / 2
    t, R = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(R, dtype=np.float64))
    shape = t.shape
    t, R = t.ravel(), R.ravel()
    if np.any(R < 0) or not np.all(np.isfinite(t)) or not np.all(np.isfinite(R)):
        raise DomainError("ring kernel needs finite t and R >= 0")
    rho = np.hypot(t, R - 1)
    if np.any(rho <= SINGULAR_RADIUS):
        raise SingularityError("ring kernel evaluated at its (t, R) = (0, 1) singularity")
    Z = sphere_normalizer(ndim)
    value = np.empty_like(t)
    error = np.empty_like(t)
    for start in range(0, t.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        rho2 = rho[sl] ** 2
        Rs = R[sl]
        scale = np.minimum(rho[sl] / np.sqrt(np.maximum(Rs, 1e-300)), math.pi)
        for refine in range(_MAX_REFINE):
            edges = _panel_edges(scale, 2**refine)
            hi = _integrate(rho2, Rs, ndim, power, edges, _HIGH)
            lo = _integrate(rho2, Rs, ndim, power, edges, _LOW)
            val = hi.sum(1) / Z
            err = np.abs(hi - lo).sum(1) / Z
            if np.all(err <= tol * np.maximum(1.0, np.abs(val))):
                break
        else:
            raise NumericError(f"ring quadrature did not reach tolerance {tol}")
        value[sl] = val
        error[sl] = err
    value = value.reshape(shape)
    error = error.reshape(shape)
    if shape == ():
        value, error = float(value), float(error)
    return (value, error) if return_error else value


def ring_kernel(t, R, n: int = 3, tol: float = 1e-12, return_error: bool = False):
    """Ring kernel e(t, R) in ambient dimension n (see module docstring)."""
    return ring_average(t, R, ndim=n, tol=tol, return_error=return_error)


def ring_second_derivative_bound(t_min, ndim: int = 3, tol: float = 1e-12):
    """Upper bound of |d^2/dt^2 e(t, 1)| over |t| >= t_min."""
    k = (ndim - 2) / 2
    return (6 * k + 4 * k * k) * ring_average(t_min, 1.0, ndim=ndim, power=k + 1, tol=tol)


@dataclass(frozen=True)
class KernelSpec:
    """Which kernel a potential uses; ``ndim`` and ``tol`` matter for the ring."""

    kind: str = "log"
    ndim: int = 3
    tol: float = 1e-12

    def __post_init__(self):
        if self.kind not in ("log", "ring"):
            raise DomainError(f"unknown kernel kind {self.kind!r}")

    @classmethod
    def for_spec(cls, spec: GeneratorSpec, tol: float = 1e-12) -> "KernelSpec":
        if isinstance(spec.alphabet, RingAxis):
            return cls("ring", spec.alphabet.ndim, tol)
        return cls("log")

    def of_distance(self, d, return_error=False):
        """Kernel value for positive distances (axis separations for the ring)."""
        d = np.asarray(d, dtype=np.float64)
        if self.kind == "log":
            v = log_kernel(d)
            return (v, np.zeros_like(d)) if return_error else v
        return ring_kernel(d, 1.0, self.ndim, self.tol, return_error=return_error)

    def abs_error(self) -> float:
        """Per-evaluation error allowance (zero for the exact log kernel)."""
        return 0.0 if self.kind == "log" else self.tol


def sibling_increment(spec: GeneratorSpec, a_val, n: int, kernel: KernelSpec | None = None):
    """Potential at a generation-n point due to its siblings, as a function of spacing.

    Siblings sit at (a_val/2) r^(n-1) times the letters around their parent.
    """
    kernel = kernel or KernelSpec.for_spec(spec)
    arr = np.asarray(a_val, dtype=np.float64)
    if np.any(arr < 1 - PARAM_TOL) or np.any(arr > spec.a + PARAM_TOL):
        raise DomainError(f"spacing {a_val} outside [1, {spec.a}]")
    scale = arr * spec.r ** (n - 1)
    alph = spec.alphabet
    if isinstance(alph, LineBinary):
        out = np.log(scale)
    elif isinstance(alph, RootsOfUnity):
        out = (alph.N - 1) * np.log(scale / 2) + math.log(alph.N)
    else:
        out = kernel.of_distance(scale)
    return float(out) if np.ndim(out) == 0 else out
