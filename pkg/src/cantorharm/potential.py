"""Discrete potentials g_n on a level and g~_n off it.

Exact summation walks the cell tree: for every disagreement index m the
points of one generation-(m-1) cell split into N child blocks, and every
pair of blocks (i, j) contributes a dense block of kernel values computed
from offsets relative to that common ancestor.  Each unordered pair is
evaluated once and its row and column sums are added to both sides.  The
block order is fixed, so results do not depend on how the work is scheduled.

The hierarchical variant replaces a far source cell by its centroid.  Since
the centroid kills the first-order term, the remainder is second order and
is bounded cell by cell: for the log kernel by |v|^2 / (2 (1 - |v|)) with
v = radius / distance, for the ring kernel through the second derivative.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Level
from .exceptions import BudgetError, DegenerateGeometryError, DomainError, UsageError
from .kernels import KernelSpec, ring_kernel, ring_second_derivative_bound

_BLOCK = 1 << 21
_EPS = np.finfo(np.float64).eps


@dataclass
class PotentialProfile:
    """Per-point potentials g_n with their certified error bounds."""

    generation: int
    values: np.ndarray
    err_bound: np.ndarray
    alphabet_size: int = 2
    method: str = "naive"
    err_budget: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def c(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())

    @property
    def oscillation(self) -> float:
        return self.max - self.c

    @property
    def normalized_oscillation(self) -> float:
        return self.oscillation * float(self.alphabet_size) ** self.generation

    @property
    def max_error(self) -> float:
        return float(self.err_bound.max())

    def summary(self) -> dict:
        return {
            "n": self.generation,
            "c_n": self.c,
            "oscillation": self.oscillation,
            "method": self.method,
            "err_budget": self.err_budget,
            "max_err_bound": self.max_error,
        }

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "cell_index", "g_value", "err_bound"])
        for i, (g, e) in enumerate(zip(self.values, self.err_bound)):
            w.writerow([self.generation, i, repr(float(g)), repr(float(e))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=1)


def _kernel_fn(kernel: KernelSpec):
    if kernel.kind == "log":
        return np.log
    return lambda d: ring_kernel(d, 1.0, kernel.ndim, kernel.tol)


def _rounding_bound(abs_sum, count, depth):
    return abs_sum * (math.ceil(math.log2(max(count, 2))) + depth + 2) * _EPS


def _offset_bound(level, kernel, abs_sum):
    """Kernel change caused by rounding in the stored offsets.

    Each offset carries relative error <= (n + 1) eps of its size, and an
    offset is at most spread/separation times the distance it enters.
    """
    spec, n, M = level.spec, level.generation, level.size
    rel = 2 * (n + 1) * _EPS * spec.spread_constant / spec.separation_constant
    if kernel.kind == "log":
        return level.weight * (M - 1) * rel
    return level.weight * (kernel.ndim - 2) * abs_sum * rel


def _check_gap(d, level, P0, i, j, s0, S, N):
    if d.min() > 0:
        return
    p, s, t = np.unravel_index(int(np.argmin(d)), d.shape)
    a = ((P0 + p) * N + i) * S + s0 + s
    b = ((P0 + p) * N + j) * S + t
    raise DegenerateGeometryError(f"cells {a} and {b} coincide", cells=(int(a), int(b)))


def _exact_level_pairs(level, m, kfun, total, absum):
    """Add every pair whose words first disagree at index m."""
    N, n = level.spec.size, level.generation
    P, S = N ** (m - 1), N ** (n - m)
    o = level.offsets[m - 1].reshape(P, N, S)
    T = total.reshape(P, N, S)
    A = absum.reshape(P, N, S)
    pc = max(1, _BLOCK // (S * S))
    sc = S if S * S <= _BLOCK else max(1, _BLOCK // S)
    for i in range(N):
        for j in range(i + 1, N):
            for p0 in range(0, P, pc):
                p1 = min(P, p0 + pc)
                for s0 in range(0, S, sc):
                    s1 = min(S, s0 + sc)
                    d = np.abs(o[p0:p1, i, s0:s1, None] - o[p0:p1, j, None, :])
                    _check_gap(d, level, p0, i, j, s0, S, N)
                    v = kfun(d)
                    av = np.abs(v)
                    T[p0:p1, i, s0:s1] += v.sum(2)
                    T[p0:p1, j, :] += v.sum(1)
                    A[p0:p1, i, s0:s1] += av.sum(2)
                    A[p0:p1, j, :] += av.sum(1)


def potential_profile(level: Level, kernel: KernelSpec | None = None) -> PotentialProfile:
    """Exact g_n(x) = w_n sum_{y != x} e(y - x) for every point of the level."""
    kernel = kernel or KernelSpec.for_spec(level.spec)
    if level.size < 2:
        raise UsageError("a potential profile needs at least two points")
    M, n = level.size, level.generation
    total = np.zeros(M)
    absum = np.zeros(M)
    kfun = _kernel_fn(kernel)
    for m in range(1, n + 1):
        _exact_level_pairs(level, m, kfun, total, absum)
    w = level.weight
    err = w * _rounding_bound(absum, M, n) + w * (M - 1) * kernel.abs_error() + _offset_bound(level, kernel, absum)
    return PotentialProfile(n, w * total, err, level.spec.size, "naive", None)


def _as_complex(y) -> complex:
    if isinstance(y, (tuple, list, np.ndarray)) and len(y) == 2:
        return complex(float(y[0]), float(y[1]))
    return complex(y)


def potential_at(y, level: Level, kernel: KernelSpec | None = None, anchor: int | None = None) -> float:
    """g~_n(y) = w_n sum_{x in K_n} e(y - x).

    Planar kernels take ``y`` as a complex number or an (x, y) pair.  The ring
    kernel takes ``y`` as (t, R): axis coordinate and distance from the axis.
    With ``anchor`` set, ``y`` is an offset from point ``anchor`` of the level
    (the axis part only, for the ring) and differences keep full precision.
    """
    kernel = kernel or KernelSpec.for_spec(level.spec)
    w = level.weight
    if kernel.kind == "ring":
        t, R = (float(y[0]), float(y[1]))
        if anchor is None:
            dt = t - level.coords
        else:
            dt = level.differences_from(anchor, t)
        try:
            vals = ring_kernel(np.abs(dt), R, kernel.ndim, kernel.tol)
        except DomainError as exc:
            raise DomainError(f"y coincides with a ring of the level: {exc}") from exc
        return float(w * vals.sum())
    y = _as_complex(y)
    if anchor is None:
        diff = y - level.points
    else:
        diff = level.differences_from(anchor, y)
    d = np.abs(diff)
    if np.any(d == 0):
        raise DomainError("y coincides with a point of the level")
    return float(w * np.log(d).sum())


def potentials_at(Y, level: Level, kernel: KernelSpec | None = None) -> np.ndarray:
    """Vectorized potential_at for many planar points (complex array)."""
    kernel = kernel or KernelSpec.for_spec(level.spec)
    Y = np.asarray(Y)
    out = np.empty(Y.shape[0])
    rows = max(1, _BLOCK // max(level.size, 1))
    if kernel.kind == "ring":
        for s in range(0, len(Y), rows):
            t = Y[s : s + rows, 0][:, None] - level.coords[None, :]
            R = np.broadcast_to(Y[s : s + rows, 1][:, None], t.shape)
            out[s : s + rows] = ring_kernel(np.abs(t), R, kernel.ndim, kernel.tol).sum(1)
        return level.weight * out
    pts = level.points
    for s in range(0, len(Y), rows):
        d = np.abs(Y[s : s + rows, None] - pts[None, :])
        if np.any(d == 0):
            raise DomainError("a query point coincides with a point of the level")
        out[s : s + rows] = np.log(d).sum(1)
    return level.weight * out


def _cell_remainder(kernel, mass, rad, d):
    """Bound on |sum over cell - mass * e(centroid)| for a centroid at distance d."""
    out = np.full(d.shape, np.inf)
    ok = rad < d
    if kernel.kind == "log":
        v = np.where(ok, rad / np.where(ok, d, 1.0), 0.0)
        out = np.where(ok, mass * v * v / (2 * (1 - v)), np.inf)
        return out
    if np.any(ok):
        gap = (d - rad)[ok]
        sb = ring_second_derivative_bound(gap, kernel.ndim, kernel.tol)
        out[ok] = (mass * rad * rad / 2 * np.ones_like(d))[ok] * sb
    return out


def hier_potential_profile(
    level: Level,
    kernel: KernelSpec | None = None,
    err_budget: float = 1e-9,
    max_open_depth: int | None = None,
) -> PotentialProfile:
    """g_n with far cells replaced by centroids, certified to ``err_budget`` per point.

    The budget is split evenly over the disagreement indices m = 1..n.  For
    each m the source cells are opened to the smallest uniform depth whose
    summed remainder bound fits the share; at full depth the sum is exact.
    A non-finite budget falls back to exact summation.
    """
    kernel = kernel or KernelSpec.for_spec(level.spec)
    if not (err_budget > 0):
        raise BudgetError(f"error budget must be positive, got {err_budget}", attainable=None)
    if not math.isfinite(err_budget):
        prof = potential_profile(level, kernel)
        prof.method, prof.err_budget = "hier", err_budget
        return prof
    if level.size < 2:
        raise UsageError("a potential profile needs at least two points")
    N, n, M = level.spec.size, level.generation, level.size
    w = level.weight
    share = err_budget / n
    total = np.zeros(M)
    absum = np.zeros(M)
    trunc = np.zeros(M)
    kfun = _kernel_fn(kernel)
    depths = {}
    shortfall = 0.0
    for m in range(1, n + 1):
        P, S = N ** (m - 1), N ** (n - m)
        o = level.offsets[m - 1].reshape(P, N, S)
        limit = n - m if max_open_depth is None else min(n - m, max_open_depth)
        chosen = None
        for q in range(0, limit + 1):
            Q = N**q
            L = S // Q
            if L == 1 or (P * S * Q > 8 * _BLOCK and q == limit):
                chosen = q
                break
            if P * S * Q > 8 * _BLOCK:
                # testing deeper cuts costs more than summing exactly
                if limit == n - m:
                    chosen = n - m
                    break
                continue
            cen = o.reshape(P, N, Q, L).mean(-1)
            rad = np.abs(o.reshape(P, N, Q, L) - cen[..., None]).max(-1)
            bound = np.zeros((P, N, S))
            for i in range(N):
                for j in range(N):
                    if i == j:
                        continue
                    d = np.abs(o[:, i, :, None] - cen[:, j, None, :])
                    bound[:, i, :] += _cell_remainder(kernel, w * L, rad[:, j, None, :], d).sum(-1)
            if bound.max() <= share:
                chosen = q
                break
        if chosen is None:
            shortfall += float(bound.max())
            continue
        depths[m] = chosen
        Q = N**chosen
        L = S // Q
        if L == 1:
            _exact_level_pairs(level, m, kfun, total, absum)
            continue
        T = total.reshape(P, N, S)
        A = absum.reshape(P, N, S)
        E = trunc.reshape(P, N, S)
        cells = o.reshape(P, N, Q, L)
        cen = cells.mean(-1)
        rad = np.abs(cells - cen[..., None]).max(-1)
        for i in range(N):
            for j in range(N):
                if i == j:
                    continue
                d = np.abs(o[:, i, :, None] - cen[:, j, None, :])
                v = L * kfun(d)
                T[:, i, :] += v.sum(-1)
                A[:, i, :] += np.abs(v).sum(-1)
                E[:, i, :] += _cell_remainder(kernel, w * L, rad[:, j, None, :], d).sum(-1)
    if shortfall:
        raise BudgetError(
            f"budget {err_budget} not attainable with open depth {max_open_depth}",
            attainable=shortfall,
        )
    err = (
        trunc
        + w * _rounding_bound(absum, M, n)
        + w * (M - 1) * kernel.abs_error()
        + _offset_bound(level, kernel, absum)
    )
    prof = PotentialProfile(n, w * total, err, N, "hier", err_budget)
    prof.extra["open_depths"] = depths
    return prof
