"""Analytic majorants of the increments D2, D3 and the (a, r) feasibility check.

For a point x of generation n, the sources y != x^ of generation n-1 sit in
annuli l = 1..n-1: there are (N-1) N^(l-1) of them at distance at least
c r^(n-l-1), where c is the separation constant of the generator.  With
u_l = (a/2) r^l / c (the ratio of the child displacement to that distance)

    |D2| <= N  sum_l (N-1) N^(l-1) u_l / (1 - u_l)
    |D3| <=    sum_l (N-1) N^(l-1) u_l^2 / (1 - u_l^2)

which for the binary line are exactly the classical series.  The sums run to
infinity; consecutive terms shrink at least by N r (resp. N r^2), so the
series is cut once the geometric tail majorant drops below 1e-15 and that
majorant is added, keeping the reported values upper bounds.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Alphabet, LineBinary, RingAxis
from .exceptions import DomainError, UsageError

TAIL_TOL = 1e-15
MAX_TERMS = 400
R_MAX = 1 / 16
A_MAX = 3.0

MAJORANT_NOTE = (
    "per annulus l: (N-1) N^(l-1) sources at distance >= c r^(n-l-1); "
    "D2 term u/(1-u) from the first-order log bound, "
    "D3 term u^2/(1-u^2) from the second-order bound, u = (a/2) r^l / c"
)


def _separation(a, r, min_half_gap):
    return min_half_gap - a * r / (1 - r)


def _series(a, r, N, c, power):
    """sum_l (N-1) N^(l-1) f(u_l) plus tail, f(u) = u^p / (1 - u^p); arrays allowed."""
    a, r, c = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (a, r, c)))
    if np.any(c <= 0):
        raise DomainError("separation constant is not positive (outside the window)")
    u1 = a * r / (2 * c)
    if np.any(u1 >= 1):
        raise DomainError("first denominator of the series is not positive")
    total = np.zeros(a.shape)
    ratio = N * r**power
    if np.any(ratio >= 1):
        raise DomainError("series ratio N r^p >= 1 does not converge")
    u = u1.copy()
    done = np.zeros(a.shape, dtype=bool)
    for ell in range(1, MAX_TERMS + 1):
        up = u**power
        term = (N - 1) * float(N) ** (ell - 1) * up / (1 - up)
        total = np.where(done, total, total + term)
        tail = term * ratio / (1 - ratio)
        finished = ~done & (tail < TAIL_TOL)
        total = np.where(finished, total + tail, total)
        done |= finished
        if done.all():
            break
        u = u * r
    else:
        total = np.where(done, total, total + tail)
    return total if total.ndim else float(total)


def bound_delta2(a, r, alphabet="line"):
    """Upper bound on sup |D2| over all generations (array-aware in a and r)."""
    alph = Alphabet.parse(alphabet)
    _planar_only(alph)
    c = _separation(np.asarray(a, float), np.asarray(r, float), alph.min_half_gap)
    out = alph.size * _series(a, r, alph.size, c, 1)
    return float(out) if np.ndim(out) == 0 else out


def bound_delta3(a, r, alphabet="line"):
    """Upper bound on sup |D3| over all generations (array-aware in a and r)."""
    alph = Alphabet.parse(alphabet)
    _planar_only(alph)
    c = _separation(np.asarray(a, float), np.asarray(r, float), alph.min_half_gap)
    return _series(a, r, alph.size, c, 2)


def _planar_only(alph):
    if isinstance(alph, RingAxis):
        raise UsageError("analytic D2/D3 majorants are only available for planar alphabets")


def _threshold(a, alph):
    """W / (2N): ln(a)/4 on the line, (N-1) ln(a) / (2N) for N-th roots."""
    N = alph.size
    return (N - 1) * np.log(a) / (2 * N)


def in_window(a, r, alphabet="line"):
    """a in [1, 3], r in (0, 1/16] and, on the line, 1 - ar/(1-r) >= 4/5."""
    alph = Alphabet.parse(alphabet)
    a = np.asarray(a, float)
    r = np.asarray(r, float)
    ok = (a >= 1) & (a <= A_MAX) & (r > 0) & (r <= R_MAX)
    c = _separation(a, r, alph.min_half_gap)
    floor = 0.8 if isinstance(alph, LineBinary) else 0.0
    ok &= c > floor - 1e-15 if floor else c > 0
    return ok


@dataclass
class FeasibilityReport:
    a: float
    r: float
    alphabet: str
    B2: float
    B3: float
    threshold: float
    margin: float
    window_ok: bool
    delta: float
    feasible: bool
    budget_level: float = float("nan")
    budget_safe: bool = False
    empty: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def feasible(a: float, r: float, alphabet="line") -> FeasibilityReport:
    """Evaluate the majorants at (a, r) and compare with the per-step allowance.

    Points outside the window come back with infinite bounds and
    ``feasible`` false instead of raising.
    """
    alph = Alphabet.parse(alphabet)
    _planar_only(alph)
    a, r = float(a), float(r)
    N = alph.size
    window = bool(in_window(a, r, alph))
    try:
        b2 = bound_delta2(a, r, alph)
        b3 = bound_delta3(a, r, alph)
    except DomainError:
        b2 = b3 = math.inf
    thr = float(_threshold(a, alph)) if a >= 1 else -math.inf
    total = b2 + b3
    margin = thr - total
    delta = math.log(N) / -math.log(r) if 0 < r < 1 else math.nan
    level = 2 * thr
    extra = {
        "separation_constant": _separation(a, r, alph.min_half_gap),
        "B2_plus_B3": total,
        "majorant": MAJORANT_NOTE,
    }
    if N == 4 and not isinstance(alph, LineBinary):
        extra["quoted_threshold"] = 3 * math.log(a) / 32
    return FeasibilityReport(
        a=a,
        r=r,
        alphabet=str(alph),
        B2=b2,
        B3=b3,
        threshold=thr,
        margin=margin,
        window_ok=window,
        delta=delta,
        feasible=bool(window and margin >= 0 and thr > 0),
        budget_level=level,
        budget_safe=bool(total <= level),
        extra=extra,
    )


@dataclass
class SearchResult:
    best: FeasibilityReport
    grid_a: np.ndarray
    grid_r: np.ndarray
    margin: np.ndarray

    @property
    def empty(self) -> bool:
        return self.best.empty

    def raster_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "r", "delta", "margin", "feasible"])
        N = Alphabet.parse(self.best.alphabet).size
        for i, a in enumerate(self.grid_a):
            for j, r in enumerate(self.grid_r):
                m = self.margin[i, j]
                w.writerow([repr(float(a)), repr(float(r)), repr(math.log(N) / -math.log(r)),
                            repr(float(m)), int(np.isfinite(m) and m >= 0)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _margin_grid(A, Rg, alph):
    AA, RR = np.meshgrid(A, Rg, indexing="ij")
    ok = in_window(AA, RR, alph)
    out = np.full(AA.shape, -np.inf)
    if ok.any():
        a, r = AA[ok], RR[ok]
        with np.errstate(all="ignore"):
            tot = bound_delta2(a, r, alph) + bound_delta3(a, r, alph)
        m = _threshold(a, alph) - tot
        m[_threshold(a, alph) <= 0] = -np.inf
        out[ok] = m
    return out


def _best_on(A, Rg, margin):
    """Feasible cell with the largest r; ties go to the smallest a, then r."""
    feas = margin >= 0
    if not feas.any():
        return None
    j = np.max(np.nonzero(feas.any(0))[0])
    i = int(np.nonzero(feas[:, j])[0][0])
    return i, int(j)


def search_max_delta(
    alphabet="line",
    resolution: int = 200,
    rounds: int = 3,
    a_range: tuple = (1.0, A_MAX),
    r_range: tuple = (1e-4, R_MAX),
) -> SearchResult:
    """Largest-dimension feasible (a, r) on a log grid with local refinement.

    Each round re-grids the neighbourhood (one coarse step each way) of the
    current optimum at the same resolution.  An empty feasible region gives a
    report flagged ``empty``.
    """
    alph = Alphabet.parse(alphabet)
    _planar_only(alph)
    if resolution < 2 or rounds < 0:
        raise UsageError("resolution must be >= 2 and rounds >= 0")
    lo_a, hi_a = float(a_range[0]), float(a_range[1])
    lo_r, hi_r = float(r_range[0]), float(r_range[1])
    if not (1 <= lo_a <= hi_a and 0 < lo_r <= hi_r):
        raise UsageError("bad search ranges")
    A = np.geomspace(lo_a, hi_a, resolution) if hi_a > lo_a else np.array([lo_a])
    Rg = np.geomspace(lo_r, hi_r, resolution)
    margin = _margin_grid(A, Rg, alph)
    coarse = (A, Rg, margin)
    best = _best_on(A, Rg, margin)
    if best is None:
        rep = feasible(lo_a, lo_r, alph)
        rep.empty = True
        rep.feasible = False
        return SearchResult(rep, *coarse)
    a_best, r_best = A[best[0]], Rg[best[1]]
    for _ in range(rounds):
        i, j = best
        a_lo, a_hi = A[max(i - 1, 0)], A[min(i + 1, len(A) - 1)]
        r_lo, r_hi = Rg[max(j - 1, 0)], Rg[min(j + 1, len(Rg) - 1)]
        A = np.geomspace(a_lo, a_hi, resolution) if a_hi > a_lo else np.array([a_lo])
        Rg = np.geomspace(r_lo, r_hi, resolution)
        m = _margin_grid(A, Rg, alph)
        nb = _best_on(A, Rg, m)
        if nb is None:
            break
        best = nb
        if Rg[nb[1]] >= r_best:
            a_best, r_best = A[nb[0]], Rg[nb[1]]
    rep = feasible(a_best, r_best, alph)
    return SearchResult(rep, *coarse)
