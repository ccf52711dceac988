"""Generation-by-generation flattening of the discrete potential.

Going from K_{n-1} to K_n, a point x with parent x^ satisfies the exact
identity

    g_n(x) = g_{n-1}(x^) + w_n (D1 + D2 + D3)

where D1 is the potential of the siblings of x, D2 = N sum_{y != x^}
(e(y - x) - e(y - x^)) over K_{n-1}, and D3 = sum_{y != x^} sum_{z in Ch(y)}
(e(z - x) - e(y - x)).  Only D1 depends on the new spacing a_{n-1}(x^), and
it sweeps an interval of width W as the spacing runs over [1, a].  Choosing
the spacing so that g_{n-1}(x^) + w_n D1 is the same for every parent
removes the inherited oscillation; what is left is w_n (D2 + D3).
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import GeneratorSpec, Level, LineBinary, ParamTree, RingAxis, RootsOfUnity, Word, expand_level
from .exceptions import InfeasibleError, NumericError, ResourceLimitError, UsageError
from .kernels import KernelSpec, SINGULAR_RADIUS, sibling_increment
from .potential import PotentialProfile, hier_potential_profile, potential_profile

BISECTION_MAX_ITER = 200
DEFAULT_MAX_POINTS = 1 << 16


def width(spec: GeneratorSpec, kernel: KernelSpec | None = None) -> float:
    """Width W of the range swept by the sibling increment over [1, a].

    For the ring kernel the width depends on the generation; W is the
    infimum over generations m = 1..max(20, max_generation) of
    e(r^(m-1), 1) - e(a r^(m-1), 1), and for n = 3 also the small-t limit
    ln(a) / pi.
    """
    alph = spec.alphabet
    if isinstance(alph, LineBinary):
        return math.log(spec.a)
    if isinstance(alph, RootsOfUnity):
        return (alph.N - 1) * math.log(spec.a)
    return _ring_width(spec, kernel or KernelSpec.for_spec(spec))


_ring_width_cache: dict = {}


def _ring_width(spec, kernel):
    key = (spec, kernel)
    if key not in _ring_width_cache:
        gaps = []
        for m in range(1, max(20, spec.max_generation) + 1):
            t = spec.r ** (m - 1)
            if t <= 10 * SINGULAR_RADIUS:
                break
            lo = kernel.of_distance(np.array([t, spec.a * t]))
            gaps.append(lo[0] - lo[1])
        if spec.alphabet.ndim == 3:
            gaps.append(math.log(spec.a) / math.pi)
        _ring_width_cache[key] = float(min(gaps))
    return _ring_width_cache[key]


def budget(spec: GeneratorSpec, n: int, kernel: KernelSpec | None = None) -> float:
    """Admissible oscillation of g_n: N^-n W / N (= 2^-n ln(a) / 2 on the line)."""
    N = spec.size
    return float(N) ** (-n) * width(spec, kernel) / N


def delta23_threshold(spec: GeneratorSpec, kernel: KernelSpec | None = None) -> float:
    """Per-step allowance W / (2N) on sup |D2 + D3|."""
    return width(spec, kernel) / (2 * spec.size)


def choose_parameters(
    profile: PotentialProfile,
    spec: GeneratorSpec,
    kernel: KernelSpec | None = None,
    slack: float = 0.0,
    force: bool = False,
) -> np.ndarray:
    """Spacing a_{n-1} for every parent, from the profile of generation n-1.

    Each parent gets the spacing whose sibling increment equals
    base + W - N^n (g_{n-1}(x^) - c_{n-1}), with base the smallest increment
    over [1, a] and c_{n-1} the profile minimum.  ``slack`` shrinks the
    admissible oscillation (used to absorb summation error).  With ``force``
    an over-budget profile is clipped instead of rejected.
    """
    kernel = kernel or KernelSpec.for_spec(spec)
    N = spec.size
    p = profile.generation
    n = p + 1
    W = width(spec, kernel)
    dev = profile.values - profile.c
    allowed = float(N) ** (-n) * W - slack
    if profile.oscillation > allowed * (1 + 1e-12) and not force:
        raise InfeasibleError(
            f"oscillation {profile.oscillation:.6g} of g_{p} exceeds the budget {allowed:.6g}",
            oscillation=profile.oscillation,
            budget=allowed,
            generation=p,
        )
    shift = np.clip(float(N) ** n * dev, 0.0, W)
    if not isinstance(spec.alphabet, RingAxis):
        # D1 = (N-1) ln(a_val) + const, so the solve is explicit
        vals = spec.a * np.exp(-shift / (N - 1))
        return np.clip(vals, 1.0, spec.a)
    return _bisect_ring(spec, kernel, n, shift, W)


def _bisect_ring(spec, kernel, n, shift, W):
    base = sibling_increment(spec, spec.a, n, kernel)
    target = base + W - shift
    lo = np.ones_like(target)
    hi = np.full_like(target, spec.a)
    tol = 1e-14 * np.maximum(1.0, np.abs(target))
    for _ in range(BISECTION_MAX_ITER):
        mid = (lo + hi) / 2
        f = sibling_increment(spec, mid, n, kernel) - target
        # increment is decreasing in the spacing
        lo = np.where(f > 0, mid, lo)
        hi = np.where(f > 0, hi, mid)
        if np.all(np.abs(f) <= tol) or np.all(hi - lo <= 4e-16 * spec.a):
            return np.clip((lo + hi) / 2, 1.0, spec.a)
    raise NumericError("ring spacing bisection did not converge")


@dataclass
class TraceRow:
    n: int
    c_n: float
    oscillation: float
    osc_normalized: float
    budget: float
    a_min: float
    a_max: float
    a_mean: float
    drift: float
    sup_delta23: float | None
    max_err: float
    budget_ok: bool
    wall_time: float
    baseline: float = float("nan")


@dataclass
class CalibrationTrace:
    """One row per generation plus the final profile."""

    spec: GeneratorSpec
    rows: list = field(default_factory=list)
    calibrated: bool = True
    method: str = "naive"
    final_profile: PotentialProfile | None = None

    @property
    def all_within_budget(self) -> bool:
        return all(r.budget_ok for r in self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["n", "c_n", "osc", "osc_normalized", "a_min", "a_max", "sup_delta23", "drift", "budget", "budget_ok"]
        w.writerow(cols)
        for r in self.rows:
            w.writerow([
                r.n, repr(r.c_n), repr(r.oscillation), repr(r.osc_normalized), repr(r.a_min),
                repr(r.a_max), "" if r.sup_delta23 is None else repr(r.sup_delta23),
                repr(r.drift), repr(r.budget), int(r.budget_ok),
            ])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class Construction(NamedTuple):
    params: ParamTree
    level: Level
    trace: CalibrationTrace


def run_construction(
    spec: GeneratorSpec,
    n_max: int | None = None,
    *,
    kernel: KernelSpec | None = None,
    calibrate: bool = True,
    method: str = "naive",
    err_budget: float = 1e-9,
    force: bool = False,
    diagnostics: bool = False,
    max_points: int = DEFAULT_MAX_POINTS,
    progress=None,
) -> Construction:
    """Build K_1 .. K_{n_max}, choosing spacings so each g_n meets its budget.

    With ``calibrate=False`` every coefficient is 1 (the self-similar
    control) and budgets are recorded but not enforced.  With ``force`` a
    violated budget is marked in the trace instead of raising.
    """
    n_max = spec.max_generation if n_max is None else int(n_max)
    if n_max < 1:
        raise UsageError("n_max must be >= 1")
    if spec.size**n_max > max_points:
        raise ResourceLimitError(
            f"{spec.size}^{n_max} points exceed the cap of {max_points}"
        )
    if method not in ("naive", "hier"):
        raise UsageError(f"unknown summation method {method!r}")
    kernel = kernel or KernelSpec.for_spec(spec)
    trace = CalibrationTrace(spec, calibrated=calibrate, method=method)
    level = Level(ParamTree(spec), 1)
    prev_level = None
    a_used = np.ones(1)
    c_prev = 0.0
    for n in range(1, n_max + 1):
        t0 = time.perf_counter()
        if method == "hier" and n >= 2:
            prof = hier_potential_profile(level, kernel, err_budget)
        else:
            prof = potential_profile(level, kernel)
        err = prof.max_error
        bud = budget(spec, n, kernel)
        ok = prof.oscillation <= bud - 2 * err
        sup23 = None
        if diagnostics and prev_level is not None:
            tab = delta_table(prev_level, level, kernel)
            sup23 = float(np.max(np.abs(tab.delta2) + np.abs(tab.delta3)))
        row = TraceRow(
            n=n,
            c_n=prof.c,
            oscillation=prof.oscillation,
            osc_normalized=prof.normalized_oscillation,
            budget=bud,
            a_min=float(a_used.min()),
            a_max=float(a_used.max()),
            a_mean=float(a_used.mean()),
            drift=abs(prof.c - c_prev),
            sup_delta23=sup23,
            max_err=err,
            budget_ok=bool(ok),
            wall_time=0.0,
            baseline=float(sibling_increment(spec, 1.0, n, kernel)),
        )
        trace.rows.append(row)
        if calibrate and not ok and not force:
            row.wall_time = time.perf_counter() - t0
            raise InfeasibleError(
                f"generation {n}: oscillation {prof.oscillation:.6g} exceeds budget "
                f"{bud:.6g} (summation error {err:.3g})",
                oscillation=prof.oscillation,
                budget=bud,
                generation=n,
            )
        if progress is not None:
            progress(row)
        c_prev = prof.c
        if n == n_max:
            row.wall_time = time.perf_counter() - t0
            trace.final_profile = prof
            break
        if calibrate:
            a_used = choose_parameters(prof, spec, kernel, slack=2 * err, force=force)
        else:
            a_used = np.ones(level.size)
        prev_level, level = level, expand_level(level, a_used, spec)
        row.wall_time = time.perf_counter() - t0
    return Construction(level.params, level, trace)


# ---------------------------------------------------------------------------
# decomposition diagnostics
# ---------------------------------------------------------------------------


@dataclass
class DeltaDiagnostics:
    """The three increments at one point, split by annulus index l."""

    word: Word
    generation: int
    delta1: float
    delta2: float
    delta3: float
    residual: float
    delta2_by_annulus: dict = field(default_factory=dict)
    delta3_by_annulus: dict = field(default_factory=dict)


@dataclass
class DeltaTable:
    """Increments for every point of a generation (arrays indexed by cell)."""

    generation: int
    delta1: np.ndarray
    delta2: np.ndarray
    delta3: np.ndarray
    residual: np.ndarray


def _check_pair(prev: Level, cur: Level):
    if cur.generation != prev.generation + 1 or cur.generation < 1:
        raise UsageError("levels must be consecutive generations")
    if cur.spec != prev.spec or cur.params.truncated(prev.generation) != prev.params:
        raise UsageError("levels were not built from the same parameter tree")


def _point_terms(prev: Level, cur: Level, i: int, kfun):
    """Direct sums for point i of ``cur``: D1, D2 and D3 per annulus."""
    N, n = cur.spec.size, cur.generation
    # D1: siblings share the generation n-1 ancestor
    sib = (i // N) * N + np.arange(N)
    sib = sib[sib != i]
    d_cur = cur.differences_from(i)
    d1 = float(kfun(np.abs(d_cur[sib])).sum())

    parent = i // N
    if n == 1:
        return d1, {}, {}
    # y in K_{n-1} other than the parent; m = first disagreement index
    j_prev = prev.prefix_lengths(parent)
    others = np.flatnonzero(np.arange(prev.size) != parent)
    jj = j_prev[others]
    y_minus_x = prev.offsets[jj, others] - cur.offsets[jj, i]
    y_minus_xh = prev.offsets[jj, others] - prev.offsets[jj, parent]
    e_yx = kfun(np.abs(y_minus_x))
    e_yxh = kfun(np.abs(y_minus_xh))
    ell = (n - 1) - jj  # annulus index: m = n - l, prefix length m - 1
    d2 = {}
    for l in range(1, n):
        sel = ell == l
        d2[l] = float(N * (e_yx[sel] - e_yxh[sel]).sum())
    # z in K_n whose parent is not x^; grouped by their parent y
    zmask = (np.arange(cur.size) // N) != parent
    z = np.flatnonzero(zmask)
    e_zx = kfun(np.abs(d_cur[z]))
    per_parent = e_zx.reshape(-1, N).sum(1)  # Ch(y) blocks are contiguous
    ys = z.reshape(-1, N)[:, 0] // N
    pos = np.searchsorted(others, ys)
    contrib = per_parent - N * e_yx[pos]
    d3 = {}
    for l in range(1, n):
        sel = ell[pos] == l
        d3[l] = float(contrib[sel].sum())
    return d1, d2, d3


def delta_diagnostics(
    x,
    levels: tuple,
    kernel: KernelSpec | None = None,
    profiles: tuple | None = None,
) -> DeltaDiagnostics:
    """D1, D2, D3 at one point of generation n and the reconstruction residual.

    ``x`` is a Word or a cell index of the newer level.
    """
    prev, cur = levels
    _check_pair(prev, cur)
    kernel = kernel or KernelSpec.for_spec(cur.spec)
    i = cur.index(x) if isinstance(x, Word) else int(x)
    kfun = _kfun(kernel)
    d1, d2, d3 = _point_terms(prev, cur, i, kfun)
    D2, D3 = sum(d2.values()), sum(d3.values())
    if profiles is None:
        profiles = (_profile_or_zero(prev, kernel), potential_profile(cur, kernel))
    gp, gc = profiles
    resid = gc.values[i] - gp.values[i // cur.spec.size] - cur.weight * (d1 + D2 + D3)
    return DeltaDiagnostics(cur.word(i), cur.generation, d1, D2, D3, float(resid), d2, d3)


def delta_table(prev: Level, cur: Level, kernel: KernelSpec | None = None) -> DeltaTable:
    """delta_diagnostics for every point of ``cur``."""
    _check_pair(prev, cur)
    kernel = kernel or KernelSpec.for_spec(cur.spec)
    kfun = _kfun(kernel)
    gp = _profile_or_zero(prev, kernel)
    gc = potential_profile(cur, kernel)
    M = cur.size
    d1 = np.empty(M)
    d2 = np.empty(M)
    d3 = np.empty(M)
    for i in range(M):
        a, b, c = _point_terms(prev, cur, i, kfun)
        d1[i], d2[i], d3[i] = a, sum(b.values()), sum(c.values())
    parents = np.arange(M) // cur.spec.size
    resid = gc.values - gp.values[parents] - cur.weight * (d1 + d2 + d3)
    return DeltaTable(cur.generation, d1, d2, d3, resid)


def _kfun(kernel):
    if kernel.kind == "log":
        return np.log
    return lambda d: kernel.of_distance(d)


def _profile_or_zero(level, kernel):
    if level.size < 2:
        return PotentialProfile(level.generation, np.zeros(level.size), np.zeros(level.size), level.spec.size)
    return potential_profile(level, kernel)
