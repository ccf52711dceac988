"""Checks run on constructed levels: Green function, regularity, harmonic measure.

The Green function with pole at infinity is approximated at level m by
G(y) = g~_m(y) - c_m.  Harmonic measure is sampled by walk-on-spheres: the
step radius is the distance to K_m minus the tail radius, which is a
certified lower bound on the distance to the limit set, and a walker that
leaves the disk |z| <= R_out is put back on its boundary according to the
exterior Poisson kernel.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import GeneratorSpec, Level, RingAxis
from .exceptions import DomainError, ResourceLimitError, UsageError
from .potential import PotentialProfile, potential_at, potential_profile, potentials_at

# ---------------------------------------------------------------------------
# Green function
# ---------------------------------------------------------------------------


@dataclass
class GreenEstimate:
    y: complex
    level: int
    value: float
    dist: float
    dist_bracket: tuple
    ratio: float
    err_indication: float

    def to_dict(self) -> dict:
        return {
            "y": [self.y.real, self.y.imag],
            "m": self.level,
            "G": self.value,
            "dist": self.dist,
            "dist_lo": self.dist_bracket[0],
            "dist_hi": self.dist_bracket[1],
            "ratio": self.ratio,
            "err_indication": self.err_indication,
        }


def _nearest(y: complex, level: Level):
    d = np.abs(level.points - y)
    i = int(np.argmin(d))
    return i, float(d[i])


def green_at(y, level: Level, profile: PotentialProfile | None = None, drift_constant: float = 1.0) -> GreenEstimate:
    """G(y) ~ g~_m(y) - c_m at a planar point y off the level.

    ``dist_bracket`` encloses dist(y, K) using the tail radius of level m;
    ``err_indication`` is drift_constant * m * w_m, the size of the next
    corrections to c_m.
    """
    spec = level.spec
    if isinstance(spec.alphabet, RingAxis):
        raise UsageError("green_at needs a planar alphabet")
    profile = profile or (potential_profile(level) if level.size > 1 else None)
    y = complex(y[0], y[1]) if isinstance(y, (tuple, list, np.ndarray)) else complex(y)
    i, d = _nearest(y, level)
    if d == 0:
        raise DomainError("y coincides with a point of the level")
    c = profile.c if profile is not None else 0.0
    g = potential_at(y, level) - c
    m = level.generation
    tail = spec.tail_radius(m)
    delta = spec.delta
    return GreenEstimate(
        y=y,
        level=m,
        value=g,
        dist=d,
        dist_bracket=(max(d - tail, 0.0), d + tail),
        ratio=g / d**delta,
        err_indication=drift_constant * max(m, 1) * level.weight,
    )


@dataclass
class RingEstimate:
    """Per-generation constant C_n = max |g~_n(y) - c_n - w_n ln(rho)| / w_n."""

    generations: list
    constants: np.ndarray
    samples: int

    @property
    def spread(self) -> float:
        """max C_n / min C_n."""
        return float(self.constants.max() / self.constants.min())


def ring_constant(level: Level, profile: PotentialProfile, anchors=8, angles=8, seed=0) -> float:
    """C_n over anchors x_0 and points y with |y - x_0| = r^(n-1)/2.

    Anchors always include the profile argmax and argmin and the points
    with the smallest and largest own spacing; the rest are drawn with
    ``seed``.
    """
    n, w = level.generation, level.weight
    rho = level.spec.r ** (n - 1) / 2
    N = level.spec.size
    chosen = [int(np.argmax(profile.values)), int(np.argmin(profile.values))]
    if n >= 2:
        sp = level.params.coefficients(n - 1)
        chosen += [int(np.argmin(sp)) * N, int(np.argmax(sp)) * N]
    rng = np.random.default_rng(seed)
    pool = np.setdiff1d(np.arange(level.size), chosen)
    extra = max(anchors - len(set(chosen)), 0)
    chosen = list(dict.fromkeys(chosen)) + list(rng.choice(pool, size=min(extra, pool.size), replace=False))
    chosen = chosen[:anchors]
    theta = 2 * np.pi * (np.arange(angles) + 0.5) / angles
    worst = 0.0
    for i in chosen:
        for t in theta:
            g = potential_at(rho * np.exp(1j * t), level, anchor=int(i))
            worst = max(worst, abs(g - profile.c - w * math.log(rho)) / w)
    return worst


def ring_estimate(levels, profiles=None, anchors=8, angles=8, seed=0) -> RingEstimate:
    """ring_constant for each level (e.g. generations 4..10 of one run)."""
    gens, cs = [], []
    for k, lev in enumerate(levels):
        prof = profiles[k] if profiles is not None else potential_profile(lev)
        gens.append(lev.generation)
        cs.append(ring_constant(lev, prof, anchors, angles, seed))
    return RingEstimate(gens, np.array(cs), anchors * angles)


@dataclass
class GreenSweep:
    scales: np.ndarray
    ratio_min: np.ndarray
    ratio_max: np.ndarray
    ratio_median: np.ndarray
    positive: bool
    samples: int

    @property
    def global_ratio(self) -> float:
        return float(self.ratio_max.max() / self.ratio_min.min())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale", "ratio_min", "ratio_max", "ratio_median"])
        for row in zip(self.scales, self.ratio_min, self.ratio_max, self.ratio_median):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def green_ratio_sweep(level: Level, scales, samples: int = 32, seed: int = 0, profile=None) -> GreenSweep:
    """G / dist^delta at corkscrew points y = x_0 + i R for sampled x_0 in K_m.

    The level must resolve the smallest scale: r^(m-2) <= min(scales).
    """
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    spec = level.spec
    if isinstance(spec.alphabet, RingAxis):
        raise UsageError("green sweep needs a planar alphabet")
    if level.size > 1 and spec.r ** max(level.generation - 2, 0) > scales.min():
        raise UsageError(
            f"level {level.generation} does not resolve scale {scales.min():g}"
        )
    profile = profile or (potential_profile(level) if level.size > 1 else None)
    c = profile.c if profile is not None else 0.0
    rng = np.random.default_rng(seed)
    mins, maxs, meds = [], [], []
    positive = True
    pts = level.points
    for R in scales:
        idx = rng.integers(0, level.size, size=samples)
        x0 = pts[idx]
        normal = _outward_normal(spec, x0)
        Y = x0 + R * normal
        G = potentials_at(Y, level) - c
        d = np.array([np.abs(pts - y).min() for y in Y])
        ratio = G / d**spec.delta
        positive &= bool(np.all(G > 0))
        mins.append(ratio.min())
        maxs.append(ratio.max())
        meds.append(np.median(ratio))
    return GreenSweep(scales, np.array(mins), np.array(maxs), np.array(meds), positive, samples)


def _outward_normal(spec, x0):
    if spec.alphabet.planar:
        # off-line variants: step in the direction of the point itself
        u = np.where(np.abs(x0) > 0, x0 / np.where(np.abs(x0) > 0, np.abs(x0), 1), 1.0)
        return u * np.exp(0.25j * np.pi)
    return np.full(x0.shape, 1j)


# ---------------------------------------------------------------------------
# Ahlfors regularity
# ---------------------------------------------------------------------------


@dataclass
class AhlforsReport:
    min_ratio: float
    max_ratio: float
    centers: int
    scales: np.ndarray
    degenerate: bool = False

    @property
    def ratio(self) -> float:
        return self.max_ratio / self.min_ratio if not self.degenerate else math.nan

    def to_dict(self) -> dict:
        return {
            "min": self.min_ratio,
            "max": self.max_ratio,
            "ratio": self.ratio,
            "centers": self.centers,
            "scales": [float(s) for s in self.scales],
            "degenerate": self.degenerate,
        }


def ahlfors_report(level: Level, spec: GeneratorSpec | None = None, samples: int | None = None, seed: int = 0) -> AhlforsReport:
    """mu_m(B(x, rho)) / rho^delta over centers x in K_m and dyadic rho in [r^m, diam].

    With ``samples`` None (or at least the level size) every point is a center.
    """
    spec = spec or level.spec
    if level.size < 2:
        return AhlforsReport(math.nan, math.nan, level.size, np.array([]), degenerate=True)
    diam = level.diameter()
    lo = spec.r ** level.generation
    j0, j1 = math.ceil(-math.log2(diam)), math.floor(-math.log2(lo))
    rhos = 2.0 ** -np.arange(j0, j1 + 1)
    if samples is None or samples >= level.size:
        centers = np.arange(level.size)
    else:
        centers = np.sort(np.random.default_rng(seed).choice(level.size, samples, replace=False))
    lo_r, hi_r = math.inf, 0.0
    for i in centers:
        d = np.sort(np.abs(level.differences_from(int(i))))
        counts = np.searchsorted(d, rhos, side="right")
        ratios = counts * level.weight / rhos**spec.delta
        lo_r = min(lo_r, float(ratios.min()))
        hi_r = max(hi_r, float(ratios.max()))
    return AhlforsReport(lo_r, hi_r, len(centers), rhos)


# ---------------------------------------------------------------------------
# walk on spheres
# ---------------------------------------------------------------------------

STEP_CAP = 10**6
CENSOR_LIMIT = 0.01
BATCH = 4096


def reentry_density(theta, z0: complex, R: float):
    """Exterior Poisson density on |z| = R seen from z0 (|z0| > R)."""
    z0 = complex(z0)
    if abs(z0) <= R:
        raise DomainError("re-entry needs a starting point outside the circle")
    return (abs(z0) ** 2 - R**2) / (2 * np.pi * np.abs(z0 - R * np.exp(1j * np.asarray(theta))) ** 2)


def reentry_cdf(theta, z0: complex, R: float):
    """CDF of the re-entry angle on (phi0 - pi, phi0 + pi], phi0 = arg z0."""
    z0 = complex(z0)
    q = R / abs(z0)
    u = np.asarray(theta) - np.angle(z0)
    u = (u + np.pi) % (2 * np.pi) - np.pi
    return 0.5 + np.arctan((1 + q) / (1 - q) * np.tan(u / 2)) / np.pi


def reentry_ks(theta, z0: complex, R: float) -> float:
    """Kolmogorov-Smirnov distance between sampled angles and the Poisson law."""
    from scipy.stats import kstest

    phi0 = np.angle(complex(z0))
    x = phi0 + (np.asarray(theta) - phi0 + np.pi) % (2 * np.pi) - np.pi
    return float(kstest(x, lambda v: reentry_cdf(v, z0, R)).statistic)


def sample_reentry(z0, R: float, rng: np.random.Generator):
    """Hitting points on |z| = R for planar Brownian motions started at z0 (array)."""
    z0 = np.asarray(z0, dtype=complex)
    q = R / np.abs(z0)
    u = rng.random(z0.shape)
    theta = np.angle(z0) + 2 * np.arctan((1 - q) / (1 + q) * np.tan(np.pi * (u - 0.5)))
    return R * np.exp(1j * theta)


def simulate_reentry(z0: complex, R: float, walks: int, seed: int = 0, far: float = 1e4, tol: float = 1e-3):
    """Angles at which coarse walk-on-spheres walkers from z0 first reach |z| = R.

    Walkers beyond ``far`` * R are restarted uniformly on that circle; this
    is an independent check of ``sample_reentry``.
    """
    rng = np.random.default_rng(seed)
    z = np.full(walks, complex(z0))
    out = np.empty(walks)
    active = np.arange(walks)
    L = far * R
    while active.size:
        zz = z[active]
        far_mask = np.abs(zz) > L
        if far_mask.any():
            zz[far_mask] = L * np.exp(2j * np.pi * rng.random(far_mask.sum()))
        step = np.abs(zz) - R
        zz = zz + step * np.exp(2j * np.pi * rng.random(zz.size))
        hit = (np.abs(zz) - R) < tol * R
        out[active[hit]] = np.angle(zz[hit])
        z[active] = zz
        active = active[~hit]
    return out


@dataclass
class WosResult:
    pole: complex
    eps: float
    walks: int
    depth: int
    counts: np.ndarray
    censored: int
    seed: int
    level_generation: int
    alphabet_size: int
    reentries: int = 0
    mean_steps: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def hits(self) -> int:
        return int(self.counts.sum())

    def counts_at(self, k: int) -> np.ndarray:
        """Counts aggregated to depth k <= depth."""
        if not 0 <= k <= self.depth:
            raise UsageError(f"depth {k} not available (walks attributed at depth {self.depth})")
        return self.counts.reshape(self.alphabet_size**k, -1).sum(1)

    def ratios(self, k: int | None = None):
        """omega(Q) * N^k with normal-approximation 95% intervals."""
        k = self.depth if k is None else k
        c = self.counts_at(k)
        n = max(self.hits, 1)
        p = c / n
        se = np.sqrt(p * (1 - p) / n)
        scale = float(self.alphabet_size) ** k
        return p * scale, (p - 1.96 * se) * scale, (p + 1.96 * se) * scale

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["depth", "cell_index", "count", "ratio", "ci_lo", "ci_hi"])
        ratio, lo, hi = self.ratios()
        for i, cnt in enumerate(self.counts):
            w.writerow([self.depth, i, int(cnt), repr(float(ratio[i])), repr(float(lo[i])), repr(float(hi[i]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        return {
            "pole": [self.pole.real, self.pole.imag],
            "eps": self.eps,
            "walks": self.walks,
            "depth": self.depth,
            "hits": self.hits,
            "censored": self.censored,
            "censored_fraction": self.censored / max(self.walks, 1),
            "reentries": self.reentries,
            "mean_steps": self.mean_steps,
            "seed": self.seed,
            "level": self.level_generation,
        }


def _wos_batch(z0, tree, tail, eps, R_out, leaf_cell, rng, n):
    z = np.full(n, z0, dtype=complex)
    steps = np.zeros(n, dtype=np.int64)
    cell = np.full(n, -1, dtype=np.int64)
    active = np.arange(n)
    reentries = 0
    while active.size:
        zz = z[active]
        out = np.abs(zz) > R_out
        if out.any():
            zz[out] = sample_reentry(zz[out], R_out, rng)
            reentries += int(out.sum())
        d, j = tree.query(np.column_stack([zz.real, zz.imag]))
        rad = d - tail
        done = rad < eps
        cell[active[done]] = leaf_cell[j[done]]
        move = ~done
        zz = zz[move]
        zz = zz + rad[move] * np.exp(2j * np.pi * rng.random(zz.size))
        idx = active[move]
        z[idx] = zz
        steps[idx] += 1
        capped = steps[idx] >= STEP_CAP
        active = idx[~capped]
    return cell, reentries, steps


def wos_sample(
    pole,
    level: Level,
    spec: GeneratorSpec | None = None,
    eps: float | None = None,
    walks: int = 10**5,
    depth: int = 3,
    seed: int = 0,
    workers: int = 1,
) -> WosResult:
    """Walk-on-spheres estimate of harmonic measure of the depth-k cells.

    Walks are grouped in fixed batches, each with its own generator spawned
    from ``seed``, so the counts do not depend on ``workers``.
    """
    spec = spec or level.spec
    if isinstance(spec.alphabet, RingAxis):
        raise UsageError("walk-on-spheres is only implemented for planar alphabets")
    m = level.generation
    if not 0 <= depth <= m:
        raise UsageError(f"depth {depth} exceeds level generation {m}")
    z0 = complex(pole[0], pole[1]) if isinstance(pole, (tuple, list, np.ndarray)) else complex(pole)
    tail = spec.tail_radius(m)
    eps = 10 * spec.r**m if eps is None else float(eps)
    if eps < 2 * spec.r**m:
        raise UsageError(f"eps {eps:g} below twice the level resolution {spec.r**m:g}")
    pts = level.points
    if np.abs(pts - z0).min() - tail < 1:
        raise DomainError("pole must be at distance >= 1 from the set")
    R_out = 2 + level.diameter()
    if abs(z0) >= R_out:
        R_out = abs(z0) + 1
    tree = cKDTree(np.column_stack([pts.real, pts.imag]))
    leaf_cell = level.ancestors(depth)
    nb = -(-walks // BATCH)
    streams = np.random.SeedSequence(seed).spawn(nb)
    sizes = [min(BATCH, walks - b * BATCH) for b in range(nb)]

    def run(b):
        return _wos_batch(z0, tree, tail, eps, R_out, leaf_cell, np.random.default_rng(streams[b]), sizes[b])

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, range(nb)))
    else:
        results = [run(b) for b in range(nb)]
    cells = np.concatenate([r[0] for r in results])
    steps = np.concatenate([r[2] for r in results])
    censored = int((cells < 0).sum())
    counts = np.bincount(cells[cells >= 0], minlength=spec.size**depth)
    res = WosResult(
        pole=z0,
        eps=eps,
        walks=walks,
        depth=depth,
        counts=counts,
        censored=censored,
        seed=seed,
        level_generation=m,
        alphabet_size=spec.size,
        reentries=sum(r[1] for r in results),
        mean_steps=float(steps.mean()),
        extra={"R_out": R_out},
    )
    if censored > CENSOR_LIMIT * walks:
        raise ResourceLimitError(f"{censored} of {walks} walks hit the step cap")
    return res


@dataclass
class MeasureComparison:
    depth: int
    ratio: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    zero_cells: list

    @property
    def band_ratio(self) -> float:
        ok = self.ratio > 0
        return float(self.ratio[ok].max() / self.ratio[ok].min())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["depth", "cell_index", "omega_over_mu", "ci_lo", "ci_hi"])
        for i in range(self.ratio.size):
            w.writerow([self.depth, i, repr(float(self.ratio[i])), repr(float(self.ci_lo[i])), repr(float(self.ci_hi[i]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def measure_comparison(wos: WosResult, depth: int | None = None) -> MeasureComparison:
    """omega(Q) / mu(Q) per depth-k cell; mu(Q) = N^-k for the uniform weights."""
    import warnings

    depth = wos.depth if depth is None else depth
    ratio, lo, hi = wos.ratios(depth)
    zero = [int(i) for i in np.flatnonzero(wos.counts_at(depth) == 0)]
    if zero:
        warnings.warn(f"{len(zero)} cells received no walks and are left out of the band", stacklevel=2)
    return MeasureComparison(depth, ratio, lo, hi, zero)


def summary_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=float)
