"""scikit-learn style wrapper around the construction.

``fit`` builds the calibrated levels; ``transform`` and ``predict`` evaluate
the Green function approximation g~_m(y) - c_m at query points.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .calibrate import run_construction
from .core import GeneratorSpec, Level, RingAxis
from .feasibility import feasible
from .kernels import KernelSpec
from .potential import potentials_at
from .verify import ahlfors_report, wos_sample


class CantorEquilibriumSet(BaseEstimator, TransformerMixin):
    """Cantor set whose discrete equilibrium potential is flattened generation by generation.

    Parameters
    ----------
    alphabet : str
        ``line``, ``roots:N`` or ``ring:n``.
    a, r : float
        Spacing ceiling and contraction ratio.
    n_generations : int
        Depth of the construction.
    calibrate : bool
        If False the self-similar set (every spacing 1) is built instead.
    method : {"naive", "hier"}
        Summation used for the potential profiles.
    err_budget : float
        Per-point error budget of the hierarchical summation.
    force : bool
        Keep going when a generation misses its oscillation budget.
    """

    def __init__(
        self,
        alphabet="line",
        a=2.217,
        r=0.0623,
        n_generations=12,
        calibrate=True,
        method="naive",
        err_budget=1e-9,
        force=False,
    ):
        self.alphabet = alphabet
        self.a = a
        self.r = r
        self.n_generations = n_generations
        self.calibrate = calibrate
        self.method = method
        self.err_budget = err_budget
        self.force = force

    def _spec(self):
        return GeneratorSpec(self.alphabet, self.r, self.a, max(int(self.n_generations), 1))

    def fit(self, X=None, y=None):
        """Run the construction; X and y are ignored."""
        spec = self._spec()
        params, level, trace = run_construction(
            spec,
            self.n_generations,
            calibrate=self.calibrate,
            method=self.method,
            err_budget=self.err_budget,
            force=self.force,
        )
        self.spec_ = spec
        self.params_ = params
        self.level_ = level
        self.trace_ = trace
        self.profile_ = trace.final_profile
        self.c_ = self.profile_.c
        self.kernel_ = KernelSpec.for_spec(spec)
        return self

    def _check_points(self, X):
        X = check_array(X, dtype=np.float64, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns, got {X.shape[1]}")
        return X

    def predict(self, X):
        """G(y) for each row y = (x, y) (or (t, R) on a ring cylinder)."""
        check_is_fitted(self, "level_")
        X = self._check_points(X)
        if isinstance(self.spec_.alphabet, RingAxis):
            return potentials_at(X, self.level_, self.kernel_) - self.c_
        return potentials_at(X[:, 0] + 1j * X[:, 1], self.level_) - self.c_

    def transform(self, X):
        return self.predict(X)[:, None]

    def level(self, n):
        """The fitted level K_n for n <= n_generations."""
        check_is_fitted(self, "level_")
        return Level(self.params_, n)

    def feasibility(self):
        return feasible(self.a, self.r, self.alphabet)

    def harmonic_measure(self, pole=(0.0, 3.0), walks=10**4, depth=3, level=None, eps=None, seed=0):
        """Walk-on-spheres counts for the depth-k cells from ``pole``."""
        check_is_fitted(self, "level_")
        lev = self.level_ if level is None else self.level(level)
        return wos_sample(pole, lev, self.spec_, eps=eps, walks=walks, depth=depth, seed=seed)

    def ahlfors(self, level=None, samples=None, seed=0):
        check_is_fitted(self, "level_")
        lev = self.level_ if level is None else self.level(level)
        return ahlfors_report(lev, self.spec_, samples, seed)
