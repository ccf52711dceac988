import math

import mpmath
import numpy as np
import pytest
from scipy import integrate
from scipy.special import ellipkm1

from cantorharm.core import GeneratorSpec, expand_level, root_level
from cantorharm.exceptions import DomainError, SingularityError
from cantorharm.kernels import (
    KernelSpec,
    log_kernel,
    ring_average,
    ring_kernel,
    ring_second_derivative_bound,
    sibling_increment,
    sphere_normalizer,
)


def elliptic_ring(t, R):
    """n = 3 ring kernel in closed form: (2/pi) K(m) / sqrt(t^2 + (1+R)^2)."""
    s = t * t + (1 + R) ** 2
    p = (t * t + (1 - R) ** 2) / s  # complementary parameter 1 - m
    return 2 / np.pi * ellipkm1(p) / np.sqrt(s)


def quad_ring(t, R, n):
    k = (n - 2) / 2
    f = lambda phi: (t * t + (R - 1) ** 2 + 4 * R * math.sin(phi / 2) ** 2) ** -k * math.sin(phi) ** (n - 3)
    val, _ = integrate.quad(f, 0, math.pi, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val / sphere_normalizer(n)


class TestLogKernel:
    def test_values(self):
        assert log_kernel(1.0) == 0
        assert log_kernel(math.e) == pytest.approx(1, abs=1e-15)
        d = 2.217 * 0.0623**2 / 2
        assert log_kernel(d) == pytest.approx(float(mpmath.log(mpmath.mpf(d))), rel=1e-15)

    def test_domain(self):
        for d in (0.0, -1.0, np.nan):
            with pytest.raises(DomainError):
                log_kernel(d)


class TestRingKernel:
    @pytest.mark.parametrize("n", [3, 4, 5, 7])
    def test_axis_closed_form(self, n):
        t = np.linspace(0, 3, 31)
        expect = (1 + t * t) ** (-(n - 2) / 2)
        assert np.max(np.abs(ring_kernel(t, 0.0, n) - expect)) <= 1e-10
        assert ring_kernel(0.0, 0.0, n) == pytest.approx(1, abs=1e-14)

    def test_even_in_t(self):
        t = np.linspace(0.01, 2, 17)
        assert np.array_equal(ring_kernel(t, 1.3), ring_kernel(-t, 1.3))

    def test_elliptic_oracle(self):
        assert ring_kernel(0.5, 1.0) == pytest.approx(elliptic_ring(0.5, 1.0), abs=1e-12)
        t = np.geomspace(1e-20, 10, 200)
        for R in (0.0, 0.3, 1.0, 2.5):
            ref = elliptic_ring(t, R)
            assert np.max(np.abs(ring_kernel(t, R) - ref) / np.maximum(1, ref)) <= 1e-8

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(3)
        phi = rng.uniform(0, 2 * np.pi, 10**6)
        t, R = 0.5, 1.0
        d = np.sqrt(t * t + np.abs(R - np.exp(1j * phi)) ** 2)
        mc = (1 / d).mean()
        se = (1 / d).std() / 1e3
        assert abs(ring_kernel(t, R) - mc) <= 5 * se

    @pytest.mark.parametrize("n", [4, 5])
    def test_quadpack_oracle(self, n):
        for t, R in ((0.2, 1.0), (0.01, 1.0), (0.7, 0.4), (1e-3, 1.002)):
            assert ring_kernel(t, R, n) == pytest.approx(quad_ring(t, R, n), rel=1e-9)

    def test_strictly_decreasing_on_grid(self):
        for n in (3, 4, 5):
            e = ring_kernel(0.05 * np.arange(1, 101), 1.0, n)
            assert np.all(np.diff(e) < 0)

    def test_increment_positive_for_doubling(self):
        t = 0.05 * np.arange(1, 101)
        e = ring_kernel(t, 1.0)
        i, j = np.meshgrid(np.arange(100), np.arange(100), indexing="ij")
        mask = 2 * t[i] < t[j]
        assert np.all((e[i] - e[j])[mask] > 0)

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_gradient_bound(self, n):
        # |grad e| * rho is roughly constant approaching the singular circle
        rho = np.geomspace(1e-4, 1e-1, 12)
        t, R = rho * np.sin(0.7), 1 + rho * np.cos(0.7)
        h = rho * 1e-4
        gt = (ring_kernel(t + h, R, n) - ring_kernel(t - h, R, n)) / (2 * h)
        gR = (ring_kernel(t, R + h, n) - ring_kernel(t, R - h, n)) / (2 * h)
        C = np.hypot(gt, gR) * rho
        fit = np.median(C)
        assert np.all(np.abs(C / fit - 1) <= 0.2)

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_second_derivative_small_t(self, n):
        t = np.geomspace(1e-3, 1e-1, 10)
        h = t * 1e-3
        d2 = (ring_kernel(t + h, 1, n) - 2 * ring_kernel(t, 1, n) + ring_kernel(t - h, 1, n)) / h**2
        scaled = t * t * np.abs(d2)
        assert scaled.max() / scaled.min() < 1.05
        # the centroid remainder bound dominates the true curvature
        assert np.all(np.abs(d2) <= ring_second_derivative_bound(t, n) * (1 + 1e-6))

    def test_singularity(self):
        with pytest.raises(SingularityError):
            ring_kernel(0.0, 1.0)
        with pytest.raises(DomainError):
            ring_kernel(0.1, -1.0)
        assert np.isfinite(ring_kernel(1e-25, 1.0))

    def test_error_estimate_returned(self):
        v, err = ring_kernel(np.array([1e-6, 0.1, 1.0]), 1.0, return_error=True)
        assert np.all(err <= 1e-12 * np.maximum(1, v))

    def test_ring_average_power(self):
        # power 0 integrates the normalised measure
        assert ring_average(0.3, 0.8, ndim=5, power=0.0) == pytest.approx(1, abs=1e-13)


class TestSiblingIncrement:
    def test_line_is_sibling_distance(self):
        spec = GeneratorSpec()
        assert sibling_increment(spec, 1.0, 1) == 0.0
        assert sibling_increment(spec, 2.0, 3) == pytest.approx(math.log(2 * 0.0623**2), rel=1e-15)

    def test_roots_product_identity(self):
        spec = GeneratorSpec("roots:4", 0.033, 2.63)
        direct = sum(math.log(abs(0.5 - 0.5 * z)) for z in (1j, -1, -1j))
        assert sibling_increment(spec, 1.0, 1) == pytest.approx(3 * math.log(0.5) + math.log(4), abs=1e-15)
        assert sibling_increment(spec, 1.0, 1) == pytest.approx(direct, abs=1e-14)

    def test_roots_against_placement(self):
        spec = GeneratorSpec("roots:4", 0.033, 2.63)
        k1 = expand_level(root_level(spec), [1.0])
        k2 = expand_level(k1, [2.0] * 4)
        d = np.abs(k2.differences_from(5)[4:8])
        direct = np.log(d[d > 0]).sum()
        assert sibling_increment(spec, 2.0, 2) == pytest.approx(direct, rel=1e-13)

    def test_ring_uses_kernel(self):
        spec = GeneratorSpec("ring:3", 0.0623, 2.5)
        assert sibling_increment(spec, 2.0, 2) == pytest.approx(float(ring_kernel(2 * 0.0623, 1.0)), rel=1e-15)

    def test_domain(self):
        spec = GeneratorSpec()
        for bad in (0.99, 2.3):
            with pytest.raises(DomainError):
                sibling_increment(spec, bad, 2)

    def test_kernel_spec(self):
        assert KernelSpec.for_spec(GeneratorSpec()).kind == "log"
        assert KernelSpec.for_spec(GeneratorSpec("ring:4", 0.05, 2.5)) == KernelSpec("ring", 4)
        with pytest.raises(DomainError):
            KernelSpec("cubic")
