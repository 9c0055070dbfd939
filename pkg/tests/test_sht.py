import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixneedlets.errors import (BandlimitError, InconsistentModesError, InvalidInputError,
                                UnsupportedSpinError)
from mixneedlets.harmonics import AlmSet, eval_sph, spin_shift
from mixneedlets.sht import (EMModes, SpinMap, analyze, em_compose, em_decompose,
                             involution_defect, make_grid, scalar_potential, synthesize,
                             transform_method)


def involutive(s, L, rng):
    a = AlmSet.random(s, L, rng)
    return em_decompose(a).e_coeffs


class TestGrid:
    def test_trivial_grid(self):
        g = make_grid(0)
        assert (g.ntheta, g.nphi) == (1, 1)
        assert g.weights[0, 0] == pytest.approx(4 * np.pi, rel=1e-14)

    @pytest.mark.parametrize("L", [1, 7, 16, 64])
    def test_invariants(self, L):
        g = make_grid(L)
        assert (g.ntheta, g.nphi, g.degree_exact) == (L + 1, 2 * L + 1, 2 * L)
        assert np.all(np.diff(g.thetas) > 0)
        assert g.thetas[0] > 0 and g.thetas[-1] < np.pi
        assert np.all(g.weights > 0)
        assert abs(g.weights.sum() - 4 * np.pi) < 1e-12

    def test_negative_bandlimit(self):
        with pytest.raises(BandlimitError):
            make_grid(-1)

    def test_scalar_orthonormality_by_quadrature(self):
        # brute-force Gram matrix of every Y_lm with l <= 16 on the L = 16 grid
        g = make_grid(16)
        th, ph = g.points()
        w = g.weights.ravel()
        Y = np.array([eval_sph(l, m, 0, th, ph) for l in range(17) for m in range(-l, l + 1)])
        gram = (Y * w) @ Y.conj().T
        assert np.max(np.abs(gram - np.eye(len(Y)))) < 1e-12

    def test_spin_harmonic_unit_norm(self):
        g = make_grid(16)
        th, ph = g.points()
        y = eval_sph(5, 3, 2, th, ph)
        assert abs(np.sum(g.weights.ravel() * np.abs(y) ** 2) - 1) < 1e-12


class TestSynthesize:
    def test_zero_and_constant(self):
        g = make_grid(6)
        assert np.all(synthesize(AlmSet.zeros(2, 6), g).values == 0)
        one = synthesize(AlmSet.single(0, 6, 0, 0, math.sqrt(4 * math.pi)), g).values
        assert np.max(np.abs(one - 1)) < 1e-14

    def test_matches_direct_evaluation(self, rng):
        a = AlmSet.random(2, 32, rng)
        g = make_grid(32)
        fast = synthesize(a, g).values
        with transform_method("direct"):
            slow = synthesize(a, g).values
        assert np.max(np.abs(fast - slow)) < 1e-12 * max(1.0, np.max(np.abs(slow)))

    def test_matches_eval_sph_sum(self, rng):
        a = AlmSet.random(-1, 6, rng)
        g = make_grid(8)
        th, ph = g.points()
        ref = sum(a[l, m] * eval_sph(l, m, -1, th, ph) for l in range(1, 7) for m in range(-l, l + 1))
        assert np.max(np.abs(synthesize(a, g).values.ravel() - ref)) < 1e-12

    def test_grid_too_coarse(self, rng):
        with pytest.raises(BandlimitError):
            synthesize(AlmSet.random(0, 10, rng), make_grid(9))

    def test_unknown_method(self):
        with pytest.raises(InvalidInputError):
            with transform_method("slow"):
                pass


class TestAnalyze:
    @pytest.mark.parametrize("s", [0, 1, -1, 2, -2])
    def test_round_trip(self, s, rng):
        a = AlmSet.random(s, 32, rng)
        b = analyze(synthesize(a, make_grid(32)), s, 32)
        assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-10

    def test_direct_path_agrees(self, rng):
        a = AlmSet.random(3, 12, rng)
        m = synthesize(a, make_grid(12))
        with transform_method("direct"):
            b = analyze(m)
        assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-12

    def test_constant_map(self):
        g = make_grid(8)
        a = analyze(SpinMap(0, g, np.ones((g.ntheta, g.nphi))), 0, 8)
        ref = np.zeros_like(a.coeffs)
        ref[0, 8] = math.sqrt(4 * math.pi)
        assert np.max(np.abs(a.coeffs - ref)) < 1e-13

    def test_insufficient_degree(self, rng):
        m = synthesize(AlmSet.random(0, 8, rng), make_grid(8))
        with pytest.raises(BandlimitError):
            analyze(m, 0, 9)
        with pytest.raises(BandlimitError):
            analyze(m, 3, 2)

    def test_bad_map_shape(self):
        with pytest.raises(InvalidInputError):
            SpinMap(0, make_grid(3), np.zeros((3, 3)))
        with pytest.raises(InvalidInputError):
            SpinMap(0, make_grid(1), np.full((2, 3), np.nan))

    @pytest.mark.parametrize("s", [0, 1, -1, 2, -2, 3, -3])
    def test_parseval(self, s, rng):
        a = AlmSet.random(s, 20, rng)
        m = synthesize(a, make_grid(20))
        energy = m.integrate(lambda v: np.abs(v) ** 2).real
        assert abs(energy - a.norm() ** 2) < 1e-10 * a.norm() ** 2

    def test_product_example(self):
        g = make_grid(16)
        th, ph = g.points()
        prod = eval_sph(4, 1, 1, th, ph) * eval_sph(5, -3, 1, th, ph)
        a = analyze(SpinMap(2, g, prod.reshape(g.ntheta, g.nphi)), 2, 16)
        assert np.max(np.abs(a.coeffs[12:])) < 1e-8
        assert np.max(np.abs(a.coeffs[:10])) > 1e-3

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_product_property(self, data):
        k = data.draw(st.integers(0, 8))
        l = data.draw(st.integers(0, 8))
        r = data.draw(st.integers(-min(2, k), min(2, k)))
        s = data.draw(st.integers(-min(2, l), min(2, l)))
        mu = data.draw(st.integers(-k, k))
        m = data.draw(st.integers(-l, l))
        g = make_grid(24)
        th, ph = g.points()
        prod = eval_sph(k, mu, r, th, ph) * eval_sph(l, m, s, th, ph)
        a = analyze(SpinMap(r + s, g, prod.reshape(g.ntheta, g.nphi)), r + s, 24)
        total = np.sum(np.abs(a.coeffs) ** 2)
        assert np.sum(np.abs(a.coeffs[k + l + abs(r + s) + 1:]) ** 2) < 1e-8 * total


class TestEM:
    def test_involutive_input_has_no_m(self, rng):
        e = involutive(2, 10, rng)
        modes = em_decompose(e)
        assert np.max(np.abs(modes.m_coeffs.coeffs)) < 1e-15
        assert np.max(np.abs(modes.e_coeffs.coeffs - e.coeffs)) < 1e-15

    def test_imaginary_involutive_has_no_e(self, rng):
        e = involutive(2, 10, rng)
        modes = em_decompose(e * 1j)
        assert np.max(np.abs(modes.e_coeffs.coeffs)) < 1e-15

    @pytest.mark.parametrize("s", [0, 1, 2, -2])
    def test_round_trip_and_involution(self, s, rng):
        a = AlmSet.random(s, 12, rng)
        modes = em_decompose(a)
        assert involution_defect(modes.e_coeffs) < 1e-12
        assert involution_defect(modes.m_coeffs) < 1e-12
        assert np.max(np.abs(em_compose(modes).coeffs - a.coeffs)) < 1e-15

    def test_compose_from_single_modes(self, rng):
        e = involutive(2, 8, rng)
        z = AlmSet.zeros(2, 8)
        assert involution_defect(em_compose(EMModes(2, e, z))) < 1e-15
        im = em_compose(EMModes(2, z, e))
        assert np.array_equal(im.coeffs, 1j * e.coeffs)

    def test_compose_rejects_non_involutive(self, rng):
        a = AlmSet.random(2, 6, rng)
        with pytest.raises(InconsistentModesError):
            em_compose(EMModes(2, a, AlmSet.zeros(2, 6)))
        with pytest.raises(InconsistentModesError):
            em_compose(EMModes(2, AlmSet.zeros(2, 6), AlmSet.zeros(2, 7)))

    def test_real_scalar_field(self, rng):
        # with conj(Y_lm) = Y_{l,-m} an involutive scalar table is a real map
        e = involutive(0, 24, rng)
        v = synthesize(e, make_grid(24)).values
        assert np.max(np.abs(v.imag)) < 1e-10 * np.max(np.abs(v))

    def test_non_involutive_scalar_is_complex(self, rng):
        v = synthesize(AlmSet.random(0, 8, rng), make_grid(8)).values
        assert np.max(np.abs(v.imag)) > 1e-3


class TestScalarPotential:
    def test_spin_zero_identity(self, rng):
        a = AlmSet.random(0, 10, rng)
        assert np.array_equal(scalar_potential(a).coeffs, a.coeffs)

    def test_single_entry(self):
        g = scalar_potential(AlmSet.single(2, 6, 2, -1))
        assert g.spin == 0
        assert g[2, -1] == pytest.approx(1 / math.sqrt(24), rel=1e-14)
        assert np.count_nonzero(g.coeffs) == 1

    @pytest.mark.parametrize("s", [1, 2, 3])
    def test_raise_round_trip(self, s, rng):
        a = AlmSet.random(s, 16, rng)
        g = scalar_potential(a)
        for _ in range(s):
            g = spin_shift(g, "raise")
        assert g.spin == s
        err = np.linalg.norm(g.coeffs - a.coeffs) / np.linalg.norm(a.coeffs)
        assert err < 1e-10

    def test_negative_spin(self, rng):
        with pytest.raises(UnsupportedSpinError):
            scalar_potential(AlmSet.random(-2, 5, rng))
