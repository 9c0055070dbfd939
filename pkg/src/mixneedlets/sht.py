"""Spin-weighted spherical harmonic transforms on Gauss-Legendre grids.

The grid for bandlimit L has L+1 Gauss-Legendre colatitudes and 2L+1
equispaced azimuths, which integrates every product of two harmonics of
joint degree <= 2L exactly.  Synthesis and analysis run ring by ring: an FFT
over azimuth and a Wigner-d contraction over colatitude.  A direct
point-by-point summation path is kept as an oracle (``method="direct"``).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import (BandlimitError, InconsistentModesError, InvalidInputError,
                     UnsupportedSpinError)
from .harmonics import AlmSet, iter_wigner_d, phase_sign, valid_mask

_METHOD = ["fft"]


@contextlib.contextmanager
def transform_method(method: str):
    """Temporarily switch the default transform path ("fft" or "direct")."""
    if method not in ("fft", "direct"):
        raise InvalidInputError(f"unknown transform method {method!r}")
    _METHOD.append(method)
    try:
        yield
    finally:
        _METHOD.pop()


def _resolve(method):
    return _METHOD[-1] if method is None else method


@dataclass(frozen=True)
class SphericalGrid:
    """Gauss-Legendre x equiangular grid; points are ordered ring-major."""

    bandlimit: int
    thetas: np.ndarray
    phis: np.ndarray
    ring_weights: np.ndarray = field(repr=False)

    @property
    def ntheta(self) -> int:
        return self.thetas.size

    @property
    def nphi(self) -> int:
        return self.phis.size

    @property
    def degree_exact(self) -> int:
        return 2 * self.bandlimit

    @property
    def npoints(self) -> int:
        return self.ntheta * self.nphi

    @property
    def weights(self) -> np.ndarray:
        """Cubature weight of every point, shape (ntheta, nphi)."""
        return np.repeat(self.ring_weights[:, None], self.nphi, axis=1)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (theta, phi) of every point in ring-major order."""
        th, ph = np.meshgrid(self.thetas, self.phis, indexing="ij")
        return th.ravel(), ph.ravel()


def make_grid(L: int) -> SphericalGrid:
    """Cubature grid exact for spherical polynomials up to degree 2L."""
    if L < 0:
        raise BandlimitError("bandlimit must be non-negative")
    x, w = np.polynomial.legendre.leggauss(L + 1)
    order = np.argsort(-x)  # increasing theta
    thetas = np.arccos(x[order])
    nphi = 2 * L + 1
    phis = 2 * np.pi * np.arange(nphi) / nphi
    ring_weights = w[order] * 2 * np.pi / nphi
    for a in (thetas, phis, ring_weights):
        a.setflags(write=False)
    return SphericalGrid(L, thetas, phis, ring_weights)


@dataclass(frozen=True)
class SpinMap:
    """Samples of a spin-s function in the identity chart on a grid."""

    spin: int
    grid: SphericalGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.ntheta, self.grid.nphi):
            raise InvalidInputError(
                f"values of shape {v.shape} do not match the grid "
                f"({self.grid.ntheta}, {self.grid.nphi})")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("map contains non-finite values")
        object.__setattr__(self, "values", v)

    def integrate(self, f=None) -> complex:
        v = self.values if f is None else f(self.values)
        return complex(np.sum(self.grid.weights * v))


def _norms(lmax):
    return np.sqrt((2 * np.arange(lmax + 1) + 1) / (4 * np.pi))


def synthesize(alm: AlmSet, grid: SphericalGrid, method: str | None = None) -> SpinMap:
    """Evaluate sum_{lm} a_{lm,s} Y_{lm,s} on every grid point."""
    if alm.lmax > grid.bandlimit:
        raise BandlimitError(
            f"grid bandlimit {grid.bandlimit} is below alm lmax {alm.lmax}")
    if _resolve(method) == "direct":
        th, ph = grid.points()
        vals = synthesize_points(alm, th, ph)
        return SpinMap(alm.spin, grid, vals.reshape(grid.ntheta, grid.nphi))
    L, s = alm.lmax, alm.spin
    norms = _norms(L)
    G = np.zeros((2 * L + 1, grid.ntheta), complex)
    for l, d in iter_wigner_d(L, -s, grid.thetas):
        if l < abs(s):
            continue
        G += (alm.coeffs[l] * norms[l])[:, None] * d
    G *= phase_sign(L, s)[:, None]
    H = np.zeros((grid.ntheta, grid.nphi), complex)
    m = np.arange(-L, L + 1)
    H[:, m % grid.nphi] = G.T
    values = np.fft.ifft(H, axis=1) * grid.nphi
    return SpinMap(s, grid, values)


def analyze(smap: SpinMap, s: int | None = None, L: int | None = None,
            method: str | None = None) -> AlmSet:
    """Project a sampled spin map onto Y_{lm,s} by grid cubature."""
    grid = smap.grid
    s = smap.spin if s is None else s
    L = grid.bandlimit if L is None else L
    if L < abs(s):
        raise BandlimitError(f"analysis bandlimit {L} below |s|={abs(s)}")
    if 2 * L > grid.degree_exact:
        raise BandlimitError(
            f"grid integrates degree {grid.degree_exact} exactly; analysis to "
            f"L={L} needs {2 * L}")
    if _resolve(method) == "direct":
        th, ph = grid.points()
        return analyze_points(smap.values.ravel(), grid.weights.ravel(), th, ph, s, L)
    m = np.arange(-L, L + 1)
    Fm = np.fft.fft(smap.values, axis=1)[:, m % grid.nphi] * (2 * np.pi / grid.nphi)
    wF = (Fm * (grid.ring_weights * grid.nphi / (2 * np.pi))[:, None]).T
    norms = _norms(L)
    out = np.zeros((L + 1, 2 * L + 1), complex)
    for l, d in iter_wigner_d(L, -s, grid.thetas):
        if l < abs(s):
            continue
        out[l] = norms[l] * np.sum(d * wF, axis=1)
    out *= phase_sign(L, s)[None, :]
    return AlmSet(s, L, out)


def _phase_matrix(lmax, phis, sign):
    m = np.arange(-lmax, lmax + 1)[:, None]
    return np.exp(sign * 1j * m * np.asarray(phis)[None, :])


def _rings(thetas):
    """Unique colatitudes and the ring index of every point."""
    thetas = np.asarray(thetas, dtype=float).ravel()
    return np.unique(thetas, return_inverse=True)


def synthesize_points(alm: AlmSet, thetas, phis) -> np.ndarray:
    """Direct summation of the harmonic series at scattered points.

    Wigner-d values are computed once per distinct colatitude.
    """
    uth, inv = _rings(thetas)
    L, s = alm.lmax, alm.spin
    norms = _norms(L)
    G = np.zeros((2 * L + 1, uth.size), complex)
    for l, d in iter_wigner_d(L, -s, uth):
        if l < abs(s):
            continue
        G += (norms[l] * alm.coeffs[l])[:, None] * d
    E = _phase_matrix(L, np.asarray(phis, dtype=float).ravel(), +1)
    E *= phase_sign(L, s)[:, None]
    return np.sum(G[:, inv] * E, axis=0)


def analyze_points(values, weights, thetas, phis, s: int, L: int) -> AlmSet:
    """sum_i w_i v_i conj(Y_{lm,s}(x_i)) for scattered points x_i."""
    uth, inv = _rings(thetas)
    wv = np.asarray(weights).ravel() * np.asarray(values).ravel()
    Ew = _phase_matrix(L, np.asarray(phis, dtype=float).ravel(), -1) * wv[None, :]
    S = np.zeros((2 * L + 1, uth.size), complex)
    for m in range(2 * L + 1):
        S[m] = np.bincount(inv, Ew[m].real, uth.size) + 1j * np.bincount(inv, Ew[m].imag, uth.size)
    S *= phase_sign(L, s)[:, None]
    norms = _norms(L)
    out = np.zeros((L + 1, 2 * L + 1), complex)
    for l, d in iter_wigner_d(L, -s, uth):
        if l < abs(s):
            continue
        out[l] = norms[l] * np.sum(d * S, axis=1)
    return AlmSet(s, L, out)


@dataclass(frozen=True)
class EMModes:
    """Involutive E and M coefficient tables with a_{lm,s} = a_E + i a_M."""

    spin: int
    e_coeffs: AlmSet
    m_coeffs: AlmSet

    @property
    def lmax(self) -> int:
        return self.e_coeffs.lmax


def _mirror(c):
    """conj(a_{l,-m}) laid out at (l, m)."""
    return np.conj(c[:, ::-1])


def em_decompose(alm: AlmSet) -> EMModes:
    c = alm.coeffs
    e = (c + _mirror(c)) / 2
    m = -0.5j * (c - _mirror(c))
    return EMModes(alm.spin, alm.with_coeffs(e), alm.with_coeffs(m))


def involution_defect(alm: AlmSet) -> float:
    """max |a_{lm} - conj(a_{l,-m})|."""
    return float(np.max(np.abs(alm.coeffs - _mirror(alm.coeffs)), initial=0.0))


def em_compose(modes: EMModes, tol: float = 1e-8) -> AlmSet:
    e, m = modes.e_coeffs, modes.m_coeffs
    if (e.spin, e.lmax) != (m.spin, m.lmax):
        raise InconsistentModesError("E and M tables differ in spin or lmax")
    for name, t in (("E", e), ("M", m)):
        scale = max(1.0, float(np.max(np.abs(t.coeffs), initial=0.0)))
        if involution_defect(t) > tol * scale:
            raise InconsistentModesError(f"{name} coefficients are not involutive")
    return e.with_coeffs(e.coeffs + 1j * m.coeffs)


def scalar_potential(alm: AlmSet) -> AlmSet:
    """Spin-0 coefficients of g with F = edth^s g: sqrt((l-s)!/(l+s)!) a_{lm,s}."""
    s = alm.spin
    if s < 0:
        raise UnsupportedSpinError("the potential g is defined for s >= 0")
    l = np.arange(alm.lmax + 1)
    factor = np.zeros(alm.lmax + 1)
    ok = l >= s
    factor[ok] = np.exp(0.5 * (gammaln(l[ok] - s + 1) - gammaln(l[ok] + s + 1)))
    return AlmSet(0, alm.lmax, alm.coeffs * factor[:, None])


def random_alm(s: int, lmax: int, rng: np.random.Generator, drop_null=False) -> AlmSet:
    return AlmSet.random(s, lmax, rng, drop_null=drop_null)


def rel_error(a: AlmSet, b: AlmSet) -> float:
    """||a - b|| / ||b|| over the coefficient table."""
    nb = b.norm()
    return (a - b).norm() / nb if nb > 0 else (a - b).norm()


__all__ = [
    "SphericalGrid", "SpinMap", "EMModes", "make_grid", "synthesize", "analyze",
    "synthesize_points", "analyze_points", "em_decompose", "em_compose",
    "scalar_potential", "transform_method", "involution_defect", "valid_mask",
]
