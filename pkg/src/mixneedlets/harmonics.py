"""Wigner d-matrices, spin-weighted spherical harmonics and spin operators.

Phase convention::

    Y_{lm,s}(theta, phi) = (-1)^s (-1)^max(m, 0) sqrt((2l+1)/4pi) e^{i m phi} d^l_{m,-s}(theta)

with the small-d matrix in the usual z-y-z (Wigner) convention, so that
d^1_{00} = cos(theta) and d^1_{10} = -sin(theta)/sqrt(2).  The (-1)^s makes the
ladder relations

    edth Y_{lm,s}     =  sqrt((l-s)(l+s+1)) Y_{lm,s+1}
    edthbar Y_{lm,s}  = -sqrt((l+s)(l-s+1)) Y_{lm,s-1}

hold for the differential operators -(sin)^s (d_theta + i/sin d_phi) (sin)^-s
and its conjugate counterpart.  For s = 0 this is the Condon-Shortley harmonic
with the (-1)^m dropped for m > 0, so conj(Y_{lm}) = Y_{l,-m} and the reality
condition becomes the involution a_{lm} = conj(a_{l,-m}).  In general
conj(Y_{lm,s}) = (-1)^s Y_{l,-m,-s}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ChartDomainError, InvalidIndexError

# Mantissas above 2**_RESCALE_BITS are folded into the binary exponent.
_RESCALE_BITS = 300


def eigenvalue(l: int, s: int) -> int:
    """Eigenvalue e_{ls} = (l-|s|)(l+|s|+1) of the spin Laplacian on H_{ls}."""
    if l < abs(s):
        raise InvalidIndexError(f"degree l={l} below |s|={abs(s)}")
    return (l - abs(s)) * (l + abs(s) + 1)


def eigenvalues(lmax: int, s: int) -> np.ndarray:
    """e_{ls} for l = 0..lmax as floats; entries with l < |s| are NaN."""
    l = np.arange(lmax + 1, dtype=float)
    e = (l - abs(s)) * (l + abs(s) + 1)
    e[: min(abs(s), lmax + 1)] = np.nan
    return e


@dataclass(frozen=True)
class AlmSet:
    """Spin-s harmonic coefficients a_{lm,s} for |s| <= l <= lmax.

    Stored densely as ``coeffs[l, m + lmax]``; slots with l < |s| or |m| > l
    are kept at zero and are not part of the table.
    """

    spin: int
    lmax: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.lmax < abs(self.spin):
            raise InvalidIndexError(f"lmax={self.lmax} below |s|={abs(self.spin)}")
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (self.lmax + 1, 2 * self.lmax + 1):
            raise InvalidIndexError(f"coefficient table has shape {c.shape}")
        c[~valid_mask(self.lmax, self.spin)] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, spin: int, lmax: int) -> "AlmSet":
        return cls(spin, lmax, np.zeros((lmax + 1, 2 * lmax + 1), complex))

    @classmethod
    def from_flat(cls, spin: int, lmax: int, values) -> "AlmSet":
        """Inverse of :meth:`flat` (l outer from |s|, m inner from -l to l)."""
        values = np.asarray(values)
        out = np.zeros((lmax + 1, 2 * lmax + 1), complex)
        mask = valid_mask(lmax, spin)
        if values.size != mask.sum():
            raise InvalidIndexError(
                f"expected {mask.sum()} coefficients, got {values.size}")
        out[mask] = values
        return cls(spin, lmax, out)

    @classmethod
    def single(cls, spin: int, lmax: int, l: int, m: int, value=1.0) -> "AlmSet":
        out = np.zeros((lmax + 1, 2 * lmax + 1), complex)
        _check_lm(l, m, spin, lmax)
        out[l, m + lmax] = value
        return cls(spin, lmax, out)

    @classmethod
    def random(cls, spin: int, lmax: int, rng: np.random.Generator,
               drop_null: bool = False) -> "AlmSet":
        """Standard complex Gaussian coefficients; ``drop_null`` zeroes l = |s|."""
        shape = (lmax + 1, 2 * lmax + 1)
        c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
        if drop_null:
            c[abs(spin)] = 0.0
        return cls(spin, lmax, c)

    @property
    def size(self) -> int:
        return int(sum(2 * l + 1 for l in range(abs(self.spin), self.lmax + 1)))

    def flat(self) -> np.ndarray:
        return self.coeffs[valid_mask(self.lmax, self.spin)]

    def __getitem__(self, lm):
        l, m = lm
        _check_lm(l, m, self.spin, self.lmax)
        return self.coeffs[l, m + self.lmax]

    def with_coeffs(self, coeffs) -> "AlmSet":
        return AlmSet(self.spin, self.lmax, coeffs)

    def scale_by_degree(self, factor) -> "AlmSet":
        """Multiply row l by ``factor[l]`` (NaN factors on missing rows are ignored)."""
        f = np.nan_to_num(np.asarray(factor, dtype=complex)[: self.lmax + 1])
        return self.with_coeffs(self.coeffs * f[:, None])

    def resized(self, lmax: int) -> "AlmSet":
        """Truncate or zero-pad to a new lmax."""
        out = np.zeros((lmax + 1, 2 * lmax + 1), complex)
        lm = min(lmax, self.lmax)
        out[: lm + 1, lmax - lm: lmax + lm + 1] = \
            self.coeffs[: lm + 1, self.lmax - lm: self.lmax + lm + 1]
        return AlmSet(self.spin, lmax, out)

    def drop_null(self) -> "AlmSet":
        """Project onto (I-P): remove the l = |s| eigenspace."""
        c = self.coeffs.copy()
        c[abs(self.spin)] = 0.0
        return self.with_coeffs(c)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def _compatible(self, other):
        if not isinstance(other, AlmSet) or (other.spin, other.lmax) != (self.spin, self.lmax):
            raise InvalidIndexError("AlmSets differ in spin or lmax")

    def __add__(self, other):
        self._compatible(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._compatible(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__


def valid_mask(lmax: int, spin: int) -> np.ndarray:
    l = np.arange(lmax + 1)[:, None]
    m = np.arange(-lmax, lmax + 1)[None, :]
    return (np.abs(m) <= l) & (l >= abs(spin))


def _check_lm(l, m, s, lmax=None):
    if l < 0 or abs(m) > l or abs(s) > l or (lmax is not None and l > lmax):
        raise InvalidIndexError(f"invalid harmonic index (l={l}, m={m}, s={s})")


def _pow_me(x, k: int):
    """x**k as (mantissa, exponent) by binary powering; no log-domain rounding."""
    base_m, base_e = np.frexp(x)
    base_e = base_e.astype(np.int64)
    res_m = np.ones_like(x)
    res_e = np.zeros(x.shape, dtype=np.int64)
    while k:
        if k & 1:
            res_m, de = np.frexp(res_m * base_m)
            res_e += base_e + de
        k >>= 1
        if k:
            base_m, de = np.frexp(base_m * base_m)
            base_e = 2 * base_e + de
    return res_m, res_e


def _sqrt_binom(n: int, k: int):
    """sqrt(C(n, k)) as (float mantissa, exponent), exact integer binomial."""
    c = math.comb(n, k)
    shift = max(c.bit_length() - 62, 0)
    shift += shift & 1
    return math.sqrt(float(c >> shift)), shift // 2


def _start_values(j, m, n, ch, sh):
    """d^j_{mn} at j = max(|m|, |n|) as (mantissa, exponent) arrays."""
    if m == j:
        a, p, q, sign = n, j + n, j - n, (-1) ** (j - n)
    elif m == -j:
        a, p, q, sign = n, j - n, j + n, 1
    elif n == j:
        a, p, q, sign = m, j + m, j - m, 1
    else:
        a, p, q, sign = m, j - m, j + m, (-1) ** (j + m)
    bm, be = _sqrt_binom(2 * j, j + a)
    pm, pe = _pow_me(ch, p)
    qm, qe = _pow_me(sh, q)
    mant, de = np.frexp(sign * bm * pm * qm)
    return mant, pe + qe + be + de


def iter_wigner_d(lmax: int, n: int, thetas,
                  extended: bool = True) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(l, d)`` with ``d[m + lmax, i] = d^l_{m n}(thetas[i])`` for l = 0..lmax.

    Three-term recursion in l at fixed (m, n), vectorised over m and theta.
    Values are carried as mantissa * 2**exponent so that starting values far
    below the double range (small theta, large l) do not underflow.  With
    ``extended`` the recursion runs in long double, which keeps unitarity
    within 1e-12 up to l = 256 even next to the poles; results are returned
    as float64 either way.
    """
    thetas = np.asarray(thetas, dtype=float).ravel()
    if np.any(thetas < 0) or np.any(thetas > np.pi):
        raise InvalidIndexError("theta must lie in [0, pi]")
    ms = np.arange(-lmax, lmax + 1)
    nt = thetas.size
    wd = np.longdouble if extended else np.float64
    c = np.cos(thetas.astype(wd))[None, :]
    ch, sh = np.cos(thetas / 2), np.sin(thetas / 2)
    l0 = np.maximum(np.abs(ms), abs(n))
    prev = np.zeros((ms.size, nt), dtype=wd)
    cur = np.zeros((ms.size, nt), dtype=wd)
    expo = np.zeros((ms.size, nt), dtype=np.int64)
    zero = np.zeros((ms.size, nt))
    mf = ms.astype(wd)[:, None]
    at_north, at_south = thetas == 0.0, thetas == np.pi

    for l in range(lmax + 1):
        if l < abs(n):
            yield l, zero
            continue
        new = np.zeros_like(cur)
        rec = (l0 < l)
        if rec.any():
            j = l - 1
            mm = mf[rec]
            denom = np.sqrt((l * l - mm * mm) * (l * l - n * n))
            lead = l * (2 * l - 1) / denom
            mn_term = mm * n / (j * (j + 1)) if j > 0 else 0.0 * mm
            back = (np.sqrt(np.clip((j * j - mm * mm) * (j * j - n * n), 0, None))
                    / (j * (2 * j + 1)) if j > 0 else 0.0 * mm)
            new[rec] = lead * ((c - mn_term) * cur[rec] - back * prev[rec])
        start = np.nonzero(l0 == l)[0]
        for i in start:
            new[i], expo[i] = _start_values(l, int(ms[i]), n, ch, sh)
            cur[i] = 0.0
        prev, cur = cur, new
        big = np.abs(cur) > 2.0 ** _RESCALE_BITS
        if big.any():
            _, shift = np.frexp(np.where(big, cur, 1.0))
            shift = np.where(big, shift, 0)
            cur = np.ldexp(cur, -shift)
            prev = np.ldexp(prev, -shift)
            expo = expo + shift
        out = np.ldexp(cur, expo).astype(np.float64)
        out[l0 > l] = 0.0
        # exact endpoint values: d(0) = delta_{mn}, d(pi) = (-1)^(l-n) delta_{m,-n}
        if at_north.any():
            out[:, at_north] = (ms == n)[:, None]
        if at_south.any():
            out[:, at_south] = ((-1.0) ** (l - n) * (ms == -n))[:, None]
        yield l, out


def wigner_d(l: int, m: int, n: int, theta) -> float | np.ndarray:
    """Small Wigner matrix element d^l_{mn}(theta)."""
    if l < 0 or abs(m) > l or abs(n) > l:
        raise InvalidIndexError(f"invalid Wigner index (l={l}, m={m}, n={n})")
    shape = np.shape(theta)
    out = None
    for ll, d in iter_wigner_d(l, n, theta):
        if ll == l:
            out = d[m + l]
    return float(out[0]) if shape == () else out.reshape(shape)


def phase_sign(lmax: int, s: int = 0) -> np.ndarray:
    """(-1)^s (-1)^max(m, 0) for m = -lmax..lmax."""
    m = np.arange(-lmax, lmax + 1)
    return np.where((m > 0) & (m % 2 == 1), -1.0, 1.0) * (-1.0) ** (s % 2)


def eval_sph(l: int, m: int, s: int, theta, phi):
    """Spin-weighted harmonic Y_{lm,s}(theta, phi) in the identity chart."""
    _check_lm(l, m, s)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta >= np.pi):
        raise ChartDomainError("the identity chart excludes the poles")
    d = wigner_d(l, m, -s, theta)
    sign = phase_sign(l, s)[m + l]
    out = sign * np.sqrt((2 * l + 1) / (4 * np.pi)) * np.exp(1j * m * np.asarray(phi)) * d
    return complex(out) if np.ndim(out) == 0 else out


def iter_sph(lmax: int, s: int, theta, phi) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(l, Y)`` with ``Y[m + l, i] = Y_{lm,s}(theta[i], phi[i])`` for |s| <= l <= lmax."""
    theta = np.asarray(theta, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    if np.any(theta <= 0) or np.any(theta >= np.pi):
        raise ChartDomainError("the identity chart excludes the poles")
    sign = phase_sign(lmax, s)
    ms = np.arange(-lmax, lmax + 1)
    E = np.exp(1j * ms[:, None] * phi[None, :]) * sign[:, None]
    for l, d in iter_wigner_d(lmax, -s, theta):
        if l < abs(s):
            continue
        rows = slice(lmax - l, lmax + l + 1)
        yield l, np.sqrt((2 * l + 1) / (4 * np.pi)) * E[rows] * d[rows]


def spin_shift(alm: AlmSet, direction: str) -> AlmSet:
    """Apply the spin-raising (edth) or spin-lowering (edth-bar) operator.

    raise: a_{lm} -> sqrt((l-s)(l+s+1)) a_{lm} at spin s+1
    lower: a_{lm} -> -sqrt((l+s)(l-s+1)) a_{lm} at spin s-1
    Degrees that do not exist at the new spin are dropped.
    """
    s, lmax = alm.spin, alm.lmax
    l = np.arange(lmax + 1, dtype=float)
    if direction == "raise":
        new_s = s + 1
        factor = np.sqrt(np.clip((l - s) * (l + s + 1), 0, None))
    elif direction == "lower":
        new_s = s - 1
        factor = -np.sqrt(np.clip((l + s) * (l - s + 1), 0, None))
    else:
        raise InvalidIndexError(f"direction must be 'raise' or 'lower', not {direction!r}")
    if lmax < abs(new_s):
        raise InvalidIndexError(f"lmax={lmax} leaves no degrees at spin {new_s}")
    return AlmSet(new_s, lmax, alm.coeffs * factor[:, None])


def laplacian_apply(alm: AlmSet) -> AlmSet:
    """Positive spin Laplacian: multiply each a_{lm,s} by e_{ls}."""
    return alm.scale_by_degree(eigenvalues(alm.lmax, alm.spin))
