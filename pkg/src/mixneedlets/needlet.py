"""Needlet filters, cubature banks, spin and mixed needlet transforms.

A bank at dilation B for spin s holds, for each level j, the bandlimit
L_j = max{l >= |s| : e_{ls} <= B^{2(j+1)}} and the exact cubature grid of
that bandlimit.  Coefficients are filtered syntheses sampled on the level
grid and scaled by sqrt(lambda_jk):

    spin:   beta_jk = sqrt(lambda_jk) sum_l b(sqrt(e_ls)/B^j) sum_m a_{lm,s} Y_{lm,s}(xi_jk)
    mixed:  beta_jk = sqrt(lambda_jk) sum_l b(sqrt(e_ls)/B^j) sum_m a_{lm,s} Y_{lm}(xi_jk)

The l = |s| eigenspace has e_{ls} = 0, so every filter vanishes there and it
is never analysed nor reconstructed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .errors import (BandlimitError, ChartDomainError, InvalidInputError,
                     InvalidParameterError)
from .harmonics import AlmSet, eigenvalues
from .sht import (SphericalGrid, SpinMap, analyze, analyze_points, make_grid,
                  synthesize, synthesize_points)

Kind = Literal["spin", "mixed"]
KINDS = ("spin", "mixed")

_N_QUAD = 160


def _bump(t):
    return np.exp(-1.0 / (1.0 - t * t))


class NeedletFilter:
    """Smooth plateau phi and needlet window b for dilation B.

    phi is 1 on [0, 1/B], 0 on [1, inf) and on [1/B, 1] equals the
    normalized antiderivative of the bump exp(-1/(1-t^2)).  The window is
    b(xi) = sqrt(phi(xi/B) - phi(xi)), so sum_j b^2(xi/B^j) telescopes to 1.

    Parameters
    ----------
    B : float
        Dilation, B > 1.
    eval_tol : float
        Accuracy contract for phi; the quadrature order is fixed so that the
        antiderivative is resolved to about machine precision.
    """

    def __init__(self, B: float = 2.0, eval_tol: float = 1e-12):
        if not np.isfinite(B) or B <= 1:
            raise InvalidParameterError(f"dilation B must exceed 1, got {B}")
        if not (0 < eval_tol <= 1e-6):
            raise InvalidParameterError(f"eval_tol must lie in (0, 1e-6], got {eval_tol}")
        self.B = float(B)
        self.eval_tol = float(eval_tol)
        x, w = np.polynomial.legendre.leggauss(_N_QUAD)
        self._x, self._w = x, w
        self._total = float(np.sum(w * _bump(x)))

    def __repr__(self):
        return f"NeedletFilter(B={self.B}, eval_tol={self.eval_tol})"

    def _antiderivative(self, u):
        """int_{-1}^{u} bump / int_{-1}^{1} bump, for u in [-1, 1].

        The bump is even, so the integral is always taken over the shorter
        side and complemented; this keeps the result within [0, 1].
        """
        v = -np.abs(u)
        half = (v + 1.0) / 2.0
        t = -1.0 + half[:, None] * (self._x[None, :] + 1.0)
        low = half * np.sum(self._w * _bump(t), axis=1) / self._total
        return np.where(u > 0, 1.0 - low, low)

    def phi(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.where(xi <= 1.0 / self.B, 1.0, 0.0)
        mid = (xi > 1.0 / self.B) & (xi < 1.0)
        if np.any(mid):
            inv = 1.0 / self.B
            u = 1.0 - 2.0 * (xi[mid] - inv) / (1.0 - inv)
            # phi decreases in xi: integrate from the far end of the bump
            out[mid] = self._antiderivative(np.clip(u, -1.0, 1.0))
        return out if out.ndim else float(out)

    def b2(self, xi):
        """b^2, clamped at zero against rounding."""
        xi = np.asarray(xi, dtype=float)
        return np.maximum(self.phi(xi / self.B) - self.phi(xi), 0.0)

    def b(self, xi):
        return np.sqrt(self.b2(xi))

    def partition(self, xi, jlo: int | None = None, jhi: int | None = None):
        """sum_j b^2(xi/B^j) over enough levels to cover every xi given."""
        xi = np.asarray(xi, dtype=float)
        if jlo is None or jhi is None:
            lg = np.log(xi[xi > 0]) / np.log(self.B)
            jlo = int(np.floor(lg.min())) - 2 if lg.size else 0
            jhi = int(np.ceil(lg.max())) + 2 if lg.size else 0
        total = np.zeros_like(xi)
        for j in range(jlo, jhi + 1):
            total += self.b2(xi / self.B ** j)
        return total


def build_filter(B: float = 2.0, eval_tol: float = 1e-12) -> NeedletFilter:
    return NeedletFilter(B, eval_tol)


def filter_vector(filt: NeedletFilter, s: int, j: int, lmax: int,
                  power: int = 1, which: str = "b") -> np.ndarray:
    """Multiplier per degree l = 0..lmax; zero for l <= |s|.

    ``which="b"`` gives b(sqrt(e_ls)/B^j)^power; ``which="phi"`` gives
    phi(sqrt(e_ls)/B^j).
    """
    e = eigenvalues(lmax, s)
    out = np.zeros(lmax + 1)
    ok = np.arange(lmax + 1) > abs(s)
    xi = np.sqrt(e[ok]) / filt.B ** j
    if which == "phi":
        out[ok] = filt.phi(xi)
    elif power == 2:
        out[ok] = filt.b2(xi)
    else:
        out[ok] = filt.b(xi) ** power
    return out


def _max_l_below(s: int, bound: float) -> int:
    """max{l >= |s| : e_{ls} <= bound} by integer search."""
    a = abs(s)
    # e = (l-a)(l+a+1) = l^2 + l - a(a+1)
    l = int(np.floor((-1 + np.sqrt(1 + 4 * (bound + a * (a + 1)))) / 2)) + 1
    while l > a and (l - a) * (l + a + 1) > bound:
        l -= 1
    return max(l, a)


def level_bandlimit(j: int, s: int, filt: NeedletFilter) -> int:
    """Largest l >= |s| with e_{ls} <= B^{2(j+1)}."""
    return _max_l_below(s, filt.B ** (2 * (j + 1)))


def min_level(s: int, filt: NeedletFilter) -> int:
    """Smallest j whose window reaches a degree above |s|: B^{j+1} > sqrt(e_{|s|+1,s})."""
    a = abs(s)
    e1 = (a + 1 - a) * (a + 1 + a + 1)
    j = int(np.floor(np.log(e1) / (2 * np.log(filt.B)))) - 3
    while filt.B ** (2 * (j + 1)) <= e1:
        j += 1
    return j


def max_level_for(lmax: int, s: int, filt: NeedletFilter) -> int:
    """Smallest j_max whose partition covers every l in (|s|, lmax]."""
    a = abs(s)
    if lmax <= a:
        raise BandlimitError(f"lmax {lmax} leaves nothing above l = |s| = {a}")
    e = (lmax - a) * (lmax + a + 1)
    j = min_level(s, filt)
    while filt.B ** (2 * j) < e:
        j += 1
    return j


@dataclass(frozen=True)
class NeedletLevel:
    j: int
    Ld: int
    grid: SphericalGrid = field(repr=False)

    @cached_property
    def points(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.points()

    @cached_property
    def weights(self) -> np.ndarray:
        return self.grid.weights.ravel()

    @property
    def npoints(self) -> int:
        return self.grid.npoints


@dataclass(frozen=True)
class NeedletBank:
    spin: int
    filter: NeedletFilter
    levels: tuple[NeedletLevel, ...]

    @property
    def B(self) -> float:
        return self.filter.B

    @property
    def j_min(self) -> int:
        return self.levels[0].j

    @property
    def j_max(self) -> int:
        return self.levels[-1].j

    @property
    def js(self) -> list[int]:
        return [lv.j for lv in self.levels]

    def level(self, j: int) -> NeedletLevel:
        i = j - self.j_min
        if not 0 <= i < len(self.levels):
            raise InvalidInputError(f"level {j} outside bank range [{self.j_min}, {self.j_max}]")
        return self.levels[i]

    def covers(self, lmax: int) -> bool:
        """True if the bank's partition of unity is complete up to lmax."""
        a = abs(self.spin)
        if lmax <= a:
            return True
        return self.B ** (2 * self.j_max) >= (lmax - a) * (lmax + a + 1)

    def window(self, j: int, lmax: int, power: int = 1) -> np.ndarray:
        return filter_vector(self.filter, self.spin, j, lmax, power)


def build_bank(filt: NeedletFilter, s: int, j_max: int, j_min: int | None = None) -> NeedletBank:
    """Levels j_min..j_max, each with grid make_grid(L_j)."""
    jm = min_level(s, filt)
    j_min = jm if j_min is None else max(j_min, jm)
    if j_max < j_min:
        raise InvalidParameterError(f"j_max={j_max} is below j_min={j_min}")
    levels = []
    for j in range(j_min, j_max + 1):
        Lj = level_bandlimit(j, s, filt)
        levels.append(NeedletLevel(j, Lj, make_grid(Lj)))
    return NeedletBank(s, filt, tuple(levels))


def bank_for(lmax: int, s: int = 2, B: float = 2.0) -> NeedletBank:
    """Smallest bank whose partition of unity covers degrees up to lmax."""
    filt = build_filter(B)
    return build_bank(filt, s, max_level_for(lmax, s, filt))


@dataclass(frozen=True)
class NeedletCoeffs:
    """Per-level coefficient vectors, indexed like the level grid points.

    ``field_spin`` is the spin of the analysed table; it differs from
    ``spin`` only for a scalar field analysed with a spin-s mixed bank.
    """

    kind: str
    spin: int
    lmax: int
    betas: dict
    field_spin: int | None = None

    @property
    def js(self) -> list[int]:
        return sorted(self.betas)

    def __getitem__(self, j: int) -> np.ndarray:
        return self.betas[j]

    @property
    def beta_E(self) -> dict:
        self._require_mixed()
        return {j: b.real for j, b in self.betas.items()}

    @property
    def beta_M(self) -> dict:
        self._require_mixed()
        return {j: b.imag for j, b in self.betas.items()}

    def _require_mixed(self):
        if self.kind != "mixed":
            raise InvalidInputError("E/M views exist for mixed coefficients only")

    def energy(self) -> float:
        return float(sum(np.sum(np.abs(b) ** 2) for b in self.betas.values()))

    def map(self, f) -> "NeedletCoeffs":
        return NeedletCoeffs(self.kind, self.spin, self.lmax,
                             {j: f(b) for j, b in self.betas.items()}, self.field_spin)


def _check_kind(kind):
    if kind not in KINDS:
        raise InvalidInputError(f"kind must be 'spin' or 'mixed', got {kind!r}")


def needlet_analyze(alm: AlmSet, bank: NeedletBank, kind: Kind = "mixed",
                    levels=None) -> NeedletCoeffs:
    """Needlet coefficients of every (or the selected) bank level.

    A spin-0 table is accepted with kind="mixed" on a spin-s bank: it is then
    filtered with b(sqrt(e_ls)/B^j), the spin-s window, which is the scalar
    transform used for cross-estimators with spin fields.
    """
    _check_kind(kind)
    scalar_cross = kind == "mixed" and alm.spin == 0 and bank.spin != 0
    if alm.spin != bank.spin and not scalar_cross:
        raise InvalidInputError(f"alm spin {alm.spin} does not match bank spin {bank.spin}")
    if alm.lmax > bank.levels[-1].Ld:
        raise InvalidInputError(
            f"alm lmax {alm.lmax} exceeds the largest level bandlimit {bank.levels[-1].Ld}")
    eval_spin = 0 if kind == "mixed" else alm.spin
    js = bank.js if levels is None else list(levels)
    betas = {}
    for j in js:
        lv = bank.level(j)
        L = min(lv.Ld, alm.lmax)
        w = bank.window(j, L)
        f = np.zeros((L + 1, 2 * L + 1), complex)
        f[:, :] = alm.resized(L).coeffs * w[:, None]
        vals = synthesize(AlmSet(eval_spin, L, f), lv.grid).values.ravel()
        betas[j] = np.sqrt(lv.weights) * vals
    return NeedletCoeffs(kind, bank.spin, alm.lmax, betas, alm.spin)


def needlet_synthesize(coeffs: NeedletCoeffs, bank: NeedletBank,
                       lmax: int | None = None) -> AlmSet:
    """sum_jk beta_jk psi_jk as a harmonic coefficient table."""
    _check_kind(coeffs.kind)
    if coeffs.spin != bank.spin:
        raise InvalidInputError("coefficients were not produced by this bank's spin")
    lmax = coeffs.lmax if lmax is None else lmax
    field_spin = bank.spin if coeffs.field_spin is None else coeffs.field_spin
    eval_spin = 0 if coeffs.kind == "mixed" else field_spin
    out = np.zeros((lmax + 1, 2 * lmax + 1), complex)
    for j in coeffs.js:
        lv = bank.level(j)
        beta = np.asarray(coeffs[j])
        if beta.shape != (lv.npoints,):
            raise InvalidInputError(
                f"level {j} holds {beta.size} coefficients, bank expects {lv.npoints}")
        L = min(lv.Ld, lmax)
        vals = (beta / np.sqrt(lv.weights)).reshape(lv.grid.ntheta, lv.grid.nphi)
        a = analyze(SpinMap(eval_spin, lv.grid, vals), s=eval_spin, L=L)
        out[:L + 1, lmax - L:lmax + L + 1] += a.coeffs * bank.window(j, L)[:, None]
    return AlmSet(field_spin, lmax, out)


def _center_conj_harmonics(bank, kind, j, k, lmax):
    lv = bank.level(j)
    if not 0 <= k < lv.npoints:
        raise InvalidInputError(f"point index {k} outside level {j} (size {lv.npoints})")
    th, ph = lv.points
    spin = 0 if kind == "mixed" else bank.spin
    return analyze_points([1.0], [1.0], th[k:k + 1], ph[k:k + 1], spin, lmax), lv.weights[k]


def needlet_alm(bank: NeedletBank, kind: Kind, j: int, k: int) -> AlmSet:
    """Spin-s harmonic coefficients of psi_jk (its centre factor conjugated)."""
    _check_kind(kind)
    L = bank.level(j).Ld
    yc, lam = _center_conj_harmonics(bank, kind, j, k, L)
    c = np.sqrt(lam) * yc.coeffs * bank.window(j, L)[:, None]
    return AlmSet(bank.spin, L, c)


def eval_needlet(bank: NeedletBank, kind: Kind, j: int, k: int, thetas, phis) -> np.ndarray:
    """Pointwise values of psi_jk in the identity chart."""
    thetas = np.asarray(thetas, dtype=float)
    if np.any(thetas <= 0) or np.any(thetas >= np.pi):
        raise ChartDomainError("needlets are evaluated away from the poles")
    return synthesize_points(needlet_alm(bank, kind, j, k), thetas, phis)


def qj_apply(alm: AlmSet, j: int, filt: NeedletFilter) -> AlmSet:
    """Multiply a_{lm,s} by b^2(sqrt(e_ls)/B^j)."""
    return alm.scale_by_degree(filter_vector(filt, alm.spin, j, alm.lmax, 2))


def pn_apply(alm: AlmSet, N: int, filt: NeedletFilter) -> AlmSet:
    """Multiply a_{lm,s} by phi(sqrt(e_ls)/B^(N+1)); the l = |s| row is zeroed."""
    return alm.scale_by_degree(filter_vector(filt, alm.spin, N + 1, alm.lmax, which="phi"))


def projection_complement(alm: AlmSet) -> AlmSet:
    """(I - P): remove the l = |s| eigenspace."""
    return alm.drop_null()


__all__ = [
    "NeedletFilter", "NeedletLevel", "NeedletBank", "NeedletCoeffs",
    "build_filter", "filter_vector", "level_bandlimit", "min_level", "max_level_for",
    "build_bank", "bank_for", "needlet_analyze", "needlet_synthesize", "needlet_alm",
    "eval_needlet", "qj_apply", "pn_apply", "projection_complement",
]
