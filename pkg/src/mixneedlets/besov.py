"""Lp norms, needlet Lp scaling, Besov sequence norms and mask leakage."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .harmonics import AlmSet
from .needlet import NeedletBank, NeedletCoeffs, needlet_alm, needlet_analyze
from .sht import SpinMap, make_grid, synthesize

# extra bandlimit added to 2 L_j for sup and L1 evaluation grids
GRID_MARGIN = 8


@dataclass(frozen=True)
class BesovParams:
    p: float
    q: float
    r: float

    def __post_init__(self):
        if not (self.p >= 1):
            raise InvalidParameterError(f"p must be >= 1, got {self.p}")
        if not (self.q > 0):
            raise InvalidParameterError(f"q must be > 0, got {self.q}")
        if not (self.r > 0):
            raise InvalidParameterError(f"r must be > 0, got {self.r}")


@dataclass(frozen=True)
class LevelNormProfile:
    kind: str
    p: float
    values: dict

    @property
    def js(self) -> list[int]:
        return sorted(self.values)

    def as_array(self) -> np.ndarray:
        return np.array([self.values[j] for j in self.js])


def _pnorm(absvals, weights, p):
    if np.isinf(p):
        return float(np.max(absvals, initial=0.0))
    return float(np.sum(weights * absvals ** p) ** (1.0 / p))


def lp_norm(smap: SpinMap, p: float) -> float:
    """Quadrature p-norm of |F| on the map's grid; sup over nodes for p = inf."""
    if not p >= 1:
        raise InvalidParameterError(f"p must be >= 1, got {p}")
    return _pnorm(np.abs(smap.values), smap.grid.weights, p)


def eval_grid_for(L: int):
    return make_grid(2 * L + GRID_MARGIN)


def needlet_map(bank: NeedletBank, kind: str, j: int, k: int, grid=None) -> SpinMap:
    psi = needlet_alm(bank, kind, j, k)
    return synthesize(psi, eval_grid_for(psi.lmax) if grid is None else grid)


def psi_lp(bank: NeedletBank, kind: str, j: int, k: int, p: float) -> float:
    """||psi_jk||_p by quadrature on a grid of bandlimit 2 L_j + margin."""
    return lp_norm(needlet_map(bank, kind, j, k), p)


def mid_latitude_index(bank: NeedletBank, j: int, theta: float = 1.0) -> int:
    """Index of the level-j point on the ring closest to ``theta`` at phi = 0."""
    g = bank.level(j).grid
    ring = int(np.argmin(np.abs(g.thetas - theta)))
    return ring * g.nphi


def localization_statistic(bank: NeedletBank, kind: str, j: int, k: int,
                           tau: float = 3.0) -> float:
    """sup_x |psi_jk(x)| (1 + B^j d(x, xi_jk))^tau / B^j over the evaluation grid."""
    m = needlet_map(bank, kind, j, k)
    th, ph = m.grid.points()
    th0, ph0 = (x[k] for x in bank.level(j).points)
    d = angular_distance(th, ph, th0, ph0)
    Bj = bank.B ** j
    return float(np.max(np.abs(m.values.ravel()) * (1 + Bj * d) ** tau) / Bj)


def level_profile(coeffs: NeedletCoeffs, p: float) -> LevelNormProfile:
    """(sum_k |beta_jk|^p)^(1/p) per level (max for p = inf)."""
    vals = {}
    for j in coeffs.js:
        a = np.abs(coeffs[j])
        vals[j] = float(np.max(a, initial=0.0)) if np.isinf(p) else float(np.sum(a ** p) ** (1 / p))
    return LevelNormProfile(coeffs.kind, p, vals)


def besov_norm(alm: AlmSet, bank: NeedletBank, kind: str, params: BesovParams) -> float:
    """||F||_p + [sum_j B^{qj(r + 2(1/2 - 1/p))} (sum_k |beta_jk|^p)^{q/p}]^{1/q}.

    q = inf takes the supremum over levels.
    """
    if not bank.levels:
        raise InvalidInputError("empty bank")
    p, q, r = params.p, params.q, params.r
    F = synthesize(alm, eval_grid_for(alm.lmax))
    norm_f = lp_norm(F, p)
    prof = level_profile(needlet_analyze(alm, bank, kind), p)
    expo = r + 2 * (0.5 - (0.0 if np.isinf(p) else 1.0 / p))
    terms = np.array([bank.B ** (j * expo) * prof.values[j] for j in prof.js])
    if np.isinf(q):
        seq = float(np.max(terms, initial=0.0))
    else:
        seq = float(np.sum(terms ** q) ** (1 / q))
    return norm_f + seq


@dataclass(frozen=True)
class Mask:
    """Unobserved region: a spherical cap or a colatitude band."""

    kind: str
    params: tuple

    @classmethod
    def cap(cls, theta: float, phi: float, radius: float) -> "Mask":
        if radius < 0:
            raise InvalidParameterError("cap radius must be non-negative")
        return cls("cap", (float(theta), float(phi), float(radius)))

    @classmethod
    def band(cls, theta_lo: float, theta_hi: float) -> "Mask":
        if not 0 <= theta_lo <= theta_hi <= np.pi:
            raise InvalidParameterError("band needs 0 <= theta_lo <= theta_hi <= pi")
        return cls("band", (float(theta_lo), float(theta_hi)))

    @property
    def measure(self) -> float:
        if self.kind == "cap":
            return 2 * np.pi * (1 - np.cos(self.params[2]))
        lo, hi = self.params
        return 2 * np.pi * (np.cos(lo) - np.cos(hi))

    def contains(self, theta, phi) -> np.ndarray:
        theta, phi = np.asarray(theta), np.asarray(phi)
        if self.kind == "cap":
            tc, pc, rad = self.params
            return angular_distance(theta, phi, tc, pc) < rad
        lo, hi = self.params
        return (theta > lo) & (theta < hi)

    def distance(self, theta: float, phi: float) -> float:
        """Geodesic distance from a point to the region (0 inside)."""
        if self.kind == "cap":
            tc, pc, rad = self.params
            return float(max(0.0, angular_distance(theta, phi, tc, pc) - rad))
        lo, hi = self.params
        return float(max(0.0, lo - theta, theta - hi))


def angular_distance(t1, p1, t2, p2):
    c = np.cos(t1) * np.cos(t2) + np.sin(t1) * np.sin(t2) * np.cos(p1 - p2)
    return np.arccos(np.clip(c, -1.0, 1.0))


@dataclass(frozen=True)
class MaskLeakage:
    """Needlet mass inside the mask and the decay envelope for tau = 1..3."""

    leakage: float
    psi_l1: float
    measure: float
    distance: float
    envelopes: dict


def mask_leakage(bank: NeedletBank, kind: str, j: int, k: int, mask: Mask,
                 grid_L: int | None = None) -> MaskLeakage:
    """int_G |psi_jk| by quadrature, with mu(G) / (1 + B^j d)^tau for tau = 1..3."""
    Lj = bank.level(j).Ld
    grid = make_grid(2 * Lj + GRID_MARGIN if grid_L is None else grid_L)
    psi = needlet_map(bank, kind, j, k, grid)
    th, ph = grid.points()
    inside = mask.contains(th, ph).reshape(grid.ntheta, grid.nphi)
    a = np.abs(psi.values) * grid.weights
    th0, ph0 = (x[k] for x in bank.level(j).points)
    d = mask.distance(th0, ph0)
    env = {tau: mask.measure / (1 + bank.B ** j * d) ** tau for tau in (1, 2, 3)}
    return MaskLeakage(float(np.sum(a[inside])), float(np.sum(a)), mask.measure, d, env)


__all__ = [
    "BesovParams", "LevelNormProfile", "Mask", "MaskLeakage", "lp_norm", "psi_lp",
    "level_profile", "besov_norm", "mask_leakage", "needlet_map", "mid_latitude_index",
    "localization_statistic",
    "angular_distance",
]
