"""Isotropic scalar + spin Gaussian fields and needlet-domain estimators.

Random draws come from Philox generators keyed by
``SeedSequence(seed, spawn_key=(replicate, l))`` so every degree of every
replicate is an independent, order-free substream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import stats
from scipy.special import eval_legendre

from .errors import (InvalidInputError, InvalidParameterError,
                     InvalidSpectraError, TruncationError)
from .harmonics import AlmSet
from .needlet import (NeedletBank, NeedletCoeffs, NeedletFilter, eval_needlet,
                      filter_vector, level_bandlimit, needlet_analyze, needlet_synthesize)
from .sht import EMModes, analyze_points, em_compose, synthesize_points

CHANNELS = ("T", "E", "M", "TE", "TM")
_PSD_RTOL = 1e-12


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for an integer key path under ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class PowerSpectra:
    """Angular spectra C_l for l = 0..lmax; cross-spectra are real."""

    lmax: int
    C_T: np.ndarray
    C_E: np.ndarray
    C_M: np.ndarray
    C_TE: np.ndarray = None
    C_TM: np.ndarray = None

    def __post_init__(self):
        n = self.lmax + 1
        for name in ("C_T", "C_E", "C_M", "C_TE", "C_TM"):
            v = getattr(self, name)
            v = np.zeros(n) if v is None else np.array(v, dtype=float)
            if v.shape != (n,):
                raise InvalidSpectraError(f"{name} must have lmax+1 = {n} entries, got {v.shape}")
            bad = np.flatnonzero(~np.isfinite(v))
            if bad.size:
                raise InvalidSpectraError(f"{name} is not finite at l={bad[0]}", l=int(bad[0]))
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        for name in ("C_T", "C_E", "C_M"):
            bad = np.flatnonzero(getattr(self, name) < 0)
            if bad.size:
                raise InvalidSpectraError(f"{name} is negative at l={bad[0]}", l=int(bad[0]))
        for cross, a in (("C_TE", self.C_E), ("C_TM", self.C_M)):
            c = getattr(self, cross)
            bad = np.flatnonzero(c ** 2 > self.C_T * a * (1 + _PSD_RTOL) + 1e-300)
            if bad.size:
                raise InvalidSpectraError(
                    f"{cross}^2 exceeds the product of auto-spectra at l={bad[0]}", l=int(bad[0]))

    @classmethod
    def flat(cls, lmax, T=1.0, E=1.0, M=1.0, TE=0.0, TM=0.0) -> "PowerSpectra":
        f = lambda v: np.full(lmax + 1, float(v))
        return cls(lmax, f(T), f(E), f(M), f(TE), f(TM))

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNELS:
            raise InvalidInputError(f"unknown spectrum channel {name!r}")
        return getattr(self, "C_" + name)

    def covariance(self, l: int) -> np.ndarray:
        """3x3 covariance of (a^T, a^E, a^M) at degree l."""
        return np.array([[self.C_T[l], self.C_TE[l], self.C_TM[l]],
                         [self.C_TE[l], self.C_E[l], 0.0],
                         [self.C_TM[l], 0.0, self.C_M[l]]])

    def check_joint(self):
        """Raise unless every 3x3 covariance is positive semidefinite."""
        for l in range(self.lmax + 1):
            w = np.linalg.eigvalsh(self.covariance(l))
            scale = max(1.0, float(np.max(np.abs(w))))
            if w[0] < -1e-12 * scale:
                raise InvalidSpectraError(
                    f"joint T/E/M covariance is not positive semidefinite at l={l}", l=l)


@dataclass(frozen=True)
class RegularSpectrumModel:
    """C_l^A = g_A(l) l^(-alpha_A) with cross-spectra C^TA = rho_TA sqrt(C^T C^A).

    l = 0 uses the l = 1 value so the spectrum stays finite.
    """

    alpha_T: float = 2.5
    alpha_E: float = 2.5
    alpha_M: float = 2.5
    g: Callable[[np.ndarray], np.ndarray] = field(default=lambda l: np.ones_like(l, dtype=float))
    rho_TE: float = 0.5
    rho_TM: float = 0.0
    g_floor: float = 1e-3

    def __post_init__(self):
        for name in ("alpha_T", "alpha_E", "alpha_M"):
            if not getattr(self, name) > 2:
                raise InvalidParameterError(f"{name} must exceed 2")
        if abs(self.rho_TE) > 1 or abs(self.rho_TM) > 1:
            raise InvalidParameterError("correlation coefficients must lie in [-1, 1]")

    def spectra(self, lmax: int) -> PowerSpectra:
        l = np.arange(lmax + 1, dtype=float)
        lp = np.maximum(l, 1.0)
        gl = np.asarray(self.g(lp), dtype=float)
        if np.any(np.abs(gl) < self.g_floor):
            raise InvalidParameterError("|g(l)| falls below its floor on the requested range")
        C = {a: gl * lp ** (-getattr(self, "alpha_" + a)) for a in "TEM"}
        return PowerSpectra(lmax, C["T"], C["E"], C["M"],
                            self.rho_TE * np.sqrt(C["T"] * C["E"]),
                            self.rho_TM * np.sqrt(C["T"] * C["M"]))


def _psd_factor(cov):
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.maximum(w, 0.0))


def simulate_fields(spectra: PowerSpectra, s: int, seed: int, rep: int = 0,
                    lmax: int | None = None) -> tuple[AlmSet, EMModes]:
    """Draw (a^T, a^E, a^M) jointly per degree.

    m > 0 entries are complex with E|a|^2 = C_l, m = 0 entries are real with
    variance C_l, and m < 0 entries follow from a_{l,-m} = conj(a_{lm}).
    E and M rows below |s| are empty.
    """
    spectra.check_joint()
    lmax = spectra.lmax if lmax is None else lmax
    if lmax > spectra.lmax:
        raise TruncationError(f"simulation lmax {lmax} exceeds spectra lmax {spectra.lmax}")
    n = 2 * lmax + 1
    out = np.zeros((3, lmax + 1, n), complex)
    for l in range(lmax + 1):
        cov = spectra.covariance(l)
        if l < abs(s):
            cov[1:, :] = 0.0
            cov[:, 1:] = 0.0
        A = _psd_factor(cov)
        z = substream(seed, rep, l).standard_normal((2, l + 1, 3))
        a0 = A @ z[0, 0]
        ap = (z[0, 1:] + 1j * z[1, 1:]) @ A.T / np.sqrt(2)  # rows m = 1..l
        out[:, l, lmax] = a0
        out[:, l, lmax + 1:lmax + l + 1] = ap.T
        out[:, l, lmax - l:lmax] = np.conj(ap.T[:, ::-1])
    T = AlmSet(0, lmax, out[0])
    modes = EMModes(s, AlmSet(s, lmax, out[1]), AlmSet(s, lmax, out[2]))
    return T, modes


@dataclass(frozen=True)
class GammaEstimate:
    j: int
    mode: str
    value: float
    analytic_mean: float = float("nan")
    analytic_var: float = float("nan")


def _check_mode(mode, allowed=("E", "M")):
    if mode not in allowed:
        raise InvalidInputError(f"mode must be one of {allowed}, got {mode!r}")


def gamma_hat(coeffs_T: NeedletCoeffs, coeffs: NeedletCoeffs, j: int, mode: str,
              moments: tuple[float, float] | None = None) -> GammaEstimate:
    """Re sum_k beta_{jk;A} beta_{jk;T} for A = E (real parts) or M (imaginary parts)."""
    _check_mode(mode)
    if coeffs_T.kind != "mixed" or coeffs.kind != "mixed":
        raise InvalidInputError("cross estimators use mixed coefficients")
    if j not in coeffs_T.betas or j not in coeffs.betas:
        raise InvalidInputError(f"level {j} missing from one of the coefficient sets")
    bT, bS = coeffs_T[j], coeffs[j]
    if bT.shape != bS.shape:
        raise InvalidInputError("coefficient sets come from different level grids")
    bA = bS.real if mode == "E" else bS.imag
    value = float(np.real(np.sum(bA * bT)))
    mean, var = moments if moments is not None else (float("nan"), float("nan"))
    return GammaEstimate(j, mode, value, mean, var)


def _level_window(spectra_lmax, filt, j, s, power):
    """b^power on the level support, truncation-checked against spectra.lmax."""
    Lj = level_bandlimit(j, s, filt)
    w = filter_vector(filt, s, j, max(Lj, spectra_lmax), power)
    if np.any(w[spectra_lmax + 1:] > 0):
        raise TruncationError(
            f"level {j} reaches degree {Lj} beyond spectra lmax {spectra_lmax}")
    return w[:spectra_lmax + 1]


def gamma_moments(spectra: PowerSpectra, filt: NeedletFilter, j: int, s: int,
                  mode: str) -> tuple[float, float]:
    """Closed-form mean and variance of the cross estimator at level j.

    With exact cubature the estimator equals sum_l b^2 sum_m a^A_lm conj(a^T_lm),
    so E = sum_l b^2 (2l+1) C^TA and Var = sum_l b^4 (2l+1) (C^T C^A + (C^TA)^2).
    """
    _check_mode(mode)
    b2 = _level_window(spectra.lmax, filt, j, s, 2)
    l = np.arange(spectra.lmax + 1)
    CA, CX = spectra.channel(mode), spectra.channel("T" + mode)
    mean = float(np.sum(b2 * (2 * l + 1) * CX))
    var = float(np.sum(b2 ** 2 * (2 * l + 1) * (spectra.C_T * CA + CX ** 2)))
    return mean, var


def level_correlation(spectra: PowerSpectra, filt: NeedletFilter, j: int, s: int,
                      mode: str, d) -> np.ndarray:
    """Correlation of two level-j coefficients at angular distance d."""
    _check_mode(mode, ("E", "M", "T"))
    b2 = _level_window(spectra.lmax, filt, j, s, 2)
    l = np.arange(spectra.lmax + 1)
    w = b2 * spectra.channel(mode) * (2 * l + 1)
    d = np.asarray(d, dtype=float)
    P = eval_legendre(l[:, None], np.cos(d.ravel())[None, :])
    tot = np.sum(w)
    corr = (w @ P) / tot if tot > 0 else np.zeros(d.size)
    return corr.reshape(d.shape)


def beta_covariance(spectra: PowerSpectra, bank: NeedletBank, j: int, k1: int, k2: int,
                    mode: str) -> tuple[float, float]:
    """Exact covariance and correlation of beta_{jk1;mode} and beta_{jk2;mode}."""
    _check_mode(mode, ("E", "M", "T"))
    lv = bank.level(j)
    th, ph = lv.points
    for k in (k1, k2):
        if not 0 <= k < lv.npoints:
            raise InvalidInputError(f"point index {k} outside level {j}")
    b2 = _level_window(spectra.lmax, bank.filter, j, bank.spin, 2)
    l = np.arange(spectra.lmax + 1)
    w = b2 * spectra.channel(mode) * (2 * l + 1) / (4 * np.pi)
    cosd = (np.cos(th[k1]) * np.cos(th[k2])
            + np.sin(th[k1]) * np.sin(th[k2]) * np.cos(ph[k1] - ph[k2]))
    cosd = float(np.clip(cosd, -1.0, 1.0))
    if k1 == k2:
        cosd = 1.0
    lam1, lam2 = lv.weights[k1], lv.weights[k2]
    kern = float(np.sum(w * eval_legendre(l, cosd)))
    var0 = float(np.sum(w))
    cov = np.sqrt(lam1 * lam2) * kern
    corr = kern / var0 if var0 > 0 else 0.0
    return float(cov), float(corr)


def _cross_pair(spectra, bank, j, s, seed, rep):
    T, modes = simulate_fields(spectra, s, seed, rep)
    lmax = min(spectra.lmax, bank.level(j).Ld)
    cT = needlet_analyze(T.resized(lmax), bank, "mixed", levels=[j])
    cS = needlet_analyze(em_compose(modes).resized(lmax), bank, "mixed", levels=[j])
    return cT, cS


def gamma_samples(spectra: PowerSpectra, bank: NeedletBank, j: int, mode: str,
                  n_reps: int, seed: int) -> np.ndarray:
    """Raw estimator values over independent replicates."""
    out = np.empty(n_reps)
    for r in range(n_reps):
        cT, cS = _cross_pair(spectra, bank, j, bank.spin, seed, r)
        out[r] = gamma_hat(cT, cS, j, mode).value
    return out


@dataclass(frozen=True)
class CLTResult:
    samples: np.ndarray
    skewness: float
    excess_kurtosis: float
    raw: np.ndarray
    mean: float
    var: float


def clt_experiment(spectra: PowerSpectra, bank: NeedletBank, j: int, mode: str,
                   n_reps: int, seed: int) -> CLTResult:
    """Standardize replicate estimates by the closed-form moments."""
    if n_reps < 100:
        raise InvalidParameterError("n_reps must be at least 100")
    mean, var = gamma_moments(spectra, bank.filter, j, bank.spin, mode)
    if not var > 0:
        raise InvalidInputError("estimator variance is zero; nothing to standardize")
    raw = gamma_samples(spectra, bank, j, mode, n_reps, seed)
    z = (raw - mean) / np.sqrt(var)
    return CLTResult(z, float(stats.skew(z)), float(stats.kurtosis(z)), raw, mean, var)


@dataclass(frozen=True)
class Observations:
    """Scattered samples (theta, phi, value) with optional cubature weights."""

    thetas: np.ndarray
    phis: np.ndarray
    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        th = np.asarray(self.thetas, dtype=float).ravel()
        ph = np.asarray(self.phis, dtype=float).ravel()
        v = np.asarray(self.values, dtype=complex).ravel()
        if th.size == 0:
            raise InvalidInputError("no observations")
        if not th.size == ph.size == v.size:
            raise InvalidInputError("observation arrays differ in length")
        if np.any(th <= 0) or np.any(th >= np.pi):
            raise InvalidInputError("observation colatitudes must lie inside (0, pi)")
        w = np.full(th.size, 4 * np.pi / th.size) if self.weights is None else \
            np.asarray(self.weights, dtype=float).ravel()
        if w.shape != th.shape:
            raise InvalidInputError("weights differ in length from observations")
        for name, a in (("thetas", th), ("phis", ph), ("values", v), ("weights", w)):
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return self.thetas.size

    def with_values(self, values) -> "Observations":
        return Observations(self.thetas, self.phis, values, self.weights)


def empirical_alm(obs: Observations, s: int, lmax: int) -> AlmSet:
    """sum_i w_i v_i conj(Y_{lm,s}(X_i))."""
    return analyze_points(obs.values, obs.weights, obs.thetas, obs.phis, s, lmax)


def empirical_beta(obs: Observations, bank: NeedletBank, j: int, k: int,
                   kind: str = "mixed") -> complex:
    """sum_i w_i v_i conj(psi_jk(X_i)), evaluating the needlet at every sample."""
    psi = eval_needlet(bank, kind, j, k, obs.thetas, obs.phis)
    return complex(np.sum(obs.weights * obs.values * np.conj(psi)))


def empirical_coeffs(obs: Observations, bank: NeedletBank, kind: str = "mixed",
                     lmax: int | None = None) -> NeedletCoeffs:
    """All empirical coefficients at once, through the empirical harmonic table.

    Equal to ``empirical_beta`` for every (j, k) because psi_jk is a finite
    harmonic sum.
    """
    lmax = bank.levels[-1].Ld if lmax is None else lmax
    return needlet_analyze(empirical_alm(obs, bank.spin, lmax), bank, kind)


def hard_threshold(coeffs: NeedletCoeffs, level) -> NeedletCoeffs:
    """Keep beta where |beta| > level; ``level`` is a scalar or a per-level mapping."""
    get = (lambda j: level[j]) if isinstance(level, Mapping) else (lambda j: level)
    return NeedletCoeffs(coeffs.kind, coeffs.spin, coeffs.lmax,
                         {j: np.where(np.abs(b) > get(j), b, 0.0) for j, b in coeffs.betas.items()},
                         coeffs.field_spin)


def shrink_denoise(obs: Observations, bank: NeedletBank, c: float, t_n,
                   kind: str = "mixed", lmax: int | None = None) -> AlmSet:
    """Hard-threshold empirical coefficients at c * t_n and resynthesize.

    ``t_n`` may be a scalar or a mapping from level to threshold level.
    """
    if not c > 0:
        raise InvalidParameterError("threshold scale c must be positive")
    tn = dict(t_n) if isinstance(t_n, Mapping) else t_n
    if (min(tn.values()) if isinstance(tn, dict) else tn) < 0:
        raise InvalidParameterError("threshold level t_n must be non-negative")
    coeffs = empirical_coeffs(obs, bank, kind, lmax)
    level = {j: c * v for j, v in tn.items()} if isinstance(tn, dict) else c * tn
    return needlet_synthesize(hard_threshold(coeffs, level), bank)


def spin_white_noise(n: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Complex noise with E|e|^2 = sigma^2."""
    return sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


def field_values(alm: AlmSet, obs: Observations) -> np.ndarray:
    return synthesize_points(alm, obs.thetas, obs.phis)


__all__ = [
    "PowerSpectra", "RegularSpectrumModel", "GammaEstimate", "CLTResult", "Observations",
    "simulate_fields", "gamma_hat", "gamma_moments", "level_correlation", "beta_covariance",
    "gamma_samples", "clt_experiment", "empirical_alm", "empirical_beta", "empirical_coeffs",
    "hard_threshold", "shrink_denoise", "spin_white_noise", "substream", "field_values",
]
