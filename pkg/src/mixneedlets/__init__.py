"""Spin and mixed needlets on the sphere.

Spin-weighted harmonic transforms, needlet tight frames in spin and mixed
form, Besov sequence norms, and needlet-domain estimators for isotropic
scalar + spin Gaussian fields.
"""
from .errors import (BandlimitError, ChartDomainError, FormatError, InconsistentModesError,
                     InvalidIndexError, InvalidInputError, InvalidParameterError,
                     InvalidSpectraError, NeedletError, TruncationError, UnsupportedSpinError)
from .harmonics import (AlmSet, eigenvalue, eval_sph, laplacian_apply, spin_shift,
                        wigner_d)
from .sht import (EMModes, SphericalGrid, SpinMap, analyze, em_compose, em_decompose,
                  make_grid, scalar_potential, synthesize)
from .needlet import (NeedletBank, NeedletCoeffs, NeedletFilter, NeedletLevel, bank_for,
                      build_bank, build_filter, eval_needlet, level_bandlimit,
                      needlet_analyze, needlet_synthesize, pn_apply, qj_apply)
from .besov import (BesovParams, LevelNormProfile, Mask, besov_norm, level_profile,
                    lp_norm, mask_leakage, psi_lp)
from .stochastic import (GammaEstimate, Observations, PowerSpectra, RegularSpectrumModel,
                         beta_covariance, clt_experiment, empirical_beta, gamma_hat,
                         gamma_moments, shrink_denoise, simulate_fields)

__version__ = "0.1.0"
