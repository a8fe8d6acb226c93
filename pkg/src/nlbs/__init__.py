"""Nonlinear Black-Scholes pricing under market impact."""
from .errors import (ConfigError, InvalidMu, InvalidParams, NLBSError, NoFiniteRoot,
                     NonConvergence, NonEllipticInput, NumericalBlowup, PathEscapedGrid,
                     Singular, SingularMu)
from .grid import SpaceTimeGrid, Stencil
from .impact import (ConstantLambda, EffectiveNonlinearity, GammaMaxImpact, IntensityImpact,
                     LinearImpact, MuCurveNonlinearity, NoImpact, PowerLawLambda, TableLambda,
                     effective_F, lambda_from_mu, mu_linear, mu_of, solve_F_intensity,
                     supply_vol)
from .payoffs import FaceliftResult, Payoff, facelift, facelift_values
from .pde import PriceSurface, greeks, pde_residual, solve, step_nonlinear
from .hedge import HedgeRunConfig, HedgeRunReport, refinement_study, simulate
from .convergence import MuFamily, build_mu_family, convergence_study

__version__ = "0.1.0"
