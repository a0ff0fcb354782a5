"""Numerical toolkit for self-similar blowup of axisymmetric Euler with Hölder data."""
from .params import (DomainError, ModelParameters, QuadratureError, derive_params,
                     kappa_psi2_integral, params_from_epsilon)

__version__ = "0.1.0"

__all__ = ["DomainError", "ModelParameters", "QuadratureError", "derive_params",
           "kappa_psi2_integral", "params_from_epsilon", "__version__"]
