"""Model constants shared by every solver in the package.

Everything here derives from the Hölder exponent ``alpha`` of the angular
vorticity.  ``epsilon = 1/3 - alpha`` is the small parameter controlling the
scaling laws of the profiles.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
from scipy import integrate

ONE_THIRD = 1.0 / 3.0


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (achieved error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


def _kappa_psi2_integrand(s, alpha):
    return s ** (2.0 + alpha) / (s * s + 1.0) ** 2.5


def kappa_psi2_integral(alpha: float, tol: float = 1e-12, s_max: float = 1e4,
                        limit: int = 400) -> float:
    """Integral of s^(2+alpha) / (s^2+1)^(5/2) over (0, inf).

    The range is truncated at ``s_max`` and the remainder is replaced by the
    integral of the leading term s^(alpha-3), whose size S^(alpha-2)/(2-alpha)
    bounds the truncation error; the next-order correction is added as well.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if tol <= 0:
        raise DomainError("tol must be positive")
    total = 0.0
    err_total = 0.0
    # split at s = 1 so the near-origin power behaviour and the bulk are separate
    for a, b in ((0.0, 1.0), (1.0, 10.0), (10.0, 100.0), (100.0, s_max)):
        val, err = integrate.quad(_kappa_psi2_integrand, a, b, args=(alpha,),
                                  epsabs=tol / 8, epsrel=1e-14, limit=limit)
        total += val
        err_total += err
    # (s^2+1)^(-5/2) = s^-5 (1 - 5/(2 s^2) + 35/(8 s^4) - ...)
    S = s_max
    tail = (S ** (alpha - 2.0) / (2.0 - alpha)
            - 2.5 * S ** (alpha - 4.0) / (4.0 - alpha)
            + 4.375 * S ** (alpha - 6.0) / (6.0 - alpha))
    total += tail
    err_total += 7.0 * S ** (alpha - 8.0)
    if err_total > tol:
        raise QuadratureError("kappa_psi2 quadrature failed", err_total)
    return total


@dataclass(frozen=True)
class ModelParameters:
    alpha: float
    epsilon: float
    c_far: float
    kappa: float
    kappa1: float
    kappa_ag: float
    eps2: float
    kappa_O: float
    kappa_psi2: float
    kappa_psi1: float
    kappa_psi: float
    hat_eps_beta: float
    alpha_hat: float
    alpha_phi: float

    @property
    def kappa_poisson(self) -> float:
        """Source constant of the 5D Poisson form matching the convolution kernel.

        The kernel kappa_psi1 / (2 pi^2) |s|^-3 equals c / (8 pi^2) |s|^-3, the
        Green's function of -Laplacian in R^5 times c, for c = 4 kappa_psi1.
        ``kappa_psi`` (= 8 kappa_psi1) is kept as the documented constant but
        would double the stream function relative to the kernel formulas.
        """
        return 8.0 * math.pi ** 2 * self.kappa_psi1 / (2.0 * math.pi ** 2)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json_dict(self) -> dict:
        """Fields as floats rounded-trip safe at 17 significant digits."""
        return {f.name: float(f"{getattr(self, f.name):.17g}") for f in fields(self)}


def derive_params(alpha: float, c_wbar: float = 0.0,
                  alpha_star: Optional[float] = None) -> ModelParameters:
    """Build the full constant set for ``alpha`` in (0, 1/3].

    ``c_wbar`` is the absolute constant in eps2 = kappa1*eps - c_wbar*eps^(2-kappa);
    it defaults to 0.  ``alpha_star`` (the profile decay exponent) refines
    ``alpha_phi`` when a measured value is available.
    """
    alpha = float(alpha)
    if not (0.0 < alpha <= ONE_THIRD + 1e-15) or math.isnan(alpha):
        raise DomainError(f"alpha must lie in (0, 1/3], got {alpha!r}")
    alpha = min(alpha, ONE_THIRD)
    epsilon = ONE_THIRD - alpha
    if abs(epsilon) < 1e-15:
        epsilon = 0.0
    c_far = 2.0 ** (4.0 / 3.0) - 2.0 / 3.0
    kappa = (c_far + 2.0) / 4.0
    kappa1 = (1.0 - kappa) / 1000.0
    eps2 = kappa1 * epsilon - c_wbar * epsilon ** (2.0 - kappa)
    eps2 = min(max(eps2, 0.0), kappa1 * epsilon)
    k2 = kappa_psi2_integral(alpha, tol=1e-12)
    k1 = alpha / (3.0 * k2)
    if alpha_star is None:
        alpha_phi = ONE_THIRD + epsilon / 16.0
    else:
        alpha_phi = 0.5 * (ONE_THIRD + alpha_star)
    return ModelParameters(
        alpha=alpha,
        epsilon=epsilon,
        c_far=c_far,
        kappa=kappa,
        kappa1=kappa1,
        kappa_ag=1.0 / 1000.0,
        eps2=eps2,
        kappa_O=1.2,
        kappa_psi2=k2,
        kappa_psi1=k1,
        kappa_psi=8.0 * k1,
        hat_eps_beta=9.0 / 8.0 * epsilon,
        alpha_hat=ONE_THIRD + epsilon / 8.0,
        alpha_phi=alpha_phi,
    )


def params_from_epsilon(epsilon: float, **kw) -> ModelParameters:
    if not 0.0 <= epsilon < ONE_THIRD:
        raise DomainError(f"epsilon must lie in [0, 1/3), got {epsilon!r}")
    return derive_params(ONE_THIRD - epsilon, **kw)


def japanese_bracket(x):
    """<x> = sqrt(1 + x^2)."""
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)
