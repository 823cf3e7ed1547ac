"""Averaging against the fast factor's invariant distribution.

The fast factor has generator L0 = 1/2 beta^2(y) d^2/dy^2 + alpha(y) d/dy,
whose invariant density pi is proportional to the zero-killing speed density.
This module computes averages <g> = int g pi dy, solves the Poisson equations

    L0 phi = f^2 - <f^2>,      L0 eta = f*Omega - <f*Omega>

for the y-derivatives of their solutions (only d_y phi and d_y eta ever enter
the group parameters, so the additive constants never matter), and assembles
the eight averaged parameters feeding the first-order correction operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .errors import QuadratureError, SolvabilityError

__all__ = [
    "Correlations",
    "FastFactorSpec",
    "GroupParams",
    "InvariantDensity",
    "SlowFactorSpec",
    "VolStructure",
    "average",
    "group_params",
    "invariant_density",
    "poisson_solve_dy",
]

CENTERING_TOL = 1e-7
_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-11, limit=300)


@dataclass(frozen=True)
class FastFactorSpec:
    """Fast-factor dynamics: drift alpha(y), diffusion beta(y) > 0, market price
    of volatility risk Lambda(y, z) (bounded)."""

    alpha: Callable
    beta: Callable
    Lambda: Callable | None = None
    support: tuple[float, float] = (-math.inf, math.inf)
    y0: float = 0.0
    log_pi_fn: Callable | None = None  # registered analytic log-density (normalized)


@dataclass(frozen=True)
class SlowFactorSpec:
    """Slow-factor dynamics: drift c(z), diffusion g(z) > 0, market price of
    risk Gamma(y, z) (bounded)."""

    c: Callable
    g: Callable
    Gamma: Callable | None = None


@dataclass(frozen=True)
class VolStructure:
    """Nonlocal volatility factor f(y, z) > 0 and market price of risk Omega(y, z)."""

    f: Callable
    Omega: Callable | None = None


@dataclass(frozen=True)
class Correlations:
    rho_xy: float = 0.0
    rho_xz: float = 0.0
    rho_yz: float = 0.0

    def __post_init__(self):
        for name in ("rho_xy", "rho_xz", "rho_yz"):
            if abs(getattr(self, name)) > 1.0:
                raise ValueError(f"{name} must lie in [-1, 1]")
        det = (
            1.0
            + 2.0 * self.rho_xy * self.rho_xz * self.rho_yz
            - self.rho_xy**2
            - self.rho_xz**2
            - self.rho_yz**2
        )
        if det < -1e-12:
            raise ValueError(f"correlation matrix is not positive semidefinite (determinant term {det:.3e})")


@dataclass(frozen=True)
class GroupParams:
    """The eight averaged parameters, plus the level values they derive from."""

    V3: float = 0.0
    V2: float = 0.0
    U2: float = 0.0
    U1: float = 0.0
    V1: float = 0.0
    V0: float = 0.0
    sigma_bar: float = 0.0
    fOm_bar: float = 0.0
    sigma_bar_prime: float = 0.0
    fOm_bar_prime: float = 0.0
    rho_xy: float = 0.0
    rho_xz: float = 0.0

    def fast_all_zero(self) -> bool:
        return self.V3 == self.V2 == self.U2 == self.U1 == 0.0

    def slow_all_zero(self) -> bool:
        return self.V1 == self.V0 == 0.0 or (self.sigma_bar_prime == 0.0 and self.fOm_bar_prime == 0.0)


class InvariantDensity:
    """Normalized invariant density of the fast factor.

    The normalization constant is computed once at construction; `pdf` and
    `log_pdf` accept arrays.
    """

    def __init__(self, fast: FastFactorSpec):
        self._fast = fast
        lo, hi = fast.support
        if fast.log_pi_fn is not None:
            self._log_pdf = fast.log_pi_fn
            self._log_norm = 0.0
        else:
            y0 = fast.y0

            def log_unnorm(y):
                ys = np.atleast_1d(np.asarray(y, dtype=float))
                out = np.empty_like(ys)
                for i, yy in enumerate(ys):
                    val, _ = quad(
                        lambda u: 2.0 * float(fast.alpha(u)) / float(fast.beta(u)) ** 2, y0, yy, **_QUAD_OPTS
                    )
                    out[i] = math.log(2.0) - 2.0 * math.log(float(fast.beta(yy))) + val
                return out if np.ndim(y) else float(out[0])

            norm, err = quad(lambda y: math.exp(log_unnorm(y)), lo, hi, **_QUAD_OPTS)
            if not math.isfinite(norm) or norm <= 0 or err > 1e-6 * norm:
                raise QuadratureError(
                    f"fast-factor speed density is not integrable (norm={norm}, err={err}); no invariant distribution"
                )
            log_norm = math.log(norm)
            self._log_pdf = lambda y: log_unnorm(y) - log_norm
            self._log_norm = log_norm

    @property
    def support(self) -> tuple[float, float]:
        return self._fast.support

    def log_pdf(self, y):
        return self._log_pdf(y)

    def pdf(self, y):
        return np.exp(self._log_pdf(y))

    def integrate(self, g: Callable) -> float:
        """int g(y) pi(y) dy over the support."""
        lo, hi = self.support
        val, err = quad(lambda y: float(g(y)) * float(self.pdf(y)), lo, hi, **_QUAD_OPTS)
        if not math.isfinite(val):
            raise QuadratureError(f"average against the invariant density diverged (value={val})")
        return val

    def integrate_to(self, g: Callable, y: float) -> float:
        """int_{lo}^{y} g(u) pi(u) du."""
        lo, _ = self.support
        val, _ = quad(lambda u: float(g(u)) * float(self.pdf(u)), lo, y, **_QUAD_OPTS)
        return val


def invariant_density(fast: FastFactorSpec) -> InvariantDensity:
    return InvariantDensity(fast)


def average(g: Callable, fast: FastFactorSpec | InvariantDensity, z: float | None = None) -> float:
    """<g> = int g(y) pi(y) dy.  `g` is a function of y alone (close over z)."""
    pi = fast if isinstance(fast, InvariantDensity) else invariant_density(fast)
    return pi.integrate(g)


def poisson_solve_dy(
    rhs: Callable,
    fast: FastFactorSpec,
    pi: InvariantDensity | None = None,
) -> Callable:
    """Solve L0 u = rhs for d_y u, given a centered right-hand side.

    In self-adjoint form, beta^2(y) pi(y) d_y u(y) = 2 int_{lo}^{y} rhs pi, so
    the derivative is recovered by a single cumulative integral.  Raises
    SolvabilityError when <rhs> is not zero to tolerance (Fredholm).
    """
    pi = pi if pi is not None else invariant_density(fast)
    mean = pi.integrate(rhs)
    scale = pi.integrate(lambda y: abs(float(rhs(y))))
    if abs(mean) > CENTERING_TOL * max(1.0, scale):
        raise SolvabilityError(
            f"Poisson right-hand side is not centered: <rhs> = {mean:.3e} (scale {scale:.3e}, tol {CENTERING_TOL})"
        )

    def dy_u(y):
        ys = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty_like(ys)
        for i, yy in enumerate(ys):
            inner = pi.integrate_to(rhs, yy)
            out[i] = 2.0 * inner / (float(fast.beta(yy)) ** 2 * float(pi.pdf(yy)))
        return out if np.ndim(y) else float(out[0])

    return dy_u


def _sigma_fom_at(vol: VolStructure, pi: InvariantDensity, z: float) -> tuple[float, float]:
    sig2 = pi.integrate(lambda y: float(vol.f(y, z)) ** 2)
    if sig2 <= 0 or not math.isfinite(sig2):
        raise QuadratureError(f"<f^2> at z={z} is {sig2}; not a usable effective variance")
    if vol.Omega is None:
        fom = 0.0
    else:
        fom = pi.integrate(lambda y: float(vol.f(y, z)) * float(vol.Omega(y, z)))
    return math.sqrt(sig2), fom


def group_params(
    fast: FastFactorSpec,
    slow: SlowFactorSpec | None,
    vol: VolStructure,
    correlations: Correlations,
    z: float = 0.0,
    bump: float | None = None,
    pi: InvariantDensity | None = None,
) -> GroupParams:
    """Compute all eight group parameters at the slow-factor level z.

    The fast parameters need the two Poisson derivative solutions; the slow
    ones are plain averages; the z-derivatives of sigma_bar and fOm_bar use
    central differences with step `bump` (default 1e-4 * max(1, |z|)).
    """
    pi = pi if pi is not None else invariant_density(fast)
    sigma_bar, fOm_bar = _sigma_fom_at(vol, pi, z)

    dphi = poisson_solve_dy(lambda y: float(vol.f(y, z)) ** 2 - sigma_bar**2, fast, pi)
    V3 = -(correlations.rho_xy / 2.0) * pi.integrate(
        lambda y: float(fast.beta(y)) * float(vol.f(y, z)) * float(dphi(y))
    )
    if fast.Lambda is not None:
        V2 = 0.5 * pi.integrate(lambda y: float(fast.beta(y)) * float(fast.Lambda(y, z)) * float(dphi(y)))
    else:
        V2 = 0.0

    if vol.Omega is not None:
        deta = poisson_solve_dy(lambda y: float(vol.f(y, z)) * float(vol.Omega(y, z)) - fOm_bar, fast, pi)
        U2 = correlations.rho_xy * pi.integrate(
            lambda y: float(fast.beta(y)) * float(vol.f(y, z)) * float(deta(y))
        )
        if fast.Lambda is not None:
            U1 = -pi.integrate(lambda y: float(fast.beta(y)) * float(fast.Lambda(y, z)) * float(deta(y)))
        else:
            U1 = 0.0
    else:
        U2 = 0.0
        U1 = 0.0

    if slow is not None:
        g_z = float(slow.g(z))
        V1 = g_z * correlations.rho_xz * pi.integrate(lambda y: float(vol.f(y, z)))
        V0 = -g_z * pi.integrate(lambda y: float(slow.Gamma(y, z))) if slow.Gamma is not None else 0.0
        b = bump if bump is not None else 1e-4 * max(1.0, abs(z))
        sig_up, fom_up = _sigma_fom_at(vol, pi, z + b)
        sig_dn, fom_dn = _sigma_fom_at(vol, pi, z - b)
        sigma_bar_prime = (sig_up - sig_dn) / (2.0 * b)
        fOm_bar_prime = (fom_up - fom_dn) / (2.0 * b)
    else:
        V1 = V0 = sigma_bar_prime = fOm_bar_prime = 0.0

    return GroupParams(
        V3=V3,
        V2=V2,
        U2=U2,
        U1=U1,
        V1=V1,
        V0=V0,
        sigma_bar=sigma_bar,
        fOm_bar=fOm_bar,
        sigma_bar_prime=sigma_bar_prime,
        fOm_bar_prime=fOm_bar_prime,
        rho_xy=correlations.rho_xy,
        rho_xz=correlations.rho_xz,
    )
