"""Special functions backing the closed-form eigen-systems.

Everything here is pure and reentrant.  Polynomial families are evaluated by
three-term recurrences (no factorial blow-up up to degree ~200); ratios of
Gamma functions are always formed in log space.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as _sp_erf

__all__ = [
    "erf",
    "exp_scaled_laguerre",
    "hermite",
    "hermite_normalized",
    "hyp_pfq_terminating",
    "laguerre",
    "log_gamma",
    "norm_cdf",
]

_INT_TOL = 1e-9


def hermite(n: int, x):
    """Physicists' Hermite polynomial H_n(x) via H_{k+1} = 2x H_k - 2k H_{k-1}.

    `x` may be a float or ndarray; the return type follows the input.
    """
    if n < 0:
        raise ValueError(f"hermite: degree must be >= 0, got {n}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * x
    for k in range(1, n):
        h, h_prev = 2.0 * x * h - 2.0 * k * h_prev, h
    return h if h.ndim else float(h)


def hermite_normalized(n: int, x):
    """H_n(x) / sqrt(2^n n! sqrt(pi)), computed by a normalized recurrence.

    Stays in floating range for degrees where the raw polynomial would
    overflow, which is what the oscillator-style eigenfunctions need.
    """
    if n < 0:
        raise ValueError(f"hermite_normalized: degree must be >= 0, got {n}")
    x = np.asarray(x, dtype=float)
    h_prev = np.full_like(x, math.pi ** -0.25)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x * math.sqrt(2.0) * h_prev
    for k in range(1, n):
        h, h_prev = (
            x * math.sqrt(2.0 / (k + 1)) * h - math.sqrt(k / (k + 1.0)) * h_prev,
            h,
        )
    return h if h.ndim else float(h)


def laguerre(n: int, nu: float, x):
    """Generalized Laguerre polynomial L_n^(nu)(x), nu > -1.

    Recurrence: (k+1) L_{k+1} = (2k+1+nu-x) L_k - (k+nu) L_{k-1}.
    """
    if n < 0:
        raise ValueError(f"laguerre: degree must be >= 0, got {n}")
    if nu <= -1.0:
        raise ValueError(f"laguerre: parameter must be > -1, got {nu}")
    return _laguerre_seeded(n, nu, x, None)


def exp_scaled_laguerre(n: int, nu: float, x):
    """exp(-x) * L_n^(nu)(x) with the exponential folded into the recurrence seed.

    At large x the polynomial alone overflows while the product is tiny;
    seeding the (linear) recurrence with exp(-x) keeps every iterate in range.
    """
    if n < 0:
        raise ValueError(f"exp_scaled_laguerre: degree must be >= 0, got {n}")
    if nu <= -1.0:
        raise ValueError(f"exp_scaled_laguerre: parameter must be > -1, got {nu}")
    x_arr = np.asarray(x, dtype=float)
    return _laguerre_seeded(n, nu, x, np.exp(-x_arr))


def _laguerre_seeded(n: int, nu: float, x, seed):
    x = np.asarray(x, dtype=float)
    l_prev = np.ones_like(x) if seed is None else np.broadcast_to(seed, x.shape).astype(float)
    if n == 0:
        return l_prev if l_prev.ndim else float(l_prev)
    l = (1.0 + nu - x) * l_prev
    for k in range(1, n):
        l, l_prev = ((2.0 * k + 1.0 + nu - x) * l - (k + nu) * l_prev) / (k + 1.0), l
    return l if l.ndim else float(l)


def hyp_pfq_terminating(top: list[float], bottom: list[float], x: float) -> float:
    """Terminating generalized hypergeometric series pFq(top; bottom; x).

    At least one top parameter must be a nonpositive integer, which truncates
    the series.  Terms are built multiplicatively in log-magnitude/sign form
    and summed with compensated (Kahan) accumulation against the largest
    magnitude, so alternating near-cancelling sums of up to a few hundred
    terms stay accurate and nothing overflows.

    Raises ValueError if no top parameter terminates the series, or if a
    bottom parameter hits a pole (nonpositive integer) before termination.
    """
    top = [float(a) for a in top]
    bottom = [float(b) for b in bottom]
    x = float(x)

    n_terms = None
    for a in top:
        if a <= _INT_TOL and abs(a - round(a)) <= _INT_TOL:
            m = int(-round(a))
            n_terms = m if n_terms is None else min(n_terms, m)
    if n_terms is None:
        raise ValueError("hyp_pfq_terminating: no nonpositive-integer top parameter; series does not terminate")
    for b in bottom:
        if b <= _INT_TOL and abs(b - round(b)) <= _INT_TOL and int(-round(b)) < n_terms:
            raise ValueError(f"hyp_pfq_terminating: bottom parameter {b} hits a pole before the series terminates")

    if x == 0.0 or n_terms == 0:
        return 1.0

    # Forward pass: log|t_k| and sign(t_k) for k = 0..n_terms.
    logs = [0.0]
    signs = [1.0]
    log_t, sign_t = 0.0, 1.0
    for k in range(n_terms):
        for a in top:
            fac = a + k
            if fac == 0.0:
                sign_t = 0.0
                break
            log_t += math.log(abs(fac))
            sign_t *= math.copysign(1.0, fac)
        if sign_t == 0.0:
            break
        for b in bottom:
            fac = b + k
            log_t -= math.log(abs(fac))
            sign_t *= math.copysign(1.0, fac)
        log_t += math.log(abs(x)) - math.log(k + 1.0)
        sign_t *= math.copysign(1.0, x)
        logs.append(log_t)
        signs.append(sign_t)

    peak = max(logs)
    total = 0.0
    comp = 0.0
    for lg, sg in zip(logs, signs):
        term = sg * math.exp(lg - peak)
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return math.exp(peak) * total


def norm_cdf(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))


def erf(x):
    """Error function, elementwise on arrays."""
    x = np.asarray(x, dtype=float)
    out = _sp_erf(x)
    return out if out.ndim else float(out)


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0."""
    if x <= 0.0:
        raise ValueError(f"log_gamma: argument must be > 0, got {x}")
    return math.lgamma(x)
