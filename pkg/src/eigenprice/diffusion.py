"""One-dimensional diffusion generators: densities, boundary classification, quadrature.

A `DiffusionSpec` describes the generator

    L = 1/2 a^2(x) d^2/dx^2 + b(x) d/dx - k(x),      k = r + h,

on an interval (e1, e2).  The scale density s(x) = exp(-int_{x0}^x 2b/a^2) and
speed density m(x) = 2/a^2 exp(+int) are computed from registered closed forms
when available, otherwise by quadrature of the drift-to-variance rate.

Endpoint classification (natural / exit / entrance / regular) follows the
Feller integral tests

    I = int S(e, x] (1 + k) m dx,      J = int S[x, y] (1 + k) m dx,

evaluated in log space over geometrically shrinking (finite endpoint) or
doubling (infinite endpoint) windows, with explicit divergence detection.
Models whose endpoint integrals are analytically knife-edged may register the
classification instead of relying on the numeric sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import quad

from .errors import ClassificationError, QuadratureError

__all__ = [
    "BoundaryReport",
    "DiffusionSpec",
    "EndpointReport",
    "classify_boundaries",
    "log_speed_density",
    "scale_density",
    "speed_density",
    "weighted_inner_product",
]

QUAD_ABS_TOL = 1e-10
QUAD_REL_TOL = 1e-9

# Divergence detection: an improper integral is declared infinite once the
# running value exceeds this cap while growing by more than GROWTH_RATIO over
# three consecutive window doublings.
DIVERGENCE_CAP_LOG = math.log(1e12)
GROWTH_RATIO = 1.5
MAX_SHELLS = 64
_SHELL_POINTS = 129


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients of a one-dimensional generator on (e1, e2).

    All coefficient callables must accept numpy arrays.  `x0` is the interior
    reference point for the density integrals; classification does not depend
    on it.  `regular_behavior` picks the boundary condition used when an
    endpoint classifies as regular.
    """

    a: Callable
    b: Callable
    r: Callable
    h: Callable
    e1: float
    e2: float
    x0: float
    regular_behavior: tuple[str, str] = ("killing", "killing")
    a_prime: Callable | None = None
    log_scale_fn: Callable | None = None
    log_speed_fn: Callable | None = None
    classification_override: Mapping[str, str] | None = None
    label: str = ""

    def __post_init__(self):
        if not (self.e1 < self.x0 < self.e2):
            raise ValueError(f"x0={self.x0} must lie strictly inside ({self.e1}, {self.e2})")
        for side, behavior in zip(("left", "right"), self.regular_behavior):
            if behavior not in ("killing", "reflecting"):
                raise ValueError(f"{side} regular behavior must be 'killing' or 'reflecting', got {behavior!r}")

    def k(self, x):
        return self.r(x) + self.h(x)


@dataclass(frozen=True)
class EndpointReport:
    endpoint: float
    classification: str
    I: float
    J: float
    boundary_condition: str
    source: str  # "integrals" or "registered"


@dataclass(frozen=True)
class BoundaryReport:
    left: EndpointReport
    right: EndpointReport
    label: str = ""

    def classifications(self) -> tuple[str, str]:
        return (self.left.classification, self.right.classification)


def _drift_rate_integral(spec: DiffusionSpec, x: float) -> float:
    """int_{x0}^{x} 2 b / a^2 du by adaptive quadrature."""
    rate = lambda u: 2.0 * float(spec.b(u)) / float(spec.a(u)) ** 2
    val, err = quad(rate, spec.x0, x, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=200)
    if not math.isfinite(val):
        raise QuadratureError(f"drift rate integral from {spec.x0} to {x} is not finite (non-integrable singularity?)")
    if err > max(QUAD_ABS_TOL * 10, 1e-6 * abs(val)):
        raise QuadratureError(f"drift rate integral from {spec.x0} to {x}: error estimate {err:.2e} too large")
    return val


def log_scale_density(spec: DiffusionSpec, x):
    if spec.log_scale_fn is not None:
        return spec.log_scale_fn(x)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array([-_drift_rate_integral(spec, xx) for xx in xs])
    return out if np.ndim(x) else float(out[0])


def log_speed_density(spec: DiffusionSpec, x):
    if spec.log_speed_fn is not None:
        return spec.log_speed_fn(x)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array(
        [math.log(2.0) - 2.0 * math.log(float(spec.a(xx))) + _drift_rate_integral(spec, xx) for xx in xs]
    )
    return out if np.ndim(x) else float(out[0])


def scale_density(spec: DiffusionSpec, x):
    """s(x) = exp(-int_{x0}^x 2b/a^2)."""
    return np.exp(log_scale_density(spec, x))


def speed_density(spec: DiffusionSpec, x):
    """m(x) = 2/a^2(x) exp(+int_{x0}^x 2b/a^2)."""
    return np.exp(log_speed_density(spec, x))


def weighted_inner_product(
    f: Callable,
    g: Callable,
    spec: DiffusionSpec,
    window: tuple[float, float] | None = None,
) -> tuple[float, float]:
    """(f, g) = int f g m dx over the window (defaults to the full interval).

    Returns (value, error_estimate).  Infinite endpoints are handled by the
    quadrature routine's internal substitution.
    """
    lo, hi = window if window is not None else (spec.e1, spec.e2)

    def integrand(x):
        return float(f(x)) * float(g(x)) * math.exp(log_speed_density(spec, x))

    out = quad(integrand, lo, hi, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=400, full_output=1)
    val, err = out[0], out[1]
    if len(out) > 3 or not math.isfinite(val):
        raise QuadratureError(
            f"weighted inner product on ({lo}, {hi}) did not converge: value={val}, error={err}, "
            f"message={out[3] if len(out) > 3 else 'non-finite value'}"
        )
    return val, err


# ---------------------------------------------------------------------------
# Boundary classification
# ---------------------------------------------------------------------------


def _shell_boundaries(endpoint: float, y: float, j: int) -> tuple[float, float]:
    """j-th integration shell between y and the endpoint (finite or infinite)."""
    if math.isfinite(endpoint):
        far = endpoint + (y - endpoint) * 0.5**j
        near = endpoint + (y - endpoint) * 0.5 ** (j + 1)
    else:
        w = max(1.0, abs(y))
        sgn = -1.0 if endpoint < 0 else 1.0
        far = y + sgn * w * (2.0**j - 1.0)
        near = y + sgn * w * (2.0 ** (j + 1) - 1.0)
    return near, far  # 'near' is closer to the endpoint


def _logtrapz_segments(logf: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Per-segment log integrals of exp(logf) by the trapezoid rule."""
    widths = np.abs(np.diff(xs))
    with np.errstate(divide="ignore"):
        lw = np.where(widths > 0, np.log(np.maximum(widths, 1e-300)), -np.inf)
    return np.logaddexp(logf[:-1], logf[1:]) + lw - math.log(2.0)


class _RunningLog:
    """Log-space accumulator with divergence bookkeeping."""

    def __init__(self):
        self.log_sum = -math.inf
        self.decided: str | None = None
        self.value: float = math.nan
        self._growth_streak = 0
        self._quiet_streak = 0

    def add_shell(self, shell_log: float) -> None:
        if self.decided:
            return
        new_log = np.logaddexp(self.log_sum, shell_log)
        if math.isfinite(self.log_sum):
            ratio_log = new_log - self.log_sum
            if new_log > DIVERGENCE_CAP_LOG and ratio_log > math.log(GROWTH_RATIO):
                self._growth_streak += 1
            else:
                self._growth_streak = 0
            if shell_log < self.log_sum + math.log(1e-14):
                self._quiet_streak += 1
            else:
                self._quiet_streak = 0
        self.log_sum = new_log
        if self._growth_streak >= 3:
            self.decided = "infinite"
            self.value = math.inf
        elif self._quiet_streak >= 2:
            self.decided = "finite"
            self.value = math.exp(self.log_sum) if math.isfinite(self.log_sum) else 0.0

    def force_infinite(self) -> None:
        self.decided = "infinite"
        self.value = math.inf


def _classify_endpoint(spec: DiffusionSpec, endpoint: float, side: str) -> EndpointReport:
    if spec.classification_override and side in spec.classification_override:
        cls = spec.classification_override[side]
        I = math.inf if cls in ("natural", "entrance") else math.nan
        J = math.inf if cls in ("natural", "exit") else math.nan
        return EndpointReport(endpoint, cls, I, J, _boundary_condition(spec, side, cls), "registered")

    y = spec.x0
    acc_I = _RunningLog()
    acc_J = _RunningLog()
    # Log cumulative integrals from y toward the endpoint, carried across shells:
    # cum_s = int_x^y s du,  cum_km = int_x^y (1+k) m du.  Fubini turns the
    # Feller I-test into int s(u) * cum_km(u) du, so only from-y cumulatives
    # are ever needed.
    carry_s = -math.inf
    carry_km = -math.inf

    for j in range(MAX_SHELLS):
        near, far = _shell_boundaries(endpoint, y, j)
        xs = np.linspace(far, near, _SHELL_POINTS)  # marching toward the endpoint
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            log_s = np.asarray(log_scale_density(spec, xs), dtype=float)
            log_m = np.asarray(log_speed_density(spec, xs), dtype=float)
            one_plus_k = np.abs(1.0 + np.asarray(spec.k(xs), dtype=float))
            log_km = log_m + np.log(np.maximum(one_plus_k, 1e-300))
        log_s = np.where(np.isnan(log_s), -np.inf, log_s)
        log_km = np.where(np.isnan(log_km), -np.inf, log_km)
        if np.any(np.isposinf(log_s)):
            # The scale density itself overflows inside this shell: the scale
            # integral (and with it I and J) is infinite for every practical cap.
            acc_I.force_infinite()
            acc_J.force_infinite()
            break

        seg_s = _logtrapz_segments(log_s, xs)
        seg_km = _logtrapz_segments(log_km, xs)
        # Cumulatives from y at the left edge of each segment.
        cum_s = np.logaddexp.accumulate(np.concatenate(([carry_s], seg_s)))
        cum_km = np.logaddexp.accumulate(np.concatenate(([carry_km], seg_km)))

        # Shell contributions: trapezoid over segments of s(u)*cum_km(u) and
        # (1+k)m(x)*cum_s(x), using the cumulative at each segment midpoint edge.
        shell_I = _log_weighted_shell(log_s, cum_km, xs)
        shell_J = _log_weighted_shell(log_km, cum_s, xs)
        acc_I.add_shell(shell_I)
        acc_J.add_shell(shell_J)
        carry_s = cum_s[-1]
        carry_km = cum_km[-1]
        if acc_I.decided and acc_J.decided:
            break

    if not (acc_I.decided and acc_J.decided):
        raise ClassificationError(
            f"endpoint {endpoint} of {spec.label or 'diffusion'}: I/J integrals neither converged nor "
            f"exceeded the divergence cap after {MAX_SHELLS} window doublings (oscillatory or log-slow)"
        )
    cls = _classification_from(acc_I.value, acc_J.value)
    return EndpointReport(endpoint, cls, acc_I.value, acc_J.value, _boundary_condition(spec, side, cls), "integrals")


def _log_weighted_shell(log_f: np.ndarray, log_w_edges: np.ndarray, xs: np.ndarray) -> float:
    """Log of int exp(log_f(x)) * W(x) dx over one shell.

    `log_w_edges` holds the log cumulative weight at segment edges (length
    len(xs)); the product is integrated segment-wise by the trapezoid rule.
    """
    log_fw = log_f + log_w_edges
    segs = _logtrapz_segments(log_fw, xs)
    return float(np.logaddexp.reduce(segs))


def _classification_from(I: float, J: float) -> str:
    inf_I = math.isinf(I)
    inf_J = math.isinf(J)
    if inf_I and inf_J:
        return "natural"
    if not inf_I and inf_J:
        return "exit"
    if inf_I and not inf_J:
        return "entrance"
    return "regular"


def _boundary_condition(spec: DiffusionSpec, side: str, cls: str) -> str:
    if cls == "natural":
        return "none"
    if cls == "exit":
        return "dirichlet-zero"
    if cls == "entrance":
        return "reflecting-flux-zero"
    behavior = spec.regular_behavior[0 if side == "left" else 1]
    return "dirichlet-zero" if behavior == "killing" else "reflecting-flux-zero"


def classify_boundaries(spec: DiffusionSpec) -> BoundaryReport:
    """Feller classification of both endpoints, with selected boundary conditions."""
    left = _classify_endpoint(spec, spec.e1, "left")
    right = _classify_endpoint(spec, spec.e2, "right")
    return BoundaryReport(left=left, right=right, label=spec.label)
