"""Model-independent spectral pricing engine.

Given an eigen-system {lambda_n, psi_n} of the averaged generator and payoff
coefficients c_n, the leading price and its two first-order corrections are

    u00 = sum_n c_n psi_n T_n
    u10 = sum_n sum_k c_n A_{k,n} psi_k U_{k,n}        (diagonal: -t T_n)
    u01 = sum_n sum_k [c_n Bt_{k,n} + (dz c_n) B_{k,n}] psi_k U_{k,n}
        + sum_n sum_k c_n B_{k,n} (dz lambda_n) psi_k V_{k,n}   (diagonal: +t^2 T_n / 2)

with time factors T_n = exp(-t lambda_n), U_{k,n} = (T_k - T_n)/(lambda_k -
lambda_n) and V_{k,n} = (T_k - T_n)/(lambda_k - lambda_n)^2 + t T_n/(lambda_k
- lambda_n).  U and V collapse to -t T_n and t^2 T_n / 2 in the confluent
limit lambda_k -> lambda_n; near-degenerate gaps switch to a series in the gap
to avoid catastrophic cancellation.

Everything here is pure; one immutable ExpansionInputs bundle can be evaluated
concurrently at many (t, x) points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .averaging import GroupParams
from .diffusion import DiffusionSpec, log_speed_density

__all__ = [
    "ExpansionInputs",
    "MatrixElements",
    "PriceExpansion",
    "SeriesResult",
    "apply_generator",
    "fd_derivative",
    "matrix_elements_by_quadrature",
    "price_expansion",
    "price_u00",
    "price_u01",
    "price_u10",
    "time_factor_T",
    "time_factor_U",
    "time_factor_V",
    "u_matrix",
    "v_matrix",
]

EXACT_GAP_TOL = 1e-9   # relative gap below which the confluent limit is exact
SERIES_GAP_TOL = 1e-4  # relative gap below which the gap-series branch is used
SMALL_T_WARN = 1e-6
DEFAULT_SERIES_TOL = 1e-8
HARD_CAP_TERMS = 200


# ---------------------------------------------------------------------------
# Time factors
# ---------------------------------------------------------------------------


def time_factor_T(lam: float, t: float) -> float:
    """T_n = exp(-t lambda_n)."""
    return math.exp(-t * lam)


def _phi1_series(w: float) -> float:
    """(1 - exp(-w)) / w as a convergent series; phi1(0) = 1."""
    term = 1.0
    total = 1.0
    j = 0
    while True:
        j += 1
        term *= -w / (j + 1.0)
        total += term
        if abs(term) < 1e-17 * abs(total) or j > 60:
            return total


def _phi2_series(w: float) -> float:
    """(exp(-w) - 1 + w) / w^2 as a convergent series; phi2(0) = 1/2."""
    term = 0.5
    total = 0.5
    j = 0
    while True:
        j += 1
        term *= -w / (j + 2.0)
        total += term
        if abs(term) < 1e-17 * abs(total) or j > 60:
            return total


def time_factor_U(lam_k: float, lam_n: float, t: float) -> float:
    """U_{k,n} = (T_k - T_n)/(lam_k - lam_n), confluent-limit safe."""
    gap = lam_k - lam_n
    scale = max(1.0, abs(lam_n))
    T_n = math.exp(-t * lam_n)
    if abs(gap) < EXACT_GAP_TOL * scale:
        return -t * T_n
    if abs(gap) < SERIES_GAP_TOL * scale:
        return -t * T_n * _phi1_series(t * gap)
    return (math.exp(-t * lam_k) - T_n) / gap


def time_factor_V(lam_k: float, lam_n: float, t: float) -> float:
    """V_{k,n} = (T_k - T_n)/gap^2 + t T_n/gap, confluent-limit safe."""
    gap = lam_k - lam_n
    scale = max(1.0, abs(lam_n))
    T_n = math.exp(-t * lam_n)
    if abs(gap) < EXACT_GAP_TOL * scale:
        return 0.5 * t * t * T_n
    if abs(gap) < SERIES_GAP_TOL * scale:
        return t * t * T_n * _phi2_series(t * gap)
    return (math.exp(-t * lam_k) - T_n) / gap**2 + t * T_n / gap


def u_matrix(lam: np.ndarray, t: float) -> np.ndarray:
    """Matrix U_{k,n} over an eigenvalue vector (rows k, columns n)."""
    n = len(lam)
    out = np.empty((n, n))
    for k in range(n):
        for j in range(n):
            out[k, j] = time_factor_U(lam[k], lam[j], t)
    return out


def v_matrix(lam: np.ndarray, t: float) -> np.ndarray:
    """Matrix V_{k,n} over an eigenvalue vector (rows k, columns n)."""
    n = len(lam)
    out = np.empty((n, n))
    for k in range(n):
        for j in range(n):
            out[k, j] = time_factor_V(lam[k], lam[j], t)
    return out


# ---------------------------------------------------------------------------
# Expansion inputs and sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixElements:
    """Inner-product matrices of the correction operators in the eigenbasis."""

    A: np.ndarray
    B: np.ndarray
    Btilde: np.ndarray
    source: str  # "closed-form" or "quadrature"


@dataclass(frozen=True)
class ExpansionInputs:
    """Everything the three expansion sums need, truncated at N terms.

    Arrays are indexed 0..N-1 regardless of the model's natural index base.
    """

    lam: np.ndarray
    coeffs: np.ndarray
    psi: Callable  # psi(j, x) with j the 0-based array index
    matrices: MatrixElements | None = None
    dz_lam: np.ndarray | None = None
    dz_coeffs: np.ndarray | None = None
    index_base: int = 1

    @property
    def n_terms(self) -> int:
        return len(self.lam)

    def psi_vector(self, x: float) -> np.ndarray:
        return np.array([float(self.psi(j, x)) for j in range(self.n_terms)])


@dataclass(frozen=True)
class SeriesResult:
    value: float
    tail: float
    converged: bool


@dataclass(frozen=True)
class PriceExpansion:
    u00: float
    u10: float
    u01: float
    epsilon: float
    delta: float
    N: int
    tail_estimate: float
    converged: bool
    small_t_warning: bool = False

    @property
    def combined(self) -> float:
        return self.u00 + math.sqrt(self.epsilon) * self.u10 + math.sqrt(self.delta) * self.u01


def price_u00(inputs: ExpansionInputs, t: float, x: float, series_tol: float = DEFAULT_SERIES_TOL) -> SeriesResult:
    """Leading-order price sum_n c_n psi_n(x) exp(-t lambda_n)."""
    psi_v = inputs.psi_vector(x)
    T = np.exp(-t * inputs.lam)
    terms = inputs.coeffs * psi_v * T
    value = float(np.sum(terms))
    tail = float(abs(terms[-1]))
    scale = max(abs(value), 1e-12)
    return SeriesResult(value, tail, tail <= series_tol * scale)


def price_u10(inputs: ExpansionInputs, t: float, x: float, series_tol: float = DEFAULT_SERIES_TOL) -> SeriesResult:
    """First fast-factor correction (the A-matrix double sum)."""
    if inputs.matrices is None:
        raise ValueError("price_u10 requires matrix elements")
    psi_v = inputs.psi_vector(x)
    U = u_matrix(inputs.lam, t)
    weighted = inputs.matrices.A * U
    col_contrib = psi_v @ weighted  # per-n contributions before c_n
    terms = col_contrib * inputs.coeffs
    value = float(np.sum(terms))
    tail = float(abs(terms[-1]))
    scale = max(abs(value), 1e-12)
    return SeriesResult(value, tail, tail <= series_tol * scale)


def price_u01(inputs: ExpansionInputs, t: float, x: float, series_tol: float = DEFAULT_SERIES_TOL) -> SeriesResult:
    """First slow-factor correction (the B / Btilde six-sum expression)."""
    if inputs.matrices is None or inputs.dz_lam is None or inputs.dz_coeffs is None:
        raise ValueError("price_u01 requires matrices, dz eigenvalues and dz coefficients")
    psi_v = inputs.psi_vector(x)
    U = u_matrix(inputs.lam, t)
    V = v_matrix(inputs.lam, t)
    m = inputs.matrices
    terms = (
        (psi_v @ (m.Btilde * U)) * inputs.coeffs
        + (psi_v @ (m.B * U)) * inputs.dz_coeffs
        + (psi_v @ (m.B * V)) * (inputs.coeffs * inputs.dz_lam)
    )
    value = float(np.sum(terms))
    tail = float(abs(terms[-1]))
    scale = max(abs(value), 1e-12)
    return SeriesResult(value, tail, tail <= series_tol * scale)


def price_expansion(
    inputs: ExpansionInputs,
    t: float,
    x: float,
    epsilon: float = 0.0,
    delta: float = 0.0,
    series_tol: float = DEFAULT_SERIES_TOL,
) -> PriceExpansion:
    """Assemble u00 + sqrt(eps) u10 + sqrt(delta) u01 with tail diagnostics."""
    r00 = price_u00(inputs, t, x, series_tol)
    if epsilon > 0.0 and inputs.matrices is not None:
        r10 = price_u10(inputs, t, x, series_tol)
    else:
        r10 = SeriesResult(0.0, 0.0, True)
    if delta > 0.0 and inputs.matrices is not None and inputs.dz_lam is not None:
        r01 = price_u01(inputs, t, x, series_tol)
    else:
        r01 = SeriesResult(0.0, 0.0, True)
    tail = r00.tail + math.sqrt(epsilon) * r10.tail + math.sqrt(delta) * r01.tail
    return PriceExpansion(
        u00=r00.value,
        u10=r10.value,
        u01=r01.value,
        epsilon=epsilon,
        delta=delta,
        N=inputs.n_terms,
        tail_estimate=tail,
        converged=r00.converged and r10.converged and r01.converged,
        small_t_warning=t < SMALL_T_WARN,
    )


# ---------------------------------------------------------------------------
# Finite differences and the generic quadrature route
# ---------------------------------------------------------------------------

_FD1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FD2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_FD3 = np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) / 8.0


def fd_derivative(f: Callable, x: np.ndarray, h: np.ndarray | float, order: int) -> np.ndarray:
    """Fourth-order central finite difference of order 1, 2 or 3 (vectorized)."""
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    if order == 1:
        shifts, weights, denom = (-2, -1, 0, 1, 2), _FD1, h
    elif order == 2:
        shifts, weights, denom = (-2, -1, 0, 1, 2), _FD2, h**2
    elif order == 3:
        shifts, weights, denom = (-3, -2, -1, 0, 1, 2, 3), _FD3, h**3
    else:
        raise ValueError(f"unsupported derivative order {order}")
    acc = np.zeros_like(x)
    for s, w in zip(shifts, weights):
        if w != 0.0:
            acc = acc + w * np.asarray(f(x + s * h), dtype=float)
    return acc / denom


def apply_generator(spec: DiffusionSpec, f: Callable, x: np.ndarray, h: np.ndarray | float) -> np.ndarray:
    """(1/2 a^2 f'' + b f' - k f)(x) with finite-difference derivatives."""
    x = np.asarray(x, dtype=float)
    f1 = fd_derivative(f, x, h, 1)
    f2 = fd_derivative(f, x, h, 2)
    a = np.asarray(spec.a(x), dtype=float)
    b = np.asarray(spec.b(x), dtype=float)
    k = np.asarray(spec.k(x), dtype=float)
    return 0.5 * a**2 * f2 + b * f1 - k * np.asarray(f(x), dtype=float)


def matrix_elements_by_quadrature(model, gp: GroupParams, N: int, z_bump: float = 1e-5) -> MatrixElements:
    """A, B and Btilde by weighted quadrature against the model's speed density.

    `model` must provide: quad_rule(N) -> (nodes, weights incl. speed density),
    psi(n, x) vectorized, fd_step(x), a_local / a_local_prime, index_base, and
    with_effective(sigma_bar, fOm_bar) for the z-dependence bumps.  Derivatives
    of psi are taken by high-order finite differences, so this route stays
    independent of any closed-form ladder identities.
    """
    nodes, w = model.quad_rule(N)
    h = np.asarray(model.fd_step(nodes), dtype=float)
    a = np.asarray(model.a_local(nodes), dtype=float)
    ap = np.asarray(model.a_local_prime(nodes), dtype=float)
    base = model.index_base

    psi_mat = np.stack([np.asarray(model.psi(base + k, nodes), dtype=float) for k in range(N)])
    weighted_psi = psi_mat * w  # rows k: psi_k * m * quadrature weight

    hs = z_bump * max(1.0, abs(model.sigma_bar))
    up_s = model.with_effective(model.sigma_bar + hs, model.fOm_bar)
    dn_s = model.with_effective(model.sigma_bar - hs, model.fOm_bar)
    hf = z_bump * max(1.0, abs(model.fOm_bar))
    up_f = model.with_effective(model.sigma_bar, model.fOm_bar + hf)
    dn_f = model.with_effective(model.sigma_bar, model.fOm_bar - hf)

    A = np.empty((N, N))
    B = np.empty((N, N))
    Bt = np.empty((N, N))
    for j in range(N):
        n_idx = base + j
        psi_n = lambda xx: model.psi(n_idx, xx)
        d1 = fd_derivative(psi_n, nodes, h, 1)
        d2 = fd_derivative(psi_n, nodes, h, 2)
        d3 = fd_derivative(psi_n, nodes, h, 3)
        # A psi = -V3 a (a^2 psi'')' - V2 a^2 psi'' - U2 a (a psi')' - U1 a psi'
        a_psi = (
            -gp.V3 * a * (2.0 * a * ap * d2 + a**2 * d3)
            - gp.V2 * a**2 * d2
            - gp.U2 * a * (ap * d1 + a * d2)
            - gp.U1 * a * d1
        )
        b_psi = -gp.V1 * a * d1 - gp.V0 * psi_mat[j]

        def dz_psi(xx):
            ds = (np.asarray(up_s.psi(n_idx, xx), float) - np.asarray(dn_s.psi(n_idx, xx), float)) / (2.0 * hs)
            df = (np.asarray(up_f.psi(n_idx, xx), float) - np.asarray(dn_f.psi(n_idx, xx), float)) / (2.0 * hf)
            return gp.sigma_bar_prime * ds + gp.fOm_bar_prime * df

        dz1 = fd_derivative(dz_psi, nodes, h, 1)
        bt_psi = -gp.V1 * a * dz1 - gp.V0 * dz_psi(nodes)

        A[:, j] = weighted_psi @ a_psi
        B[:, j] = weighted_psi @ b_psi
        Bt[:, j] = weighted_psi @ bt_psi
    return MatrixElements(A=A, B=B, Btilde=Bt, source="quadrature")


def weighted_quad_rule(spec: DiffusionSpec, panels: list[tuple[float, float]], points_per_panel: int = 16):
    """Gauss-Legendre nodes over panels with weights including the speed density."""
    gl_x, gl_w = np.polynomial.legendre.leggauss(points_per_panel)
    nodes = []
    weights = []
    for lo, hi in panels:
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        xs = mid + half * gl_x
        nodes.append(xs)
        weights.append(half * gl_w * np.exp(np.asarray(log_speed_density(spec, xs), dtype=float)))
    return np.concatenate(nodes), np.concatenate(weights)
