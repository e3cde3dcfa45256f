"""Quadratic surrogate Hamiltonians and the closed-form long-horizon value function.

Replacing each Hamiltonian by a parabola tangent at zero makes the value function
quadratic in inventory, ``v(q) = -q'Aq - q'B - C``.  ``asymptotic_solution`` gives the
``T -> infinity`` limits of ``A`` and ``B``; ``C`` only shifts the level and is not
computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .hjb import ASK, BID, PHI, Hamiltonians, PortfolioSpec

PSD_REJECT = 1e-8
PINV_RCOND = 1e-12


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root; roundoff-negative eigenvalues are clipped to zero."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(np.abs(M).max(), 1e-300)
    if np.abs(M - M.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    if w.min() < -PSD_REJECT * np.abs(w).max():
        raise ValueError(f"matrix is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def pinv(M: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(np.asarray(M, dtype=float), rcond=PINV_RCOND)


@dataclass(frozen=True)
class QuadraticHamiltonianSpec:
    curvature: tuple

    def __post_init__(self):
        object.__setattr__(self, "curvature", tuple(float(x) for x in self.curvature))
        if any(not a > 0 for a in self.curvature):
            raise ValueError("curvatures must be positive")

    @classmethod
    def default(cls, spec: PortfolioSpec) -> "QuadraticHamiltonianSpec":
        """Curvature ``1 / (4 tick)`` for every asset."""
        return cls(tuple(1.0 / (4.0 * a.tick) for a in spec.assets))


def approx_hamiltonian(p, intensity: float, tick: float, curvature: float):
    p = np.asarray(p, dtype=float)
    return intensity * (0.5 * curvature * p**2 - p + 0.5 * tick)


def quadratic_hamiltonians(spec: PortfolioSpec, qspec: QuadraticHamiltonianSpec) -> Hamiltonians:
    def h(p, j, side):
        a = spec.assets[j]
        return approx_hamiltonian(p, a.intensity(side), a.tick, qspec.curvature[j])

    return h


@dataclass(frozen=True)
class AsymptoticSolution:
    A: np.ndarray
    B: np.ndarray
    sigma: float
    kappa: float
    asset_kappas: tuple
    deltas: tuple
    mu: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if np.abs(A - A.T).max() > 1e-10 * max(np.abs(A).max(), 1e-300):
            raise ValueError("A is not symmetric")

    def value(self, q: np.ndarray, C: float = 0.0) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return -np.einsum("...i,ij,...j->...", q, self.A, q) - q @ self.B - C


def _intensity_matrices(spec, qspec):
    lb = np.array([a.intensity_bid for a in spec.assets])
    la = np.array([a.intensity_ask for a in spec.assets])
    m = spec.sizes
    alpha = np.array(qspec.curvature)
    d_plus = (lb + la) * alpha * m
    d_minus = (lb - la) * alpha * m
    v_minus = (la - lb) * m
    return d_plus, d_minus, v_minus


def asymptotic_solution(
    spec: PortfolioSpec, qspec: Optional[QuadraticHamiltonianSpec] = None
) -> AsymptoticSolution:
    """Long-horizon limits of ``A`` and ``B`` for the quadratic-Hamiltonian problem.

    With ``Sigma = diag(kappa_j delta_j^2 / kappa) + delta delta'`` and ``D+`` the
    diagonal of ``(L_b + L_a) * curvature * size``::

        Gamma = D+^-1/2 (D+^1/2 Sigma D+^1/2)^1/2 D+^-1/2,     A = sigma/2 sqrt(kappa) Gamma
        Ahat  = sigma sqrt(kappa) (D+^1/2 Sigma D+^1/2)^1/2    (= 2 D+^1/2 A D+^1/2)
        B = -D+^-1/2 Ahat^+ D+^1/2 delta mu - D+^-1/2 Ahat Ahat^+ D+^-1/2 (V- + D- diag(size) diag(A))

    Per-second units: ``sigma`` and ``mu`` are converted from their annual quotes.
    """
    if qspec is None:
        qspec = QuadraticHamiltonianSpec.default(spec)
    if not spec.kappa > 0:
        raise ValueError("the closed form needs kappa > 0; solve per-asset problems on the lattice instead")
    if len(qspec.curvature) != spec.d:
        raise ValueError("one curvature per asset is required")
    d_plus, d_minus, v_minus = _intensity_matrices(spec, qspec)
    if np.any(d_plus <= 0):
        raise ValueError("every asset needs a positive total intensity")
    delta = spec.deltas
    kappa = spec.kappa
    Sigma = np.diag([a.kappa * a.delta**2 / kappa for a in spec.assets]) + np.outer(delta, delta)
    sigma = math.sqrt(spec.sigma2_per_second)
    mu = spec.mu_per_second

    root = np.sqrt(d_plus)
    inner = psd_sqrt(root[:, None] * Sigma * root[None, :])
    Gamma = inner / np.outer(root, root)
    A = 0.5 * sigma * math.sqrt(kappa) * Gamma
    A = 0.5 * (A + A.T)
    A_hat = sigma * math.sqrt(kappa) * inner
    A_hat_pinv = pinv(A_hat)
    drift_term = (A_hat_pinv @ (root * delta * mu)) / root
    asym = v_minus + d_minus * spec.sizes * np.diag(A)
    asym_term = (A_hat @ A_hat_pinv @ (asym / root)) / root
    B = -drift_term - asym_term
    return AsymptoticSolution(
        A=A,
        B=B,
        sigma=spec.sigma,
        kappa=kappa,
        asset_kappas=tuple(a.kappa for a in spec.assets),
        deltas=tuple(delta),
        mu=spec.mu,
    )


def greedy_margin(q: np.ndarray, j: int, side: int, sol: AsymptoticSolution, spec: PortfolioSpec) -> np.ndarray:
    """``2 phi (Aq)_j + m A_jj + phi B_j``: the per-unit value lost by one fill."""
    q = np.asarray(q, dtype=float)
    phi = PHI[side]
    m = spec.assets[j].size
    return 2 * phi * (q @ sol.A[j]) + m * sol.A[j, j] + phi * sol.B[j]


def greedy_decision(q, j: int, side: int, sol: AsymptoticSolution, spec: PortfolioSpec):
    """1 iff the post-fill inventory is admissible and the margin is at most half a tick."""
    q = np.asarray(q, dtype=float)
    a = spec.assets[j]
    after = q[..., j] + PHI[side] * a.size
    ok = np.abs(after) <= a.cap + 1e-9 * a.size
    res = ok & (greedy_margin(q, j, side, sol, spec) <= a.tick / 2)
    return res.astype(int) if res.ndim else int(res)


def greedy_map(sol: AsymptoticSolution, spec: PortfolioSpec) -> np.ndarray:
    """Greedy indicators ``out[j, side]`` over the whole inventory lattice."""
    q = np.stack(np.meshgrid(*[a.levels for a in spec.assets], indexing="ij"), axis=-1)
    out = np.zeros((spec.d, 2) + q.shape[:-1], dtype=bool)
    for j in range(spec.d):
        for side in (BID, ASK):
            out[j, side] = greedy_decision(q, j, side, sol, spec).astype(bool)
    return out


def portfolio_coefficient(spec: PortfolioSpec, qspec: Optional[QuadraticHamiltonianSpec] = None) -> float:
    """Scalar curvature of the net-risk value function, ``sigma/2 sqrt(kappa / (2 sum delta^2 L m curvature))``."""
    if qspec is None:
        qspec = QuadraticHamiltonianSpec.default(spec)
    total = 0.0
    for a, alpha in zip(spec.assets, qspec.curvature):
        if a.intensity_bid != a.intensity_ask:
            raise ValueError("the net-risk rule needs symmetric intensities")
        total += a.delta**2 * a.intensity_bid * a.size * alpha
    return 0.5 * math.sqrt(spec.sigma2_per_second) * math.sqrt(spec.kappa / (2.0 * total))


def portfolio_rule(r, j: int, side: int, spec: PortfolioSpec, R: float, qspec: Optional[QuadraticHamiltonianSpec] = None):
    """Greedy quote indicator driven by net risk ``r`` only.

    1 iff ``r + phi m delta`` stays in ``[-R, R]`` and ``2 phi D r delta + D m delta^2 <= tick / 2``.
    """
    coef = portfolio_coefficient(spec, qspec)
    a = spec.assets[j]
    r = np.asarray(r, dtype=float)
    phi = PHI[side]
    shift = phi * a.size * a.delta
    ok = np.abs(r + shift) <= R * (1 + 1e-12)
    res = ok & (2 * phi * coef * r * a.delta + coef * a.size * a.delta**2 <= a.tick / 2)
    return res.astype(int) if res.ndim else int(res)


def fit_quadratic(points: np.ndarray, values: np.ndarray):
    """Least-squares fit of ``-q'Aq - B'q - C`` to lattice values; returns ``(A, B, C)``."""
    q = np.asarray(points, dtype=float).reshape(-1, points.shape[-1])
    y = np.asarray(values, dtype=float).ravel()
    d = q.shape[1]
    pairs = [(i, k) for i in range(d) for k in range(i, d)]
    cols = [q[:, i] * q[:, k] * (1.0 if i == k else 2.0) for i, k in pairs]
    cols += [q[:, i] for i in range(d)] + [np.ones(len(y))]
    X = np.stack(cols, axis=1)
    scale = np.abs(X).max(axis=0)
    coef, *_ = np.linalg.lstsq(X / scale, -y, rcond=None)
    coef = coef / scale
    A = np.zeros((d, d))
    for (i, k), c in zip(pairs, coef[: len(pairs)]):
        A[i, k] = A[k, i] = c
    B = coef[len(pairs) : len(pairs) + d]
    return A, B, coef[-1]
