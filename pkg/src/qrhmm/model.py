"""Multi-factor quadratic rough Heston model: kernel approximation and simulation.

Time is measured in years throughout this module.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from . import rng

SECONDS_PER_YEAR = 365.0 * 24.0 * 3600.0
CHUNK = 512


@dataclass(frozen=True)
class FractionalKernelApprox:
    """Sum-of-exponentials surrogate ``sum_i c_i exp(-gamma_i t)`` of ``t**(alpha-1)/Gamma(alpha)``."""

    alpha: float
    c: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        if c.ndim != 1 or c.shape != g.shape or c.size == 0:
            raise ValueError("c and gamma must be non-empty vectors of equal length")
        if np.any(c <= 0):
            raise ValueError("kernel weights must be positive")
        if np.any(g < 0) or np.any(np.diff(g) <= 0):
            raise ValueError("kernel rates must be nonnegative and strictly increasing")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "gamma", g)

    @property
    def n(self) -> int:
        return self.c.size

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.gamma)) @ self.c

    def exact(self, t):
        t = np.asarray(t, dtype=float)
        return t ** (self.alpha - 1.0) / gamma_fn(self.alpha)

    def l2_error(self, lo: float, hi: float) -> float:
        """L2 distance between the surrogate and the power-law kernel on ``[lo, hi]``."""
        breaks = [x for x in np.geomspace(max(lo, 1e-12), hi, 12)[1:-1]]
        val, _ = quad(lambda s: (self.exact(s) - self(s)) ** 2, lo, hi, points=breaks, limit=400)
        return float(np.sqrt(val))


def build_kernel_approx(alpha: float, n: int, horizon: float = 1.0) -> FractionalKernelApprox:
    """Geometric-partition quadrature of the power-law kernel.

    Uses ``K(t) = int_0^inf exp(-g t) mu(dg)`` with ``mu(dg) = g**-alpha / (Gamma(alpha) Gamma(1-alpha)) dg``.
    The rate axis is split at ``0 < eta_1 < ... < eta_n`` with ``eta_i = r**(i-1) / horizon`` and
    ``r = 1 + 10 n**-0.9``; each bin contributes its mass as weight and its mean rate as node.
    """
    if not 0.5 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (1/2, 1), got {alpha}")
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n = int(n)
    ratio = 1.0 + 10.0 * n ** -0.9
    edges = np.concatenate([[0.0], ratio ** np.arange(n) / horizon])
    norm = np.sin(np.pi * alpha) / np.pi  # 1 / (Gamma(alpha) Gamma(1 - alpha))
    mass = norm * np.diff(edges ** (1.0 - alpha)) / (1.0 - alpha)
    first_moment = norm * np.diff(edges ** (2.0 - alpha)) / (2.0 - alpha)
    return FractionalKernelApprox(alpha=alpha, c=mass, gamma=first_moment / mass)


@dataclass(frozen=True)
class QrhParams:
    lam: float
    eta: float
    a: float
    b: float
    c: float
    mu: float = 0.0

    def __post_init__(self):
        # a = 0 is admitted: it yields constant variance and closed-form test oracles
        if self.a < 0 or self.c <= 0 or self.lam < 0 or self.eta < 0:
            raise ValueError("need a >= 0, c > 0, lam >= 0, eta >= 0")


@dataclass(frozen=True)
class ModelState:
    t: float
    S: float
    Z: np.ndarray

    def __post_init__(self):
        if not self.S > 0:
            raise ValueError("spot must be positive")
        object.__setattr__(self, "Z", np.asarray(self.Z, dtype=float).copy())


def aggregate_factor(kernel: FractionalKernelApprox, Z: np.ndarray) -> np.ndarray:
    """``sum_i c_i Z^i`` over the last axis.

    Accumulated elementwise in a fixed order so that a path's value never depends on
    the shape of the batch it was computed in.
    """
    Z = np.asarray(Z, dtype=float)
    out = kernel.c[0] * Z[..., 0]
    for i in range(1, kernel.n):
        out = out + kernel.c[i] * Z[..., i]
    return out


def instantaneous_variance(params: QrhParams, kernel: FractionalKernelApprox, Z) -> np.ndarray | float:
    Z = np.asarray(Z, dtype=float)
    if Z.shape[-1] != kernel.n:
        raise ValueError(f"Z has {Z.shape[-1]} factors, kernel has {kernel.n}")
    zagg = aggregate_factor(kernel, Z)
    v = params.a * (zagg - params.b) ** 2 + params.c
    return float(v) if np.ndim(v) == 0 else v


def _phi1(x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x)
    nz = x > 1e-12
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    return out


class FactorStepper:
    """One time step of the factor system and of log-spot, shared by simulation and pricing.

    The linear decay ``-gamma_i Z^i`` is integrated exactly over the step and the
    remaining drift and noise are frozen at the left point (exponential Euler).  As
    ``gamma_i dt -> 0`` this is the plain Euler-Maruyama step, and unlike it stays
    stable when ``gamma_max dt`` is large.
    """

    def __init__(self, params: QrhParams, kernel: FractionalKernelApprox, dt: float):
        self.params = params
        self.kernel = kernel
        self.dt = dt
        self.sqdt = np.sqrt(dt)
        x = kernel.gamma * dt
        self.decay = np.exp(-x)
        self.gain = _phi1(x) * dt

    def variance(self, Z):
        p = self.params
        return p.a * (aggregate_factor(self.kernel, Z) - p.b) ** 2 + p.c

    def step(self, Z, xi, logS=None, S=None):
        """Advance ``Z`` (and ``logS`` when given) with standard normals ``xi``.

        Returns ``(Z_next, logS_next, V_left)``.
        """
        p = self.params
        zagg = aggregate_factor(self.kernel, Z)
        V = p.a * (zagg - p.b) ** 2 + p.c
        vol = np.sqrt(V)
        dW = self.sqdt * xi
        forcing = -p.lam * zagg + p.eta * vol * dW / self.dt
        Z_next = Z * self.decay + forcing[..., None] * self.gain
        logS_next = None
        if logS is not None:
            drift = -0.5 * V
            if p.mu != 0.0:
                drift = drift + p.mu / S
            logS_next = logS + drift * self.dt + vol * dW
        return Z_next, logS_next, V


@dataclass
class SimulatedPath:
    t: np.ndarray
    S: np.ndarray
    Z: Optional[np.ndarray]
    V: Optional[np.ndarray]
    seed: int
    index: int

    def state(self, k: int) -> ModelState:
        if self.Z is None:
            raise ValueError("factors were not recorded for this path")
        return ModelState(float(self.t[k]), float(self.S[k]), self.Z[k])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


@dataclass
class PathBatch:
    """Paths on a common uniform grid.

    ``S`` and ``V`` have shape ``(n_paths, n_nodes)``; ``Z`` (if recorded) has shape
    ``(n_paths, n_factor_nodes, n)`` sampled every ``factor_stride`` nodes.
    """

    t: np.ndarray
    S: np.ndarray
    V: np.ndarray
    Z: Optional[np.ndarray]
    seed: int
    factor_stride: int = 1
    first_index: int = 0

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def n_paths(self) -> int:
        return self.S.shape[0]

    def __len__(self) -> int:
        return self.n_paths

    def __getitem__(self, i: int) -> SimulatedPath:
        Z = None
        if self.Z is not None and self.factor_stride == 1:
            Z = self.Z[i]
        return SimulatedPath(self.t, self.S[i], Z, self.V[i], self.seed, self.first_index + i)

    def __iter__(self) -> Iterator[SimulatedPath]:
        return (self[i] for i in range(self.n_paths))

    def factors_at(self, k: int) -> np.ndarray:
        if self.Z is None or k % self.factor_stride:
            raise ValueError(f"factors not recorded at node {k}")
        return self.Z[:, k // self.factor_stride]


def _simulate_chunk(stepper, state0, n_steps, seed, indices, factor_stride, keep_factors):
    P = len(indices)
    n = stepper.kernel.n
    xi = rng.path_normals(seed, rng.PRICE_PATH, indices, n_steps)
    S = np.empty((P, n_steps + 1))
    V = np.empty((P, n_steps + 1))
    Zs = None
    if keep_factors:
        Zs = np.empty((P, n_steps // factor_stride + 1, n))
    Z = np.broadcast_to(state0.Z, (P, n)).copy()
    logS = np.full(P, np.log(state0.S))
    S[:, 0] = state0.S
    for k in range(n_steps):
        if keep_factors and k % factor_stride == 0:
            Zs[:, k // factor_stride] = Z
        Z, logS, V[:, k] = stepper.step(Z, xi[k], logS, S[:, k])
        S[:, k + 1] = np.exp(logS)
    V[:, n_steps] = stepper.variance(Z)
    if keep_factors and n_steps % factor_stride == 0:
        Zs[:, n_steps // factor_stride] = Z
    return S, V, Zs


def simulate_paths(
    params: QrhParams,
    kernel: FractionalKernelApprox,
    state0: ModelState,
    horizon: float,
    dt: float,
    n_paths: int,
    seed: int,
    *,
    keep_factors: bool = True,
    factor_stride: int = 1,
    workers: int = 1,
    first_index: int = 0,
) -> PathBatch:
    """Simulate ``n_paths`` independent paths of ``(S, Z^1..Z^n)`` from ``state0``.

    Path ``i`` uses the substream ``(seed, PRICE_PATH, first_index + i)``; results are
    bit-identical for any ``workers`` value.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if horizon < dt * (1 - 1e-9):
        raise ValueError("horizon must be at least one step")
    if state0.Z.shape != (kernel.n,):
        raise ValueError("state0.Z does not match the kernel size")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError("horizon must be an integer multiple of dt")
    stepper = FactorStepper(params, kernel, dt)
    indices = np.arange(first_index, first_index + n_paths)
    chunks = [indices[i : i + CHUNK] for i in range(0, n_paths, CHUNK)]

    def run(idx):
        return _simulate_chunk(stepper, state0, n_steps, seed, idx, factor_stride, keep_factors)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(idx) for idx in chunks]
    S = np.concatenate([p[0] for p in parts])
    V = np.concatenate([p[1] for p in parts])
    Z = np.concatenate([p[2] for p in parts]) if keep_factors else None
    t = state0.t + dt * np.arange(n_steps + 1)
    return PathBatch(t=t, S=S, V=V, Z=Z, seed=seed, factor_stride=factor_stride, first_index=first_index)


def integrate_deterministic_variance(
    params: QrhParams, kernel: FractionalKernelApprox, Z0, horizon: float
) -> float:
    """``int_0^horizon V ds`` when ``eta = 0`` (the factor system is a linear ODE)."""
    from scipy.linalg import expm

    M = -np.diag(kernel.gamma) - params.lam * np.outer(np.ones(kernel.n), kernel.c)
    Z0 = np.asarray(Z0, dtype=float)

    def v(s):
        z = expm(M * s) @ Z0
        return params.a * (kernel.c @ z - params.b) ** 2 + params.c

    return quad(v, 0.0, horizon, limit=200)[0]
