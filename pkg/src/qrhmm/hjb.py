"""Finite-horizon market-making value functions on inventory lattices.

Market-making quantities use seconds: intensities are per second, horizons in
seconds.  ``PortfolioSpec.sigma`` is quoted in $/sqrt(year) and ``mu`` in $/year,
and both are converted once (``SECONDS_PER_YEAR``) before stepping.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .model import SECONDS_PER_YEAR

BID, ASK = 0, 1
PHI = (1, -1)  # inventory change per fill, in units of the order size
SIDES = ("b", "a")
MAX_LATTICE = 10_000_000
DEFAULT_DT = 0.05


@dataclass(frozen=True)
class AssetSpec:
    tick: float
    size: float
    cap: float
    intensity_bid: float
    intensity_ask: float
    delta: float
    kappa: float = 0.0
    name: str = ""
    price: float = 0.0
    instrument: Optional[object] = None

    def __post_init__(self):
        if not (self.tick > 0 and self.size > 0):
            raise ValueError("tick and size must be positive")
        if self.intensity_bid < 0 or self.intensity_ask < 0 or self.kappa < 0:
            raise ValueError("intensities and penalties must be nonnegative")
        if math.isfinite(self.cap):
            ratio = self.cap / self.size
            if self.cap < 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"cap {self.cap} is not a nonnegative multiple of size {self.size}")

    def intensity(self, side: int) -> float:
        return self.intensity_bid if side == BID else self.intensity_ask

    @property
    def n_levels(self) -> int:
        return int(round(2 * self.cap / self.size)) + 1

    @property
    def levels(self) -> np.ndarray:
        return np.linspace(-self.cap, self.cap, self.n_levels)


@dataclass(frozen=True)
class PortfolioSpec:
    assets: tuple
    kappa: float
    sigma: float
    mu: float = 0.0
    horizon: float = 300.0

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(self.assets))
        if not self.assets:
            raise ValueError("portfolio needs at least one asset")
        if self.kappa < 0 or self.sigma < 0:
            raise ValueError("kappa and sigma must be nonnegative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def d(self) -> int:
        return len(self.assets)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([a.delta for a in self.assets])

    @property
    def sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.assets])

    @property
    def sigma2_per_second(self) -> float:
        return self.sigma**2 / SECONDS_PER_YEAR

    @property
    def mu_per_second(self) -> float:
        return self.mu / SECONDS_PER_YEAR

    def with_kappas(self, kappa: float, asset_kappas: Sequence[float]) -> "PortfolioSpec":
        assets = tuple(replace(a, kappa=k) for a, k in zip(self.assets, asset_kappas))
        return replace(self, kappa=kappa, assets=assets)

    def running_reward(self, q: np.ndarray) -> np.ndarray:
        """Drift minus inventory penalties per second, ``q`` of shape ``(..., d)``."""
        qd = q * self.deltas
        s2 = self.sigma2_per_second
        per_asset = sum(0.5 * a.kappa * s2 * qd[..., j] ** 2 for j, a in enumerate(self.assets))
        net = qd.sum(axis=-1)
        return self.mu_per_second * net - per_asset - 0.5 * self.kappa * s2 * net**2

    def supersolution_rate(self) -> float:
        """Per-second slope of the explicit upper bound on the value function."""
        total = 0.0
        for a in self.assets:
            h0 = a.intensity_bid * a.tick / 2 + a.intensity_ask * a.tick / 2
            total += a.size * h0 + abs(self.mu_per_second * a.delta) * a.cap
        return total


def hamiltonian(p, intensity: float, tick: float):
    """``intensity * 1{p <= tick/2} * (tick/2 - p)``."""
    p = np.asarray(p, dtype=float)
    half = tick / 2
    return intensity * np.where(p <= half, half - p, 0.0)


Hamiltonians = Callable[[np.ndarray, int, int], np.ndarray]


def exact_hamiltonians(spec: PortfolioSpec) -> Hamiltonians:
    def h(p, j, side):
        a = spec.assets[j]
        return hamiltonian(p, a.intensity(side), a.tick)

    return h


@dataclass
class ValueFunctionGrid:
    """Stored time slices of ``v(t, q)``; ``values[k]`` has one axis per asset."""

    spec: PortfolioSpec
    times: np.ndarray
    values: np.ndarray
    dt: float

    @property
    def axes(self) -> list:
        return [a.levels for a in self.spec.assets]

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-6 * max(1.0, self.dt):
            raise ValueError(f"t={t} is not a stored time")
        return k

    def slice_at(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]

    def lattice_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)


def _shift(v: np.ndarray, axis: int, step: int):
    """Values at the neighbour ``index + step`` along ``axis`` and the admissibility mask."""
    out = np.zeros_like(v)
    mask = np.zeros(v.shape, dtype=bool)
    src = [slice(None)] * v.ndim
    dst = [slice(None)] * v.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, None), slice(None, -step)
    else:
        src[axis], dst[axis] = slice(None, step), slice(-step, None)
    out[tuple(dst)] = v[tuple(src)]
    mask[tuple(dst)] = True
    return out, mask


def _check_lattice(spec: PortfolioSpec) -> tuple:
    for a in spec.assets:
        if not math.isfinite(a.cap):
            raise ValueError("solve_full needs finite inventory caps; use the quadratic approximation instead")
    shape = tuple(a.n_levels for a in spec.assets)
    if math.prod(shape) > MAX_LATTICE:
        raise ValueError(f"lattice with {math.prod(shape)} nodes exceeds the {MAX_LATTICE} guard")
    return shape


def _stability_check(spec: PortfolioSpec, dt: float) -> None:
    rate = sum(a.intensity_bid + a.intensity_ask for a in spec.assets)
    if dt * rate > 1.0:
        warnings.warn(
            f"dt * sum of intensities = {dt * rate:.3g} > 1; the explicit scheme is no longer monotone",
            RuntimeWarning,
            stacklevel=3,
        )


def _exact_views(spec: PortfolioSpec, shape: tuple) -> list:
    """Per asset, index pairs (nodes with an admissible neighbour, that neighbour) per side."""
    out = []
    for j, a in enumerate(spec.assets):
        out.append([])
        for side in (BID, ASK):
            lam = a.intensity(side)
            if lam == 0.0 or shape[j] < 2:
                continue
            dst = [slice(None)] * len(shape)
            src = [slice(None)] * len(shape)
            if PHI[side] > 0:
                dst[j], src[j] = slice(None, -1), slice(1, None)
            else:
                dst[j], src[j] = slice(1, None), slice(None, -1)
            out[-1].append((tuple(dst), tuple(src), lam, a.size * a.tick / 2))
    return out


def solve_full(
    spec: PortfolioSpec,
    M: Optional[int] = None,
    hamiltonians: Optional[Hamiltonians] = None,
    store_every: int = 1,
) -> ValueFunctionGrid:
    """Backward explicit Euler for the lattice ODE system, terminal value zero.

    ``M`` defaults to ``ceil(T / 0.05)``.  Slices are kept every ``store_every`` steps
    (plus both endpoints).
    """
    shape = _check_lattice(spec)
    T = spec.horizon
    if M is None:
        M = int(math.ceil(T / DEFAULT_DT - 1e-9))
    if M < 1:
        raise ValueError("M must be at least 1")
    dt = T / M
    _stability_check(spec, dt)

    q = np.stack(np.meshgrid(*[a.levels for a in spec.assets], indexing="ij"), axis=-1)
    reward = spec.running_reward(q)

    keep = sorted(set(range(M, -1, -store_every)) | {0, M})
    keep_set = set(keep)
    slices = {}
    v = np.zeros(shape)
    slices[M] = v.copy()
    views = _exact_views(spec, shape) if hamiltonians is None else None
    pair = np.empty(shape)
    for k in range(M - 1, -1, -1):
        rhs = reward.copy()
        # bid and ask gains of one asset are summed before entering rhs, which keeps
        # the scheme exactly symmetric under q -> -q for symmetric specs
        for j, a in enumerate(spec.assets):
            pair.fill(0.0)
            if views is not None:
                # m H(p) with p = (v - v_nb)/m equals L * max(m D/2 - (v - v_nb), 0)
                for dst, src, lam, gain in views[j]:
                    diff = np.subtract(v[dst], v[src])
                    np.subtract(gain, diff, out=diff)
                    np.maximum(diff, 0.0, out=diff)
                    diff *= lam
                    pair[dst] += diff
            else:
                for side in (BID, ASK):
                    nb, ok = _shift(v, j, PHI[side])
                    p = (v - nb) / a.size
                    pair += np.where(ok, a.size * hamiltonians(p, j, side), 0.0)
            rhs += pair
        v = v + dt * rhs
        if k in keep_set:
            slices[k] = v.copy()
    times = np.array([k * dt for k in keep])
    values = np.stack([slices[k] for k in keep])
    return ValueFunctionGrid(spec=spec, times=times, values=values, dt=dt)


def decisions_from_values(v: np.ndarray, spec: PortfolioSpec) -> np.ndarray:
    """Quote indicators, shape ``(d, 2, *lattice)``, from one value slice."""
    out = np.zeros((spec.d, 2) + v.shape, dtype=bool)
    for j, a in enumerate(spec.assets):
        for side in (BID, ASK):
            nb, ok = _shift(v, j, PHI[side])
            out[j, side] = ok & ((v - nb) / a.size <= a.tick / 2)
    return out


def extract_controls(grid: ValueFunctionGrid, t: float) -> np.ndarray:
    """Optimal quote indicators at time ``t``: ``out[j, side]`` over the lattice."""
    return decisions_from_values(grid.slice_at(t), grid.spec)


@dataclass
class RiskValueGrid:
    spec: PortfolioSpec
    r: np.ndarray
    times: np.ndarray
    values: np.ndarray
    dt: float
    bound: float

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-6 * max(1.0, self.dt):
            raise ValueError(f"t={t} is not a stored time")
        return k

    def slice_at(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]

    @property
    def h(self) -> float:
        return float(self.r[1] - self.r[0])


def _risk_shifts(spec: PortfolioSpec, r: np.ndarray, R: float):
    tol = 1e-9 * max(1.0, R)
    out = []
    for j, a in enumerate(spec.assets):
        for side in (BID, ASK):
            target = r + PHI[side] * a.size * a.delta
            ok = (target >= -R - tol) & (target <= R + tol)
            out.append((j, side, a.size, np.clip(target, -R, R), ok))
    return out


def solve_portfolio(
    spec: PortfolioSpec,
    R: float,
    h: float,
    M: Optional[int] = None,
    hamiltonians: Optional[Hamiltonians] = None,
    store_every: int = 1,
) -> RiskValueGrid:
    """Backward Euler for the net-risk value function ``theta(t, r)`` on ``[-R, R]``.

    Shifted values ``theta(r + phi m delta)`` are linearly interpolated on the grid.
    """
    if any(a.kappa != 0 for a in spec.assets):
        raise ValueError("the net-risk reduction needs all per-asset penalties equal to zero")
    if not (R > 0 and h > 0):
        raise ValueError("R and h must be positive")
    n_cells = max(1, int(round(2 * R / h)))
    r = np.linspace(-R, R, n_cells + 1)
    h_eff = r[1] - r[0]
    smallest = min(abs(a.size * a.delta) for a in spec.assets)
    if h_eff > smallest:
        warnings.warn(f"grid spacing {h_eff:.3g} exceeds the smallest risk shift {smallest:.3g}", RuntimeWarning, stacklevel=2)
    T = spec.horizon
    if M is None:
        M = int(math.ceil(T / DEFAULT_DT - 1e-9))
    dt = T / M
    _stability_check(spec, dt)
    if hamiltonians is None:
        hamiltonians = exact_hamiltonians(spec)
    s2 = spec.sigma2_per_second
    reward = spec.mu_per_second * r - 0.5 * spec.kappa * s2 * r**2
    shifts = _risk_shifts(spec, r, R)

    keep = sorted(set(range(M, -1, -store_every)) | {0, M})
    keep_set = set(keep)
    slices = {M: np.zeros_like(r)}
    theta = np.zeros_like(r)
    for k in range(M - 1, -1, -1):
        rhs = reward.copy()
        for j, side, m, target, ok in shifts:
            nb = np.interp(target, r, theta)
            p = (theta - nb) / m
            rhs += np.where(ok, m * hamiltonians(p, j, side), 0.0)
        theta = theta + dt * rhs
        if k in keep_set:
            slices[k] = theta.copy()
    times = np.array([k * dt for k in keep])
    return RiskValueGrid(spec=spec, r=r, times=times, values=np.stack([slices[k] for k in keep]), dt=dt, bound=R)


def portfolio_controls(grid: RiskValueGrid, t: float) -> np.ndarray:
    """Quote indicators ``out[j, side]`` over the risk grid at time ``t``."""
    theta = grid.slice_at(t)
    spec = grid.spec
    out = np.zeros((spec.d, 2, grid.r.size), dtype=bool)
    for j, side, m, target, ok in _risk_shifts(spec, grid.r, grid.bound):
        nb = np.interp(target, grid.r, theta)
        out[j, side] = ok & ((theta - nb) / m <= spec.assets[j].tick / 2)
    return out
