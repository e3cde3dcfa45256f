"""Monte-Carlo pricing and hedge ratios for SPX, VIX futures and SPX/VIX vanillas.

Zero rates.  Times are in years; ``Instrument.expiry`` is an absolute model time.
Batched helpers (``*_batch``) take spot ``S`` of shape ``(B,)`` and factors ``Z`` of
shape ``(B, n)`` and evaluate every state against the same random numbers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import rng
from .model import FactorStepper, FractionalKernelApprox, ModelState, PathBatch, QrhParams

log = logging.getLogger(__name__)

VIX_WINDOW = 30.0 / 365.0


class Kind(str, Enum):
    UNDERLYING = "Underlying"
    VIX_FUTURE = "VixFuture"
    SPX_CALL = "SpxCall"
    SPX_PUT = "SpxPut"
    VIX_CALL = "VixCall"
    VIX_PUT = "VixPut"


@dataclass(frozen=True)
class Instrument:
    kind: Kind
    expiry: float = 0.0
    strike: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is not Kind.UNDERLYING and not self.expiry > 0:
            raise ValueError("derivatives need a positive expiry")
        if self.kind in (Kind.SPX_CALL, Kind.SPX_PUT, Kind.VIX_CALL, Kind.VIX_PUT):
            if self.strike is None or self.strike < 0:
                raise ValueError(f"{self.kind.value} needs a nonnegative strike")

    @property
    def on_vix(self) -> bool:
        return self.kind in (Kind.VIX_FUTURE, Kind.VIX_CALL, Kind.VIX_PUT)


@dataclass(frozen=True)
class McConfig:
    n_outer: int = 4000
    n_inner: int = 100
    dt: float = 1.0 / 730.0
    bump_rel: float = 1e-2
    bump_abs: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_outer < 1 or self.n_inner < 1:
            raise ValueError("Monte-Carlo counts must be at least 1")
        if not (self.dt > 0 and self.bump_rel > 0 and self.bump_abs > 0):
            raise ValueError("dt and bumps must be positive")


@dataclass(frozen=True)
class PriceEstimate:
    value: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class DeltaEstimate:
    """Hedge ratio with its Monte-Carlo standard error.

    ``dP_dZ`` holds one partial per factor, or a single summed entry for the
    directional method.
    """

    value: float
    std_error: float
    dP_dS: float
    dP_dZ: np.ndarray

    def __float__(self) -> float:
        return self.value


def _grid(tau: float, dt: float) -> tuple[int, float]:
    n = max(1, int(np.ceil(tau / dt - 1e-9)))
    return n, tau / n


def _evolve(params, kernel, S, Z, tau, xi, need_spot=True, need_ivar=False):
    """Push states forward by ``tau`` using normals ``xi`` of shape ``(n_steps, *paths)``.

    ``S`` has shape ``batch`` and ``Z`` shape ``batch + (n,)``; ``batch`` must
    broadcast against ``paths``.
    """
    n_steps = xi.shape[0]
    stepper = FactorStepper(params, kernel, tau / n_steps)
    shape = np.broadcast_shapes(np.shape(S), np.shape(Z)[:-1], xi.shape[1:])
    Z = np.broadcast_to(Z, shape + (kernel.n,)).copy()
    logS = np.broadcast_to(np.log(S), shape).copy() if need_spot else None
    ivar = np.zeros(shape) if need_ivar else None
    for k in range(n_steps):
        Sk = np.exp(logS) if (need_spot and params.mu != 0.0) else None
        Z, logS, V = stepper.step(Z, xi[k], logS, Sk)
        if need_ivar:
            ivar += V * stepper.dt
    S_T = np.exp(logS) if need_spot else None
    return S_T, Z, ivar


def _integrated_variance(params, kernel, Z, window, mc, xi=None):
    """Samples of ``int_0^window V`` for every state in ``Z[..., n]``.

    ``xi`` (``(n_steps, *Z.shape[:-1], n_inner)``) defaults to one shared block of normals.
    """
    if xi is None:
        n_steps, _ = _grid(window, mc.dt)
        xi = rng.substream(mc.seed, rng.PRICING_INNER).standard_normal((n_steps, mc.n_inner))
    _, _, ivar = _evolve(params, kernel, 1.0, Z[..., None, :], window, xi, need_spot=False, need_ivar=True)
    return ivar


def forward_integrated_variance(
    state: ModelState,
    params: QrhParams,
    kernel: FractionalKernelApprox,
    window: float,
    mc: McConfig,
) -> PriceEstimate:
    """Estimate ``E_t[int_t^{t+window} V ds]`` (equal to ``-2 E_t[log S_{t+window}/S_t]``)."""
    if not window > 0:
        raise ValueError("window must be positive")
    n_steps, _ = _grid(window, mc.dt)
    xi = rng.substream(mc.seed, rng.PRICING_INNER).standard_normal((n_steps, mc.n_outer))
    samples = _integrated_variance(params, kernel, state.Z[None, :], window, mc, xi=xi[:, None, :])[0]
    return PriceEstimate(float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0, samples.size)


def _vix_from_ivar(ivar, window, convention):
    if np.any(ivar < 0):
        raise ArithmeticError("negative integrated variance estimate")
    if convention == "annualized":
        return 100.0 * np.sqrt(ivar / window)
    if convention == "literal":
        return 100.0 * np.sqrt(ivar)
    raise ValueError(f"unknown VIX convention {convention!r}")


def vix(
    state: ModelState,
    params: QrhParams,
    kernel: FractionalKernelApprox,
    window: float,
    mc: McConfig,
    convention: str = "annualized",
) -> PriceEstimate:
    """VIX level from the forward integrated variance.

    The standard error is propagated from the variance estimate by the delta method.
    """
    est = forward_integrated_variance(state, params, kernel, window, mc)
    level = float(_vix_from_ivar(np.array(est.value), window, convention))
    se = 0.0 if est.value == 0 else 0.5 * level * est.std_error / est.value
    return PriceEstimate(level, se, est.n_samples)


def _payoff(kind: Kind, strike, x):
    if kind in (Kind.SPX_CALL, Kind.VIX_CALL):
        return np.maximum(x - strike, 0.0)
    if kind in (Kind.SPX_PUT, Kind.VIX_PUT):
        return np.maximum(strike - x, 0.0)
    return x


def price_samples_batch(
    instrument: Instrument,
    t: float,
    S: np.ndarray,
    Z: np.ndarray,
    params: QrhParams,
    kernel: FractionalKernelApprox,
    mc: McConfig,
    window: float = VIX_WINDOW,
    convention: str = "annualized",
) -> np.ndarray:
    """Per-outer-path discounted payoff samples, shape ``(B, n_outer)``.

    All ``B`` states share the same normals (common random numbers).
    """
    S = np.atleast_1d(np.asarray(S, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    B = S.shape[0]
    kind = instrument.kind
    if kind is Kind.UNDERLYING:
        return np.repeat(S[:, None], 1, axis=1)
    tau = instrument.expiry - t
    if tau < -1e-12:
        raise ValueError(f"instrument expired at {instrument.expiry}, state time {t}")
    tau = max(tau, 0.0)
    if not instrument.on_vix:
        if tau == 0.0:
            return _payoff(kind, instrument.strike, S)[:, None]
        n_steps, _ = _grid(tau, mc.dt)
        xi = rng.substream(mc.seed, rng.PRICING).standard_normal((n_steps, mc.n_outer))
        S_T, _, _ = _evolve(params, kernel, S[:, None], Z[:, None, :], tau, xi)
        return _payoff(kind, instrument.strike, S_T)

    # nested: outer to expiry, inner over the VIX window from each outer terminal state
    n_in, _ = _grid(window, mc.dt)
    inner_gen = rng.substream(mc.seed, rng.PRICING_INNER)
    if tau == 0.0:
        Z_T = Z[:, None, :]
        n_outer = 1
    else:
        n_steps, _ = _grid(tau, mc.dt)
        xi = rng.substream(mc.seed, rng.PRICING).standard_normal((n_steps, mc.n_outer))
        _, Z_T, _ = _evolve(params, kernel, 1.0, Z[:, None, :], tau, xi, need_spot=False)
        n_outer = mc.n_outer
    out = np.empty((B, n_outer))
    # block sizes depend only on (n_inner, n) so the inner streams do not move with B
    block = max(1, 2_000_000 // (mc.n_inner * kernel.n))
    for lo in range(0, n_outer, block):
        hi = min(n_outer, lo + block)
        xi_in = inner_gen.standard_normal((n_in, hi - lo, mc.n_inner))
        bb = max(1, 4_000_000 // ((hi - lo) * mc.n_inner * kernel.n))
        for b0 in range(0, B, bb):
            ivar = _integrated_variance(params, kernel, Z_T[b0 : b0 + bb, lo:hi], window, mc, xi=xi_in)
            level = _vix_from_ivar(ivar.mean(axis=-1), window, convention)
            out[b0 : b0 + bb, lo:hi] = _payoff(kind, instrument.strike, level)
    return out


def _estimate(samples: np.ndarray) -> PriceEstimate:
    n = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return PriceEstimate(float(samples.mean()), se, n)


def price(
    instrument: Instrument,
    state: ModelState,
    params: QrhParams,
    kernel: FractionalKernelApprox,
    mc: McConfig,
    window: float = VIX_WINDOW,
    convention: str = "annualized",
) -> PriceEstimate:
    if instrument.kind is Kind.UNDERLYING:
        return PriceEstimate(float(state.S), 0.0, 1)
    if instrument.expiry < state.t - 1e-12:
        raise ValueError("instrument expiry is in the past")
    samples = price_samples_batch(instrument, state.t, [state.S], state.Z[None], params, kernel, mc, window, convention)
    return _estimate(samples[0])


def delta_samples_batch(
    instrument: Instrument,
    t: float,
    S: np.ndarray,
    Z: np.ndarray,
    params: QrhParams,
    kernel: FractionalKernelApprox,
    mc: McConfig,
    method: str = "componentwise",
    window: float = VIX_WINDOW,
    convention: str = "annualized",
):
    """Per-path hedge-ratio samples, shape ``(B, n_outer)``, plus mean partials.

    ``dP/dS`` and ``dP/dZ^i`` are central differences under common random numbers;
    they combine as ``dP/dS + eta/S * sum_i dP/dZ^i``.  ``method="directional"`` bumps
    all factors together, which estimates ``sum_i dP/dZ^i`` with two evaluations
    instead of ``2n``.
    """
    S = np.atleast_1d(np.asarray(S, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    B, n = Z.shape
    if instrument.kind is Kind.UNDERLYING:
        return np.ones((B, 1)), np.ones(B), np.zeros((B, n))
    hS = mc.bump_rel * S
    hZ = mc.bump_abs
    if method == "componentwise":
        dirs = np.eye(n)
    elif method == "directional":
        dirs = np.ones((1, n))
    else:
        raise ValueError(f"unknown delta method {method!r}")
    m = dirs.shape[0]
    # bumped states: S+, S-, then Z+dir_k, Z-dir_k for every direction
    S_b = np.concatenate([S + hS, S - hS, np.tile(S, 2 * m)])
    Z_b = np.concatenate([Z, Z] + [Z + hZ * d for d in dirs] + [Z - hZ * d for d in dirs])
    if instrument.on_vix:
        # VIX payoffs do not depend on S: dP/dS is exactly zero
        S_b[: 2 * B] = np.concatenate([S, S])
    P = price_samples_batch(instrument, t, S_b, Z_b, params, kernel, mc, window, convention)
    dS = (P[:B] - P[B : 2 * B]) / (2.0 * hS[:, None])
    up = P[2 * B : 2 * B + m * B].reshape(m, B, -1)
    dn = P[2 * B + m * B :].reshape(m, B, -1)
    dZ = (up - dn) / (2.0 * hZ)  # (m, B, paths)
    samples = dS + params.eta / S[:, None] * dZ.sum(axis=0)
    # for "directional" the single column is the sum over factors
    return samples, dS.mean(axis=-1), dZ.mean(axis=-1).T


def delta(
    instrument: Instrument,
    state: ModelState,
    params: QrhParams,
    kernel: FractionalKernelApprox,
    mc: McConfig,
    method: str = "componentwise",
    window: float = VIX_WINDOW,
    convention: str = "annualized",
) -> DeltaEstimate:
    if instrument.kind is not Kind.UNDERLYING and instrument.expiry < state.t - 1e-12:
        raise ValueError("instrument expiry is in the past")
    samples, dS, dZ = delta_samples_batch(
        instrument, state.t, [state.S], state.Z[None], params, kernel, mc, method, window, convention
    )
    est = _estimate(samples[0])
    if instrument.kind is Kind.UNDERLYING:
        return DeltaEstimate(1.0, 0.0, 1.0, np.zeros(kernel.n))
    if est.std_error > 0 and abs(est.value) < est.std_error:
        log.info("delta estimate %.4g is below its standard error %.4g", est.value, est.std_error)
    return DeltaEstimate(est.value, est.std_error, float(dS[0]), dZ[0])


@dataclass
class HedgeReport:
    """Hedge P&L against price change, per path, on the rebalance grid.

    ``J_delta`` and ``J_price`` have shape ``(n_paths, len(t))``.
    """

    t: np.ndarray
    J_delta: np.ndarray
    J_price: np.ndarray
    deltas: np.ndarray

    @property
    def tracking_error(self) -> np.ndarray:
        return self.J_delta - self.J_price

    def summary(self) -> dict:
        err = self.tracking_error[:, -1]
        jp = self.J_price[:, -1]
        return {
            "n_paths": int(err.size),
            "std_tracking": float(err.std(ddof=1)) if err.size > 1 else 0.0,
            "std_price_change": float(jp.std(ddof=1)) if jp.size > 1 else 0.0,
            "mean_tracking": float(err.mean()),
        }


def hedging_pnl(
    paths: PathBatch,
    instrument: Instrument,
    rebalance_dt: float,
    mc: McConfig,
    params: QrhParams,
    kernel: FractionalKernelApprox,
    method: str = "componentwise",
    chunk: int = 64,
) -> HedgeReport:
    """Discrete delta hedging along simulated paths.

    The hedge ratio is set at each rebalance node and held until the next; the last,
    partial interval contributes the stub ``delta * (S_t - S_{last rebalance})``.
    Prices are recomputed by Monte-Carlo at each reported node.
    """
    if paths.Z is None or paths.factor_stride != 1:
        raise ValueError("hedging needs factors recorded at every node")
    stride = rebalance_dt / paths.dt
    if abs(stride - round(stride)) > 1e-6 or round(stride) < 1:
        raise ValueError("rebalance_dt must be a positive multiple of the path dt")
    stride = int(round(stride))
    n_nodes = paths.t.size
    if n_nodes - 1 < stride:
        raise ValueError("path shorter than one rebalance interval")
    nodes = list(range(0, n_nodes, stride))
    if nodes[-1] != n_nodes - 1:
        nodes.append(n_nodes - 1)
    P, K = paths.n_paths, len(nodes)
    prices = np.empty((P, K))
    deltas = np.empty((P, K))
    for col, k in enumerate(nodes):
        t = float(paths.t[k])
        for lo in range(0, P, chunk):
            hi = min(P, lo + chunk)
            S, Z = paths.S[lo:hi, k], paths.Z[lo:hi, k]
            if instrument.kind is Kind.UNDERLYING:
                prices[lo:hi, col] = S
                deltas[lo:hi, col] = 1.0
                continue
            prices[lo:hi, col] = price_samples_batch(instrument, t, S, Z, params, kernel, mc).mean(axis=1)
            if col < K - 1:
                d, _, _ = delta_samples_batch(instrument, t, S, Z, params, kernel, mc, method)
                deltas[lo:hi, col] = d.mean(axis=1)
            else:
                deltas[lo:hi, col] = np.nan
    S_nodes = paths.S[:, nodes]
    gains = deltas[:, :-1] * np.diff(S_nodes, axis=1)
    J_delta = np.concatenate([np.zeros((P, 1)), np.cumsum(gains, axis=1)], axis=1)
    J_price = prices - prices[:, :1]
    return HedgeReport(t=paths.t[nodes], J_delta=J_delta, J_price=J_price, deltas=deltas)
