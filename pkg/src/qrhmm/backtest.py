"""Backtests of quote/no-quote strategies against simulated price paths.

Executions are Poisson with constant intensity; over a step of ``dt`` seconds each
quoted (asset, side) fills at most once, with probability ``1 - exp(-L dt)``.
Derivative prices are marked linearly, ``P_t = P_0 + delta (S_t - S_0)``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from . import rng
from .hjb import ASK, BID, PortfolioSpec, ValueFunctionGrid, decisions_from_values, solve_full
from .model import SECONDS_PER_YEAR, FractionalKernelApprox, PathBatch, QrhParams, instantaneous_variance
from .quad import AsymptoticSolution, QuadraticHamiltonianSpec, asymptotic_solution

log = logging.getLogger(__name__)

CHUNK = 1000
FILL_BLOCK = 500


@dataclass
class StepContext:
    """What a strategy may look at besides inventory: the path batch and where we are in it."""

    paths: PathBatch
    rows: np.ndarray
    k: int


class Strategy:
    tag = "strategy"

    def decide(self, t: float, q: np.ndarray, ctx: StepContext) -> np.ndarray:
        """Quote indicators of shape ``(P, d, 2)`` for inventories ``q`` of shape ``(P, d)``."""
        raise NotImplementedError

    def reset(self) -> None:
        """Forget any per-run state; called at the start of every batch of episodes."""


class NeverQuote(Strategy):
    tag = "never"

    def __init__(self, d: int):
        self.d = d

    def decide(self, t, q, ctx):
        return np.zeros((q.shape[0], self.d, 2), dtype=bool)


class AlwaysQuote(Strategy):
    tag = "always"

    def __init__(self, d: int):
        self.d = d

    def decide(self, t, q, ctx):
        return np.ones((q.shape[0], self.d, 2), dtype=bool)


class _LatticeLookup:
    def __init__(self, spec: PortfolioSpec):
        self.caps = np.array([a.cap for a in spec.assets])
        self.sizes = spec.sizes
        self.shape = tuple(a.n_levels for a in spec.assets)

    def flat_index(self, q: np.ndarray) -> np.ndarray:
        idx = np.rint((q + self.caps) / self.sizes).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.shape)


class GridStrategy(Strategy):
    """Optimal decisions read from stored slices of a lattice solve.

    ``frozen=True`` uses the ``t = 0`` slice throughout.
    """

    tag = "grid"

    def __init__(self, grid: ValueFunctionGrid, frozen: bool = False):
        self.grid = grid
        self.frozen = frozen
        spec = grid.spec
        self.lookup = _LatticeLookup(spec)
        slices = grid.values[:1] if frozen else grid.values
        self.times = grid.times[:1] if frozen else grid.times
        self.table = np.stack([decisions_from_values(v, spec).reshape(spec.d, 2, -1) for v in slices])

    def _slice(self, t: float) -> int:
        # nearest stored time; the stored grid is sorted
        i = int(np.searchsorted(self.times, t))
        if i == 0:
            return 0
        if i >= self.times.size:
            return self.times.size - 1
        return i if self.times[i] - t < t - self.times[i - 1] else i - 1

    def decide(self, t, q, ctx):
        k = 0 if self.frozen else self._slice(t)
        dec = self.table[k][:, :, self.lookup.flat_index(q)]
        return np.moveaxis(dec, -1, 0)


class GreedyStrategy(Strategy):
    """Greedy rule from the closed-form quadratic value function (time independent)."""

    tag = "greedy"

    def __init__(self, sol: AsymptoticSolution, spec: PortfolioSpec):
        self.sol = sol
        self.spec = spec

    def decide(self, t, q, ctx):
        return greedy_indicators(q, self.sol.A, self.sol.B, self.spec)


def greedy_indicators(q, A, B, spec: PortfolioSpec) -> np.ndarray:
    """Vectorised greedy rule; ``A``/``B`` may be shared ``(d, d)``/``(d,)`` or per path."""
    m = spec.sizes
    half = np.array([a.tick / 2 for a in spec.assets])
    if A.ndim == 2:
        Aq = q @ A  # A symmetric
        diagA = np.diag(A)[None, :]
        Bv = B[None, :]
    else:
        Aq = np.einsum("pij,pj->pi", A, q)
        diagA = np.diagonal(A, axis1=1, axis2=2)
        Bv = B
    base = m * diagA
    bid = 2 * Aq + base + Bv <= half
    ask = -2 * Aq + base - Bv <= half
    return np.stack([bid, ask], axis=-1)


class UniAssetStrategy(Strategy):
    """Independent single-asset optimal strategies, one lattice solve per asset."""

    tag = "uni"

    def __init__(self, grids: Sequence[ValueFunctionGrid], frozen: bool = False):
        self.parts = [GridStrategy(g, frozen=frozen) for g in grids]

    def decide(self, t, q, ctx):
        return np.concatenate([s.decide(t, q[:, j : j + 1], ctx) for j, s in enumerate(self.parts)], axis=1)


def uniasset_benchmark(spec: PortfolioSpec, M: Optional[int] = None, store_every: int = 1, frozen: bool = False) -> UniAssetStrategy:
    """Per-asset lattice solves with the portfolio penalty switched off."""
    grids = []
    for a in spec.assets:
        single = PortfolioSpec(assets=(a,), kappa=0.0, sigma=spec.sigma, mu=spec.mu, horizon=spec.horizon)
        grids.append(solve_full(single, M=M, store_every=store_every))
    return UniAssetStrategy(grids, frozen=frozen)


class OnlineGreedyStrategy(Strategy):
    """Greedy rule whose hedge ratios and volatility are refreshed from the running model state.

    At times ``update_period, 2 update_period, ...`` (seconds) every path recomputes
    the deltas of its assets with ``pricer.delta`` and ``sigma = S sqrt(V)``, then
    rebuilds the closed-form ``(A, B)``.  Before the first update the static solution
    of ``spec`` is used.  ``delta_history`` records the refreshed deltas per update.
    """

    tag = "online"

    def __init__(
        self,
        spec: PortfolioSpec,
        params: QrhParams,
        kernel: FractionalKernelApprox,
        mc,
        update_period: float,
        qspec: Optional[QuadraticHamiltonianSpec] = None,
        method: str = "directional",
    ):
        if not update_period > 0:
            raise ValueError("update period must be positive")
        self.spec = spec
        self.params = params
        self.kernel = kernel
        self.mc = mc
        self.update_period = update_period
        self.qspec = qspec or QuadraticHamiltonianSpec.default(spec)
        self.method = method
        base = asymptotic_solution(spec, self.qspec)
        self.base = (base.A, base.B)
        self._state: Dict[int, tuple] = {}
        self.delta_history: Dict[tuple, np.ndarray] = {}

    def _refresh(self, t, ctx: StepContext, previous: Optional[np.ndarray]):
        from .pricer import delta_samples_batch

        paths = ctx.paths
        Z = paths.factors_at(ctx.k)[ctx.rows]
        S = paths.S[ctx.rows, ctx.k]
        t_model = float(paths.t[ctx.k])
        P = len(ctx.rows)
        deltas = np.tile(self.spec.deltas, (P, 1)) if previous is None else previous.copy()
        for j, a in enumerate(self.spec.assets):
            if a.instrument is None:
                continue
            try:
                samples, _, _ = delta_samples_batch(a.instrument, t_model, S, Z, self.params, self.kernel, self.mc, self.method)
                deltas[:, j] = samples.mean(axis=1)
            except (ValueError, ArithmeticError) as exc:
                log.warning("delta update failed for asset %s at t=%s: %s; keeping previous values", a.name or j, t, exc)
        sigma = S * np.sqrt(instantaneous_variance(self.params, self.kernel, Z))
        A = np.empty((P, self.spec.d, self.spec.d))
        B = np.empty((P, self.spec.d))
        for p in range(P):
            assets = tuple(replace(a, delta=float(x)) for a, x in zip(self.spec.assets, deltas[p]))
            sol = asymptotic_solution(replace(self.spec, assets=assets, sigma=float(sigma[p])), self.qspec)
            A[p], B[p] = sol.A, sol.B
        self.delta_history[(int(ctx.rows[0]), round(t, 9))] = deltas
        return A, B, deltas

    def decide(self, t, q, ctx):
        n_updates = int(math.floor(t / self.update_period + 1e-9))
        key = int(ctx.rows[0])
        cached = self._state.get(key)
        if n_updates == 0:
            A, B = self.base
        elif cached is not None and cached[0] == n_updates:
            A, B = cached[1], cached[2]
        else:
            A, B, deltas = self._refresh(t, ctx, cached[3] if cached is not None else None)
            self._state[key] = (n_updates, A, B, deltas)
        return greedy_indicators(q, A, B, self.spec)

    def reset(self) -> None:
        self._state.clear()
        self.delta_history.clear()


def online_recalibration(
    spec: PortfolioSpec,
    params: QrhParams,
    kernel: FractionalKernelApprox,
    mc,
    update_period: float,
    qspec: Optional[QuadraticHamiltonianSpec] = None,
    method: str = "directional",
) -> OnlineGreedyStrategy:
    """Greedy strategy recalibrated every ``update_period`` seconds; paths must carry factors."""
    return OnlineGreedyStrategy(spec, params, kernel, mc, update_period, qspec, method)


@dataclass
class EpisodeResult:
    """Outcome of one or more episodes (leading axis = path).

    ``pnl`` is ``Pi_T - Pi_0``; ``spread_pnl + inventory_pnl`` equals it up to
    roundoff.  Trajectories are only kept when requested.
    """

    pnl: np.ndarray
    spread_pnl: np.ndarray
    inventory_pnl: np.ndarray
    fills: np.ndarray
    final_inventory: np.ndarray
    inventory: Optional[np.ndarray] = None
    cash: Optional[np.ndarray] = None
    value: Optional[np.ndarray] = None
    marks: Optional[np.ndarray] = None


def _check_dt(paths: PathBatch, dt: float):
    path_dt = paths.dt * SECONDS_PER_YEAR
    if abs(path_dt - dt) > 1e-6 * dt:
        raise ValueError(f"path step {path_dt:.6g}s does not match engine step {dt:.6g}s")


def _run_chunk(strategy, paths, rows, spec: PortfolioSpec, dt, seed, record):
    P, d = len(rows), spec.d
    n_steps = paths.t.size - 1
    m = spec.sizes
    caps = np.array([a.cap for a in spec.assets])
    half = np.array([a.tick / 2 for a in spec.assets])
    delta = spec.deltas
    p0 = np.array([a.price for a in spec.assets])
    lam = np.array([[a.intensity_bid, a.intensity_ask] for a in spec.assets])
    p_fill = -np.expm1(-lam * dt)
    tol = 1e-9 * m

    S = paths.S[rows]
    S0 = S[:, :1]
    q = np.zeros((P, d))
    cash = np.zeros(P)
    spread = np.zeros(P)
    inv_pnl = np.zeros(P)
    fills = np.zeros((P, d, 2), dtype=np.int64)
    gens = [rng.substream(seed, rng.FILLS, paths.first_index + r) for r in rows]
    if record:
        q_traj = np.zeros((P, n_steps + 1, d))
        cash_traj = np.zeros((P, n_steps + 1))
        value_traj = np.zeros((P, n_steps + 1))
        marks_traj = p0 + delta * (S[:, :, None] - S0[:, :, None])
        value_traj[:, 0] = (marks_traj[:, 0] * q).sum(axis=1)

    u = None
    for k in range(n_steps):
        if k % FILL_BLOCK == 0:
            nb = min(FILL_BLOCK, n_steps - k)
            u = np.stack([g.random((nb, d, 2)) for g in gens], axis=0)
        uk = u[:, k % FILL_BLOCK]
        t = k * dt
        quotes = np.asarray(strategy.decide(t, q, StepContext(paths, rows, k)), dtype=bool)
        if quotes.shape != (P, d, 2):
            raise ValueError(f"strategy returned shape {quotes.shape}, expected {(P, d, 2)}")
        can_bid = q + m <= caps + tol
        can_ask = q - m >= -caps - tol
        fb = quotes[:, :, BID] & can_bid & (uk[:, :, BID] < p_fill[:, BID])
        fa = quotes[:, :, ASK] & can_ask & (uk[:, :, ASK] < p_fill[:, ASK])
        dS = S[:, k + 1] - S[:, k]
        inv_pnl += (q * delta).sum(axis=1) * dS
        marks = p0 + delta * (S[:, k + 1 : k + 2] - S0)
        cash += ((marks + half) * m * fa - (marks - half) * m * fb).sum(axis=1)
        spread += (half * m * (fa.astype(float) + fb)).sum(axis=1)
        q = q + m * (fb.astype(float) - fa)
        fills[:, :, BID] += fb
        fills[:, :, ASK] += fa
        if record:
            q_traj[:, k + 1] = q
            cash_traj[:, k + 1] = cash
            value_traj[:, k + 1] = cash + (marks * q).sum(axis=1)
    final_marks = p0 + delta * (S[:, -1:] - S0)
    pnl = cash + (final_marks * q).sum(axis=1)
    res = EpisodeResult(pnl=pnl, spread_pnl=spread, inventory_pnl=inv_pnl, fills=fills, final_inventory=q)
    if record:
        res.inventory, res.cash, res.value, res.marks = q_traj, cash_traj, value_traj, marks_traj
    return res


def simulate_episodes(
    strategy: Strategy,
    paths: PathBatch,
    spec: PortfolioSpec,
    dt: float,
    seed: int,
    record: bool = False,
    workers: int = 1,
) -> EpisodeResult:
    """Run ``strategy`` on every path; fills for path ``i`` use substream ``(seed, FILLS, i)``.

    Initial inventory and cash are zero, so ``Pi_0 = 0``.
    """
    _check_dt(paths, dt)
    strategy.reset()
    chunks = [np.arange(lo, min(paths.n_paths, lo + CHUNK)) for lo in range(0, paths.n_paths, CHUNK)]

    def run(rows):
        return _run_chunk(strategy, paths, rows, spec, dt, seed, record)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(r) for r in chunks]
    if len(parts) == 1:
        return parts[0]
    merged = {}
    for name in ("pnl", "spread_pnl", "inventory_pnl", "fills", "final_inventory", "inventory", "cash", "value", "marks"):
        vals = [getattr(p, name) for p in parts]
        merged[name] = None if vals[0] is None else np.concatenate(vals)
    return EpisodeResult(**merged)


def simulate_episode(strategy: Strategy, path: PathBatch, spec: PortfolioSpec, dt: float, seed: int) -> EpisodeResult:
    """Single-episode convenience wrapper keeping full trajectories."""
    return simulate_episodes(strategy, path, spec, dt, seed, record=True)


@dataclass
class FrontierRow:
    kappa: float
    strategy: str
    mean: float
    std: float
    stderr: float
    n_paths: int
    horizon: float
    seed: int
    error: str = ""


@dataclass
class FrontierReport:
    rows: list = field(default_factory=list)
    pnl: Dict[tuple, np.ndarray] = field(default_factory=dict)

    def add(self, kappa, tag, pnl, horizon, seed):
        pnl = np.asarray(pnl, dtype=float)
        n = pnl.size
        mean = math.fsum(pnl) / n
        std = math.sqrt(math.fsum((pnl - mean) ** 2) / (n - 1)) if n > 1 else 0.0
        self.rows.append(FrontierRow(kappa, tag, mean, std, std / math.sqrt(n), n, horizon, seed))
        self.pnl[(kappa, tag)] = pnl

    def row(self, kappa, tag) -> FrontierRow:
        for r in self.rows:
            if r.kappa == kappa and r.strategy == tag:
                return r
        raise KeyError((kappa, tag))

    def paired_stderr(self, kappa, tag_a, tag_b) -> float:
        diff = self.pnl[(kappa, tag_a)] - self.pnl[(kappa, tag_b)]
        return float(diff.std(ddof=1) / math.sqrt(diff.size))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kappa", "strategy", "mean", "std", "stderr", "n_paths", "horizon", "seed"])
        for r in self.rows:
            w.writerow([repr(r.kappa), r.strategy, repr(r.mean), repr(r.std), repr(r.stderr), r.n_paths, repr(r.horizon), r.seed])
        return buf.getvalue()


StrategyBuilder = Callable[[PortfolioSpec], Strategy]


def sweep_frontier(
    builders: Dict[str, StrategyBuilder],
    kappas: Sequence[float],
    spec_for_kappa: Callable[[float], PortfolioSpec],
    paths: PathBatch,
    horizon: float,
    dt: float,
    seed: int,
    workers: int = 1,
) -> FrontierReport:
    """Mean/std of terminal P&L per (kappa, strategy) over shared paths and fill draws.

    Every strategy sees the same price paths and the same fill uniforms at every
    kappa, so differences between strategies are paired.
    """
    report = FrontierReport()
    for kappa in kappas:
        spec = spec_for_kappa(kappa)
        for tag, build in builders.items():
            try:
                strategy = build(spec)
            except ValueError as exc:
                log.error("kappa=%g strategy=%s: %s", kappa, tag, exc)
                report.rows.append(FrontierRow(kappa, tag, math.nan, math.nan, math.nan, 0, horizon, seed, str(exc)))
                continue
            res = simulate_episodes(strategy, paths, spec, dt, seed, workers=workers)
            report.add(kappa, tag, res.pnl, horizon, seed)
    return report


def standard_builders(store_every: int = 2, frozen: bool = False, extra: Optional[dict] = None) -> Dict[str, StrategyBuilder]:
    """Builders for the grid-optimal, greedy, uni-asset and never-quote strategies."""

    def grid(spec):
        g = solve_full(spec, store_every=store_every)
        return GridStrategy(g, frozen=frozen)

    def greedy(spec):
        return GreedyStrategy(asymptotic_solution(spec), spec)

    def uni(spec):
        return uniasset_benchmark(spec, store_every=store_every, frozen=frozen)

    def never(spec):
        return NeverQuote(spec.d)

    out = {"grid": grid, "greedy": greedy, "uni": uni, "never": never}
    out.update(extra or {})
    return out
