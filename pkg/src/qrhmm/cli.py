"""Command-line entry point: ``qrhmm <command> [options]``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import backtest as bt
from .config import ENV_OUTPUT, ConfigError, ExperimentConfig, load
from .hjb import PortfolioSpec, decisions_from_values, portfolio_controls, solve_full, solve_portfolio
from .io import atomic_write_text, svg_plot, write_csv
from .model import SECONDS_PER_YEAR, build_kernel_approx, simulate_paths
from .pricer import Instrument, Kind, delta, hedging_pnl, price
from .quad import asymptotic_solution, greedy_map

log = logging.getLogger("qrhmm")

STRATEGIES = ("grid", "greedy", "uni", "online", "never")


class NumericalError(RuntimeError):
    pass


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def _out(args, cfg: ExperimentConfig, name: str) -> str:
    directory = args.out or os.environ.get(ENV_OUTPUT) or cfg.output.directory
    return os.path.join(directory, name)


def _seed(args, cfg) -> int:
    return cfg.backtest.seed if args.seed is None else args.seed


def _instrument(args) -> Instrument:
    try:
        kind = Kind(args.kind)
    except ValueError:
        raise ConfigError(f"unknown instrument kind {args.kind!r}; choose from {[k.value for k in Kind]}") from None
    try:
        if kind is Kind.UNDERLYING:
            return Instrument(kind)
        return Instrument(kind, args.expiry_days / 365.0, args.strike)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _decision_rows(t, points, dec):
    """Rows ``t, q1..qd, l_1b, l_1a, ...`` from indicators ``dec[j, side, *lattice]``."""
    d = points.shape[-1]
    q = points.reshape(-1, d)
    flat = dec.reshape(dec.shape[0], 2, -1)
    for i in range(q.shape[0]):
        yield [t, *q[i].tolist(), *[int(flat[j, s, i]) for j in range(flat.shape[0]) for s in (0, 1)]]


def _decision_header(spec: PortfolioSpec, first=("t",)):
    names = [a.name or f"asset{j + 1}" for j, a in enumerate(spec.assets)]
    return [*first, *[f"q_{n}" for n in names], *[f"l_{n}_{s}" for n in names for s in ("b", "a")]]


# -- commands ----------------------------------------------------------------------------


def cmd_kernel(args, cfg):
    m = cfg.model
    alpha = m.alpha if args.alpha is None else args.alpha
    n = m.n_factors if args.n is None else args.n
    try:
        k = build_kernel_approx(alpha, n, m.kernel_horizon)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = _out(args, cfg, "kernel.csv")
    write_csv(path, ["i", "c", "gamma"], [[i + 1, float(c), float(g)] for i, (c, g) in enumerate(zip(k.c, k.gamma))])
    err = k.l2_error(0.0, 1.0)
    return f"kernel alpha={alpha} n={n} L2 error on [0,1]={err:.4g} -> {path}"


def cmd_simulate(args, cfg):
    if args.paths < 1:
        raise ConfigError("--paths must be at least 1")
    if not args.horizon_days > 0 or args.steps_per_day < 1:
        raise ConfigError("--horizon-days must be positive and --steps-per-day at least 1")
    n_steps = int(round(args.horizon_days * args.steps_per_day))
    dt = 1.0 / (365.0 * args.steps_per_day)
    seed = _seed(args, cfg)
    paths = simulate_paths(cfg.params(), cfg.kernel(), cfg.state0(), n_steps * dt, dt, args.paths, seed, workers=args.workers)
    n = cfg.model.n_factors
    rows = []
    for i in range(paths.n_paths):
        for k in range(paths.t.size):
            rows.append([i, float(paths.t[k]), float(paths.S[i, k]), *paths.Z[i, k].tolist(), float(paths.V[i, k])])
    path = _out(args, cfg, "paths.csv")
    write_csv(path, ["path", "t", "S", *[f"Z{i + 1}" for i in range(n)], "V"], rows)
    return f"simulated {args.paths} paths x {n_steps} steps seed={seed} -> {path}"


def cmd_price(args, cfg):
    inst = _instrument(args)
    seed = _seed(args, cfg)
    est = price(inst, cfg.state0(), cfg.params(), cfg.kernel(), cfg.mc_config(seed))
    path = _out(args, cfg, "price.csv")
    write_csv(path, ["kind", "expiry_days", "strike", "value", "stderr", "n_samples"], [[inst.kind.value, args.expiry_days, args.strike, est.value, est.std_error, est.n_samples]])
    return f"price {inst.kind.value} = {est.value:.6g} +/- {est.std_error:.2g} seed={seed} -> {path}"


def cmd_delta(args, cfg):
    inst = _instrument(args)
    seed = _seed(args, cfg)
    est = delta(inst, cfg.state0(), cfg.params(), cfg.kernel(), cfg.mc_config(seed), method=args.method or cfg.mc.method)
    path = _out(args, cfg, "delta.csv")
    zcols = [f"dP_dZ{i + 1}" for i in range(len(est.dP_dZ))]
    write_csv(path, ["kind", "expiry_days", "strike", "delta", "stderr", "dP_dS", *zcols], [[inst.kind.value, args.expiry_days, args.strike, est.value, est.std_error, est.dP_dS, *np.asarray(est.dP_dZ).tolist()]])
    return f"delta {inst.kind.value} = {est.value:.6g} +/- {est.std_error:.2g} seed={seed} -> {path}"


def cmd_hedge(args, cfg):
    inst = _instrument(args)
    if args.paths < 1:
        raise ConfigError("--paths must be at least 1")
    horizon_days = args.horizon_days if args.horizon_days is not None else args.expiry_days
    if not horizon_days > 0:
        raise ConfigError("hedging horizon must be positive")
    seed = _seed(args, cfg)
    dt = 1.0 / (365.0 * args.steps_per_day)
    n_steps = int(round(horizon_days * args.steps_per_day))
    paths = simulate_paths(cfg.params(), cfg.kernel(), cfg.state0(), n_steps * dt, dt, args.paths, seed, workers=args.workers)
    rep = hedging_pnl(paths, inst, args.rebalance_days / 365.0, cfg.mc_config(seed), cfg.params(), cfg.kernel(), method=args.method or cfg.mc.method)
    rows = [[i, float(rep.J_delta[i, -1]), float(rep.J_price[i, -1]), float(rep.tracking_error[i, -1])] for i in range(paths.n_paths)]
    path = _out(args, cfg, "hedge.csv")
    write_csv(path, ["path", "J_delta", "J_price", "tracking_error"], rows)
    s = rep.summary()
    return f"hedge std(Jd-Jp)={s['std_tracking']:.4g} std(Jp)={s['std_price_change']:.4g} seed={seed} -> {path}"


def _times(args, horizon):
    ts = _floats(args.times) if args.times else [0.0]
    if any(t < 0 or t > horizon for t in ts):
        raise ConfigError(f"--times must lie in [0, {horizon}]")
    return ts


def cmd_solve_hjb(args, cfg):
    horizon = args.horizon if args.horizon is not None else cfg.portfolio.horizon
    spec = cfg.portfolio_spec(horizon=horizon)
    ts = _times(args, horizon)
    store = max(1, int(round(args.store_every / 0.05)))
    net = args.net or (cfg.portfolio.risk_bound is not None and cfg.portfolio.asset_kappa_fraction == 0)
    if net:
        if cfg.portfolio.risk_bound is None:
            raise ConfigError("net-risk solve needs portfolio.risk_bound")
        grid = solve_portfolio(spec, cfg.portfolio.risk_bound, cfg.portfolio.risk_step, store_every=store)
        vrows, drows = [], []
        for t in ts:
            k = grid.index(min(grid.times, key=lambda s: abs(s - t)))
            tt = float(grid.times[k])
            vrows += [[tt, float(r), float(v)] for r, v in zip(grid.r, grid.values[k])]
            dec = portfolio_controls(grid, tt)
            drows += list(_decision_rows(tt, grid.r[:, None], dec))
        write_csv(_out(args, cfg, "value_grid.csv"), ["t", "r", "v"], vrows)
        names = [a.name for a in spec.assets]
        write_csv(_out(args, cfg, "decisions.csv"), ["t", "r", *[f"l_{n}_{s}" for n in names for s in ("b", "a")]], drows)
        return f"net-risk value function on {grid.r.size} nodes, T={horizon}s -> {_out(args, cfg, 'value_grid.csv')}"
    grid = solve_full(spec, store_every=store)
    pts = grid.lattice_points()
    d = spec.d
    vrows, drows = [], []
    for t in ts:
        k = int(np.argmin(np.abs(grid.times - t)))
        tt = float(grid.times[k])
        v = grid.values[k]
        vrows += [[tt, *q, float(x)] for q, x in zip(pts.reshape(-1, d).tolist(), v.ravel())]
        drows += list(_decision_rows(tt, pts, decisions_from_values(v, spec)))
    write_csv(_out(args, cfg, "value_grid.csv"), ["t", *[f"q_{a.name}" for a in spec.assets], "v"], vrows)
    write_csv(_out(args, cfg, "decisions.csv"), _decision_header(spec), drows)
    return f"value function on {pts.size // d} nodes, T={horizon}s, v(0,0)={float(grid.values[0][tuple(a.n_levels // 2 for a in spec.assets)]):.6g} -> {_out(args, cfg, 'value_grid.csv')}"


def cmd_solve_quadratic(args, cfg):
    spec = cfg.portfolio_spec()
    try:
        sol = asymptotic_solution(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    names = [a.name for a in spec.assets]
    write_csv(_out(args, cfg, "A.csv"), names, [row.tolist() for row in sol.A])
    write_csv(_out(args, cfg, "B.csv"), names, [sol.B.tolist()])
    return f"closed form A ({spec.d}x{spec.d}), B ({spec.d}) kappa={spec.kappa} -> {_out(args, cfg, 'A.csv')}"


def cmd_decide(args, cfg):
    spec = cfg.portfolio_spec()
    try:
        sol = asymptotic_solution(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    n_nodes = math.prod(a.n_levels for a in spec.assets)
    if n_nodes > 2_000_000:
        raise ConfigError(f"greedy map over {n_nodes} lattice nodes is too large to dump")
    pts = np.stack(np.meshgrid(*[a.levels for a in spec.assets], indexing="ij"), axis=-1)
    dec = greedy_map(sol, spec)
    path = _out(args, cfg, "decisions.csv")
    write_csv(path, _decision_header(spec), _decision_rows(0.0, pts, dec))
    return f"greedy decisions on {n_nodes} nodes -> {path}"


def _builders(names: Sequence[str], cfg: ExperimentConfig, seed: int):
    base = bt.standard_builders(store_every=20, frozen=cfg.backtest.frozen)
    out = {}
    for name in names:
        if name == "online":
            mc = cfg.mc_config(seed)

            def online(spec, mc=mc):
                return bt.online_recalibration(spec, cfg.params(), cfg.kernel(), mc, cfg.backtest.update_period, method=cfg.mc.method)

            out[name] = online
        elif name in base:
            out[name] = base[name]
        else:
            raise ConfigError(f"unknown strategy {name!r}; choose from {STRATEGIES}")
    return out


def cmd_backtest(args, cfg):
    b = cfg.backtest
    n_paths = b.n_paths if args.paths is None else args.paths
    if n_paths < 1:
        raise ConfigError("--paths must be at least 1")
    kappas = _floats(args.kappa_grid) if args.kappa_grid else list(b.kappa_grid)
    if not kappas or any(k < 0 for k in kappas):
        raise ConfigError("--kappa-grid needs nonnegative values")
    horizon = cfg.backtest_horizon if args.horizon is None else args.horizon
    steps = horizon / b.dt
    if not horizon > 0 or abs(steps - round(steps)) > 1e-6:
        raise ConfigError("--horizon must be a positive multiple of backtest.dt")
    names = [s.strip() for s in args.strategy.split(",")] if args.strategy else list(b.strategies)
    if ("grid" in names or "uni" in names) and horizon > cfg.portfolio.horizon + 1e-9:
        raise ConfigError("backtest horizon exceeds the portfolio horizon used by lattice strategies")
    seed = _seed(args, cfg)
    builders = _builders(names, cfg, seed)
    stride = 1
    keep = "online" in names
    if keep:
        stride = b.update_period / b.dt
        if abs(stride - round(stride)) > 1e-6:
            raise ConfigError("backtest.update_period must be a multiple of backtest.dt")
        stride = int(round(stride))
    paths = simulate_paths(
        cfg.params(), cfg.kernel(), cfg.state0(), round(steps) * b.dt / SECONDS_PER_YEAR, b.dt / SECONDS_PER_YEAR,
        n_paths, seed, keep_factors=keep, factor_stride=stride, workers=args.workers,
    )
    report = bt.sweep_frontier(builders, kappas, cfg.portfolio_spec, paths, horizon, b.dt, seed, workers=args.workers)
    path = _out(args, cfg, "frontier.csv")
    atomic_write_text(path, report.to_csv())
    if args.per_episode:
        rows = [[k, tag, i, float(x)] for (k, tag), pnl in report.pnl.items() for i, x in enumerate(pnl)]
        write_csv(_out(args, cfg, "episodes.csv"), ["kappa", "strategy", "path", "pnl"], rows)
    if args.svg or cfg.output.svg:
        series = {}
        for r in report.rows:
            if not r.error:
                xs, ys = series.setdefault(r.strategy, ([], []))
                xs.append(r.std)
                ys.append(r.mean)
        atomic_write_text(_out(args, cfg, "frontier.svg"), svg_plot(series, "std of P&L ($)", "mean P&L ($)"))
    failed = [r for r in report.rows if r.error]
    if failed and len(failed) == len(report.rows):
        raise NumericalError("; ".join(f"kappa={r.kappa}: {r.error}" for r in failed))
    return f"frontier {len(kappas)} kappas x {len(names)} strategies, {n_paths} paths, T_b={horizon}s seed={seed} -> {path}"


COMMANDS = {
    "kernel": cmd_kernel,
    "simulate": cmd_simulate,
    "price": cmd_price,
    "delta": cmd_delta,
    "hedge": cmd_hedge,
    "solve-hjb": cmd_solve_hjb,
    "solve-quadratic": cmd_solve_quadratic,
    "decide": cmd_decide,
    "backtest": cmd_backtest,
}


def _common(suppress: bool) -> argparse.ArgumentParser:
    """Shared options; on subcommands their defaults are suppressed so values given
    before the command name are not overwritten."""
    common = argparse.ArgumentParser(add_help=False)

    def dflt(value):
        return argparse.SUPPRESS if suppress else value

    common.add_argument("--config", default=dflt("example1"), help="config file or bundled name (example1/2/3)")
    common.add_argument("--set", action="append", default=dflt([]), metavar="SECTION.KEY=VALUE", help="override a config entry")
    common.add_argument("--seed", type=int, default=dflt(None), help="master seed (default: backtest.seed)")
    common.add_argument("--workers", type=int, default=dflt(1), help="worker threads; results do not depend on it")
    common.add_argument("--out", default=dflt(None), help=f"output directory (default: ${ENV_OUTPUT} or output.directory)")
    common.add_argument("--dump-config", default=dflt(None), metavar="PATH", help="write the effective configuration to PATH")
    common.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrhmm", description=__doc__.splitlines()[0], parents=[_common(False)])
    common = _common(True)
    sub = p.add_subparsers(dest="command")

    k = sub.add_parser("kernel", parents=[common], help="sum-of-exponentials kernel coefficients")
    k.add_argument("--alpha", type=float)
    k.add_argument("--n", type=int)

    s = sub.add_parser("simulate", parents=[common], help="simulate spot/factor paths")
    s.add_argument("--paths", type=int, default=10)
    s.add_argument("--horizon-days", type=float, default=1.0)
    s.add_argument("--steps-per-day", type=int, default=8)

    def instrument_args(sp):
        sp.add_argument("--kind", default="SpxCall", help=", ".join(k.value for k in Kind))
        sp.add_argument("--expiry-days", type=float, default=30.0)
        sp.add_argument("--strike", type=float, default=None)
        sp.add_argument("--method", choices=("componentwise", "directional"), default=None)

    for name, text in (("price", "Monte-Carlo price"), ("delta", "hedge ratio against SPX")):
        instrument_args(sub.add_parser(name, parents=[common], help=text))

    h = sub.add_parser("hedge", parents=[common], help="discrete delta hedging along simulated paths")
    instrument_args(h)
    h.add_argument("--paths", type=int, default=200)
    h.add_argument("--horizon-days", type=float, default=None, help="default: the instrument expiry")
    h.add_argument("--rebalance-days", type=float, default=1.0)
    h.add_argument("--steps-per-day", type=int, default=8)

    j = sub.add_parser("solve-hjb", parents=[common], help="lattice value function and optimal decisions")
    j.add_argument("--horizon", type=float, default=None, help="seconds")
    j.add_argument("--times", default=None, help="comma-separated times (s) to dump; default 0")
    j.add_argument("--store-every", type=float, default=1.0, help="seconds between stored slices")
    j.add_argument("--net", action="store_true", help="solve for the net-risk value function")

    sub.add_parser("solve-quadratic", parents=[common], help="closed-form long-horizon A and B")
    sub.add_parser("decide", parents=[common], help="greedy decisions over the inventory lattice")

    b = sub.add_parser("backtest", parents=[common], help="mean-risk frontier sweep")
    b.add_argument("--kappa-grid", default=None)
    b.add_argument("--paths", type=int, default=None)
    b.add_argument("--horizon", type=float, default=None, help="backtest horizon T_b in seconds")
    b.add_argument("--strategy", default=None, help="comma-separated subset of " + ",".join(STRATEGIES))
    b.add_argument("--per-episode", action="store_true", help="also write per-episode P&L")
    b.add_argument("--svg", action="store_true", help="also write an SVG of the frontier")
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config, args.set)
        if args.dump_config:
            atomic_write_text(args.dump_config, cfg.dumps())
        if args.command is None:
            if args.dump_config:
                print(f"configuration written to {args.dump_config}")
                return 0
            parser.print_help()
            return 1
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        msg = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return 2
    print(msg)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
