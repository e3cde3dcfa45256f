"""Value-function invariants shared by the unit and acceptance suites."""

from dataclasses import replace

import numpy as np

from qrhmm.hjb import AssetSpec, PortfolioSpec, decisions_from_values, solve_full

TOL = 1e-9


def random_spec(rng: np.random.Generator, symmetric: bool = False) -> PortfolioSpec:
    d = int(rng.integers(1, 3))
    assets = []
    for _ in range(d):
        size = float(rng.choice([1.0, 2.0, 5.0]))
        lb, la = rng.uniform(0.0, 1.0, 2)
        if symmetric:
            la = lb
        assets.append(
            AssetSpec(
                tick=float(rng.uniform(0.01, 0.5)),
                size=size,
                cap=size * int(rng.integers(1, 11)),
                intensity_bid=float(lb),
                intensity_ask=float(la),
                delta=float(rng.uniform(-1.5, 1.5)),
                kappa=float(rng.uniform(0.0, 0.05)),
            )
        )
    return PortfolioSpec(
        tuple(assets),
        kappa=float(rng.uniform(0.0, 0.05)),
        sigma=float(rng.uniform(10.0, 2000.0)),
        mu=0.0 if symmetric else float(rng.uniform(-1e5, 1e5)),
        horizon=float(rng.uniform(5.0, 60.0)),
    )


def invariant_report(spec: PortfolioSpec, grid=None) -> dict:
    """Boolean outcome of each value-function invariant for one spec."""
    if grid is None:
        grid = solve_full(spec)
    T = spec.horizon
    tau = (T - grid.times)[:, None]
    v = grid.values.reshape(grid.times.size, -1)
    scale = max(1.0, np.abs(v).max())
    out = {}
    out["terminal_zero"] = bool(np.all(grid.values[-1] == 0.0))
    out["supersolution"] = bool(np.all(v <= spec.supersolution_rate() * tau + TOL * scale))
    reward = spec.running_reward(grid.lattice_points()).ravel()[None, :]
    aux = v - reward * tau
    out["monotone_map"] = bool(np.all(np.diff(aux, axis=0) <= TOL * scale))
    origin = tuple(a.n_levels // 2 for a in spec.assets)
    out["origin_nonnegative"] = bool(np.all(grid.values[(slice(None),) + origin] >= -TOL * scale))
    harder = replace(spec, kappa=spec.kappa * 1.5 + 1e-3)
    out["kappa_monotone"] = bool(np.all(solve_full(harder).values[0] <= grid.values[0] + TOL * scale))
    per_asset = spec.with_kappas(spec.kappa, [a.kappa * 1.5 + 1e-3 for a in spec.assets])
    out["asset_kappa_monotone"] = bool(np.all(solve_full(per_asset).values[0] <= grid.values[0] + TOL * scale))
    dec = decisions_from_values(grid.values[0], spec)
    ok = True
    v0 = grid.values[0]
    for j, a in enumerate(spec.assets):
        if a.cap < a.size:
            continue
        for side, step in ((0, 1), (1, -1)):
            nb = list(origin)
            nb[j] += step
            lookup = (v0[origin] - v0[tuple(nb)]) / a.size <= a.tick / 2
            ok &= bool(dec[(j, side) + origin] == lookup)
    out["decision_consistency"] = ok
    if spec.mu == 0 and all(a.intensity_bid == a.intensity_ask for a in spec.assets):
        flip = tuple(slice(None, None, -1) for _ in spec.assets)
        out["symmetry"] = bool(np.array_equal(v0, v0[flip]))
    return out
