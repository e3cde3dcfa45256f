"""Experiment configuration: one INI-style ``.cfg`` file per experiment.

Units: model parameters are annual (``mu`` per year, variance per year), while every
market-making quantity is in seconds (horizons, intensities per second).  Option
expiries are given in days and converted to model years on load.
"""

from __future__ import annotations

import configparser
import io
import math
import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .hjb import AssetSpec, PortfolioSpec
from .model import FractionalKernelApprox, ModelState, QrhParams, build_kernel_approx, instantaneous_variance
from .pricer import Instrument, Kind, McConfig

BUNDLED = ("example1", "example2", "example3")
ENV_OUTPUT = "QRHMM_OUTPUT"


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as S0 and Z0 are case sensitive
    return cp


class ConfigError(ValueError):
    """Raised for missing, malformed or inconsistent configuration entries."""


def _floats(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(x) for x in text.replace(",", " ").split())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if value is None:
        return ""
    return str(value)


@dataclass(frozen=True)
class ModelSection:
    lam: float  # factor mean reversion towards the aggregate, per year
    eta: float  # factor vol-of-vol
    a: float
    b: float
    c: float  # variance floor, per year
    mu: float = 0.0  # spot drift, per year
    alpha: float = 0.51  # roughness, kernel t**(alpha-1)
    n_factors: int = 10
    kernel_horizon: float = 1.0  # years; sets the smallest kernel rate
    S0: float = 3000.0  # $
    Z0: tuple = ()  # one entry per factor
    v0: Optional[float] = None  # variance per year used for sigma; None = implied by Z0


@dataclass(frozen=True)
class AssetSection:
    name: str
    tick: float  # $
    size: float  # contracts per order
    cap: float  # maximum absolute inventory, contracts
    intensity_bid: float  # fills per second
    intensity_ask: float  # fills per second
    delta: float  # $ per $ of SPX move
    kind: str = "Underlying"
    expiry_days: float = 0.0
    strike: Optional[float] = None
    price: float = 0.0  # initial mark, $; cancels in P&L


@dataclass(frozen=True)
class PortfolioSection:
    kappa: float  # portfolio penalty, 1/$
    asset_kappa_fraction: float = 0.5  # per-asset penalty as a fraction of kappa
    horizon: float = 300.0  # seconds
    risk_bound: Optional[float] = None  # net-risk bound R, $ of SPX equivalent
    risk_step: float = 0.01  # net-risk grid spacing


@dataclass(frozen=True)
class McSection:
    n_outer: int = 2000
    n_inner: int = 100
    dt: float = 1.0 / 730.0  # years
    bump_rel: float = 1e-2
    bump_abs: float = 1e-3
    method: str = "directional"


@dataclass(frozen=True)
class BacktestSection:
    kappa_grid: tuple = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    n_paths: int = 500
    horizon: Optional[float] = None  # seconds; None = half the portfolio horizon
    dt: float = 0.1  # seconds
    update_period: float = 100.0  # seconds, online recalibration
    strategies: tuple = ("grid", "greedy")
    frozen: bool = False
    seed: int = 0


@dataclass(frozen=True)
class OutputSection:
    directory: str = "results"
    svg: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection
    portfolio: PortfolioSection
    assets: tuple
    mc: McSection = field(default_factory=McSection)
    backtest: BacktestSection = field(default_factory=BacktestSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        self.validate()

    # -- validation -----------------------------------------------------------------
    def validate(self) -> None:
        m = self.model
        if m.n_factors < 1:
            raise ConfigError("model.n_factors must be at least 1")
        if len(m.Z0) != m.n_factors:
            raise ConfigError(f"model.Z0 has {len(m.Z0)} entries, expected {m.n_factors}")
        if not 0.5 < m.alpha < 1:
            raise ConfigError("model.alpha must lie in (0.5, 1)")
        if not m.S0 > 0:
            raise ConfigError("model.S0 must be positive")
        if not self.assets:
            raise ConfigError("at least one [asset.*] section is required")
        names = [a.name for a in self.assets]
        if len(set(names)) != len(names):
            raise ConfigError("asset names must be unique")
        for a in self.assets:
            try:
                Kind(a.kind)
            except ValueError:
                raise ConfigError(f"asset {a.name}: unknown kind {a.kind!r}") from None
        bt = self.backtest
        if bt.n_paths < 1:
            raise ConfigError("backtest.n_paths must be at least 1")
        if not bt.dt > 0 or not bt.update_period > 0:
            raise ConfigError("backtest.dt and backtest.update_period must be positive")
        if any(k < 0 for k in bt.kappa_grid) or not bt.kappa_grid:
            raise ConfigError("backtest.kappa_grid must be a non-empty list of nonnegative values")
        if self.backtest_horizon <= 0:
            raise ConfigError("backtest horizon must be positive")
        steps = self.backtest_horizon / bt.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ConfigError("backtest.horizon must be a multiple of backtest.dt")
        if self.mc.method not in ("componentwise", "directional"):
            raise ConfigError("mc.method must be componentwise or directional")
        try:
            McConfig(self.mc.n_outer, self.mc.n_inner, self.mc.dt, self.mc.bump_rel, self.mc.bump_abs)
            self.portfolio_spec()
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects --------------------------------------------------------------
    @property
    def backtest_horizon(self) -> float:
        h = self.backtest.horizon
        return self.portfolio.horizon / 2 if h is None else h

    def params(self) -> QrhParams:
        m = self.model
        return QrhParams(lam=m.lam, eta=m.eta, a=m.a, b=m.b, c=m.c, mu=m.mu)

    def kernel(self) -> FractionalKernelApprox:
        m = self.model
        return build_kernel_approx(m.alpha, m.n_factors, m.kernel_horizon)

    def state0(self) -> ModelState:
        return ModelState(0.0, self.model.S0, np.array(self.model.Z0))

    def variance0(self) -> float:
        if self.model.v0 is not None:
            return self.model.v0
        return float(instantaneous_variance(self.params(), self.kernel(), np.array(self.model.Z0)))

    def sigma(self) -> float:
        """Spot volatility in $/sqrt(year) used by the market-making problem."""
        return self.model.S0 * math.sqrt(self.variance0())

    def instrument(self, a: AssetSection) -> Optional[Instrument]:
        kind = Kind(a.kind)
        if kind is Kind.UNDERLYING:
            return Instrument(kind)
        return Instrument(kind, a.expiry_days / 365.0, a.strike)

    def portfolio_spec(self, kappa: Optional[float] = None, horizon: Optional[float] = None) -> PortfolioSpec:
        """Spec at penalty ``kappa`` (default: the configured one) with ``kappa_j = fraction * kappa``."""
        p = self.portfolio
        kappa = p.kappa if kappa is None else kappa
        assets = tuple(
            AssetSpec(
                tick=a.tick,
                size=a.size,
                cap=a.cap,
                intensity_bid=a.intensity_bid,
                intensity_ask=a.intensity_ask,
                delta=a.delta,
                kappa=p.asset_kappa_fraction * kappa,
                name=a.name,
                price=a.price,
                instrument=self.instrument(a),
            )
            for a in self.assets
        )
        return PortfolioSpec(assets, kappa=kappa, sigma=self.sigma(), mu=self.model.mu * self.model.S0, horizon=horizon or p.horizon)

    def mc_config(self, seed: int) -> McConfig:
        m = self.mc
        return McConfig(m.n_outer, m.n_inner, m.dt, m.bump_rel, m.bump_abs, seed)

    def output_dir(self) -> str:
        return os.environ.get(ENV_OUTPUT, self.output.directory)

    # -- serialisation ----------------------------------------------------------------
    def to_parser(self) -> configparser.ConfigParser:
        cp = _parser()
        for section, obj in (("model", self.model), ("portfolio", self.portfolio), ("mc", self.mc), ("backtest", self.backtest), ("output", self.output)):
            cp[section] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
        for a in self.assets:
            cp[f"asset.{a.name}"] = {f.name: _fmt(getattr(a, f.name)) for f in fields(a) if f.name != "name"}
        return cp

    def dumps(self) -> str:
        buf = io.StringIO()
        self.to_parser().write(buf)
        return buf.getvalue()


def _convert(section_cls, raw: dict, where: str):
    kwargs = {}
    known = {f.name: f for f in fields(section_cls)}
    for key, text in raw.items():
        if key not in known:
            raise ConfigError(f"[{where}] unknown key {key!r}")
        f = known[key]
        ann = str(f.type)
        try:
            if "tuple" in ann:
                kwargs[key] = tuple(s.strip() for s in text.split(",") if s.strip()) if key == "strategies" else _floats(text)
            elif "bool" in ann:
                kwargs[key] = text.strip().lower() in ("1", "yes", "true", "on")
            elif "int" in ann:
                kwargs[key] = int(text)
            elif "float" in ann:
                kwargs[key] = None if (text.strip() == "" and "Optional" in ann) else float(text)
            else:
                kwargs[key] = text.strip()
        except ValueError:
            raise ConfigError(f"[{where}] {key} = {text!r} is not a valid value") from None
    try:
        return section_cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    for required in ("model", "portfolio"):
        if not cp.has_section(required):
            raise ConfigError(f"missing [{required}] section")
    assets = []
    for name in cp.sections():
        if name.startswith("asset."):
            raw = dict(cp[name])
            assets.append(_convert(AssetSection, {"name": name[len("asset."):], **raw}, name))
        elif name not in ("model", "portfolio", "mc", "backtest", "output"):
            raise ConfigError(f"unknown section [{name}]")
    opt = lambda s, cls: _convert(cls, dict(cp[s]), s) if cp.has_section(s) else cls()  # noqa: E731
    return ExperimentConfig(
        model=_convert(ModelSection, dict(cp["model"]), "model"),
        portfolio=_convert(PortfolioSection, dict(cp["portfolio"]), "portfolio"),
        assets=tuple(assets),
        mc=opt("mc", McSection),
        backtest=opt("backtest", BacktestSection),
        output=opt("output", OutputSection),
    )


def apply_overrides(cp: configparser.ConfigParser, overrides: Sequence[str]) -> None:
    """Apply ``section.key=value`` overrides; asset sections are ``asset.NAME.key=value``."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, value = item.split("=", 1)
        section, _, key = path.strip().rpartition(".")
        if not section or not key:
            raise ConfigError(f"override {item!r} needs a section and a key")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value.strip()


def loads(text: str, overrides: Sequence[str] = ()) -> ExperimentConfig:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    apply_overrides(cp, overrides)
    return from_parser(cp)


def load(path: str, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Load a file path or the name of a bundled example (``example1`` ...)."""
    if path in BUNDLED:
        text = resources.files("qrhmm").joinpath("configs", f"{path}.cfg").read_text()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    return loads(text, overrides)


def with_backtest(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, backtest=replace(cfg.backtest, **changes))
