"""Run configuration: TOML file with flat sections plus --set overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .coefficients import CoefficientFn
from .errors import ConfigError, ValidationError
from .market import LevyAtomMeasure, MarketParams
from .montecarlo import SimConfig
from .pide import StateGrid2D

DEFAULTS = {
    "grid": {"nx": 81, "nz": 81, "nt": 200, "x_min": -2.0, "x_max": 2.0},
    "ode": {"n_steps": 10_000},
    "quad": {"steps": 10_000},
    "mc": {"n_paths": 100_000, "n_steps": 500, "seed": 12_345,
           "antithetic": False},
    "policy": {"max_iters": 20, "tol": 1e-3},
    "verify": {
        "t_list": [0.0, 0.25, 0.5, 0.75],
        "v_offsets": [0.5, -0.5, 1.0, -1.0],
        "epsilons": [0.04, 0.02, 0.01],
        "identity_tol": 1e-8,
        "ode_tol": 1e-8,
        "pide_tol": 5e-3,
        "policy_tol": 5e-3,
        "se_mult": 3.0,
        "strategy_scale": 1.0,
        "checks": ["identities", "ode", "pide", "feynman_kac", "spike",
                   "bsde", "hbar"],
    },
    "output": {"dir": "out"},
}

_REQUIRED_MARKET = ("r0", "r", "sigma", "horizon", "mu", "x0")


def _merge(base: dict, override: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @property
    def config_hash(self) -> str:
        # the output directory does not affect the numbers; leave it out
        data = {k: v for k, v in self.data.items() if k != "output"}
        blob = json.dumps(data, sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    def market(self) -> MarketParams:
        m = self.section("market")
        for key in _REQUIRED_MARKET:
            if key not in m:
                raise ConfigError(f"missing key market.{key}")
        T = float(m["horizon"])
        jumps = []
        for i, entry in enumerate(m.get("jumps", [])):
            try:
                jumps.append((entry["size"], entry["intensity"],
                              entry["coefficient"]))
            except (KeyError, TypeError) as exc:
                raise ConfigError(
                    f"market.jumps[{i}] needs size, intensity, coefficient"
                ) from exc
        try:
            return MarketParams(
                r0=CoefficientFn.from_samples(m["r0"], T),
                r=CoefficientFn.from_samples(m["r"], T),
                sigma=CoefficientFn.from_samples(m["sigma"], T),
                jumps=LevyAtomMeasure.from_list(jumps, T),
                T=T, mu=float(m["mu"]), x0=float(m["x0"]))
        except ValidationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad market section: {exc}") from exc

    def grid(self) -> StateGrid2D:
        g = self.section("grid")
        if g["nx"] != g["nz"]:
            raise ConfigError("grid.nx must equal grid.nz (diagonal nodes)")
        m = self.section("market")
        return StateGrid2D(x_min=float(g["x_min"]), x_max=float(g["x_max"]),
                           nx=int(g["nx"]), nt=int(g["nt"]),
                           T=float(m["horizon"]))

    def simconfig(self) -> SimConfig:
        mc = self.section("mc")
        return SimConfig(n_paths=int(mc["n_paths"]),
                         n_steps=int(mc["n_steps"]), seed=int(mc["seed"]),
                         antithetic=bool(mc["antithetic"]))


def _parse_set(expr: str):
    if "=" not in expr:
        raise ConfigError(f"--set needs section.key=value, got {expr!r}")
    key, raw = expr.split("=", 1)
    if "." not in key:
        raise ConfigError(f"--set key must be section.key, got {key!r}")
    section, name = key.split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return section.strip(), name.strip(), value


def load_config(path: str, overrides=(), seed=None, out_dir=None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    data = _merge(DEFAULTS, raw)
    for expr in overrides:
        section, name, value = _parse_set(expr)
        data.setdefault(section, {})[name] = value
    if seed is not None:
        data.setdefault("mc", {})["seed"] = int(seed)
    if out_dir is not None:
        data.setdefault("output", {})["dir"] = str(out_dir)
    if "market" not in data:
        raise ConfigError("missing [market] section")
    cfg = RunConfig(data)
    cfg.market()  # fail fast on missing keys (ConfigError)
    return cfg
