"""Strict TOML experiment configuration.

A file names the domain, the two kernels and mortality, plus optional
sections for each subcommand.  Unknown keys are rejected, defaults are filled
in, and the resolved form is what every output is stamped with.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import tomli
import tomli_w

from . import __version__
from .bounds import BoundsError, theorem2_constants
from .kernels import Gaussian, KernelError, KernelPair, TabulatedRadial, TopHat, zero_kernel
from .stability import StabilityError, certify

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "parse_string", "build_kernel"]


class ConfigError(ValueError):
    pass


SCHEMA = {
    "seed": 0,
    "out": "out",
    "m": None,
    "domain": {"d": None, "L": None},
    "kernels": {"competition": None, "dispersal": None},
    "simulate": {
        "t_end": 1.0,
        "observe_every": None,
        "replicas": 10,
        "seed": None,
        "max_points": 1_000_000,
        "initial_intensity": 1.0,
        "keep_points": True,
        "write_points": False,
        "bins": 32,
    },
    "hierarchy": {
        "grid_points": 128,
        "dt": 0.01,
        "t_end": None,
        "closure": "kirkwood",
        "rtol": None,
        "observe_every": None,
    },
    "stability": {"b": None, "n_max": 6, "trials": 10_000, "verify": True},
    "bounds": {
        "alpha1": 0.0,
        "alpha2": 1.0,
        "variant": "B_full",
        "delta": None,
        "epsilon": None,
        "k0_sup_root": None,
    },
    "compare": {"contact_control": False, "r0": None},
}
KERNEL_KEYS = {"type", "c", "radius", "sigma", "table", "d"}
REQUIRED = [("m",), ("domain", "d"), ("domain", "L"), ("kernels", "competition"), ("kernels", "dispersal")]


def _reject_unknown(data: dict, schema: dict, prefix: str = "") -> None:
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown key '{name}'; allowed here: {sorted(schema)}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{name}' must be a table")
            _reject_unknown(value, sub, name + ".")


def _fill(data: dict, schema: dict) -> dict:
    out = {}
    for key, default in schema.items():
        if isinstance(default, dict):
            out[key] = _fill(data.get(key, {}), default)
        else:
            out[key] = data.get(key, default)
    return out


def build_kernel(entry: dict, d: int, label: str):
    unknown = set(entry) - KERNEL_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in kernels.{label}; allowed: {sorted(KERNEL_KEYS)}")
    kd = entry.get("d", d)
    if kd != d:
        raise ConfigError(f"kernels.{label}.d = {kd} differs from domain.d = {d}")
    kind = entry.get("type")
    try:
        if kind == "zero":
            return zero_kernel(d)
        if kind == "tophat":
            return TopHat(d=d, c=float(entry["c"]), radius=float(entry["radius"]))
        if kind == "gaussian":
            return Gaussian(d=d, c=float(entry["c"]), sigma=float(entry["sigma"]))
        if kind == "tabulated":
            # rows of [r, value]; c scales the whole table
            c = float(entry.get("c", 1.0))
            table = entry["table"]
            radii = tuple(float(row[0]) for row in table)
            values = tuple(c * float(row[1]) for row in table)
            return TabulatedRadial(d=d, radii=radii, values=values)
    except KeyError as exc:
        raise ConfigError(f"kernels.{label} of type '{kind}' needs key {exc}") from exc
    except (KernelError, TypeError, IndexError) as exc:
        raise ConfigError(f"kernels.{label}: {exc}") from exc
    raise ConfigError(f"kernels.{label}.type must be one of tophat, gaussian, tabulated, zero; got {kind!r}")


@dataclass
class ExperimentConfig:
    resolved: dict
    pair: KernelPair
    source: str = "<string>"

    @property
    def d(self) -> int:
        return self.resolved["domain"]["d"]

    @property
    def L(self) -> float:
        return self.resolved["domain"]["L"]

    @property
    def seed(self) -> int:
        """Master seed of the simulation ensemble."""
        return self.resolved["simulate"]["seed"]

    def section(self, name: str) -> dict:
        return self.resolved[name]

    def to_toml(self) -> str:
        return tomli_w.dumps(_strip_none(self.resolved))

    @property
    def digest(self) -> str:
        """sha256 of the resolved config; the output directory does not affect results and is left out."""
        body = {k: v for k, v in _strip_none(self.resolved).items() if k != "out"}
        return hashlib.sha256(tomli_w.dumps(body).encode()).hexdigest()

    def header_lines(self) -> list:
        return [
            f"bdlp {__version__}",
            f"config_sha256 {self.digest}",
            f"master_seed {self.seed}",
        ]

    def with_overrides(self, seed=None, out=None, replicas=None) -> "ExperimentConfig":
        raw = _strip_none(self.resolved)
        if seed is not None:
            raw["seed"] = int(seed)
            raw["simulate"]["seed"] = int(seed)
        if out is not None:
            raw["out"] = str(out)
        if replicas is not None:
            raw["simulate"]["replicas"] = int(replicas)
        return _validate(raw, self.source)


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


def _positive(value, name: str, integer: bool = False):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok or not value > 0 or not math.isfinite(value):
        kind = "positive integer" if integer else "positive number"
        raise ConfigError(f"'{name}' must be a {kind}, got {value!r}")


def _validate(raw: dict, source: str) -> ExperimentConfig:
    _reject_unknown(raw, SCHEMA)
    for path in REQUIRED:
        node = raw
        for key in path:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"missing required key '{'.'.join(path)}'")
            node = node[key]
    cfg = _fill(raw, SCHEMA)
    # kernel tables are free-form; keep them as given
    cfg["kernels"] = dict(raw["kernels"])
    d, L = cfg["domain"]["d"], cfg["domain"]["L"]
    if d not in (1, 2, 3) or isinstance(d, bool):
        raise ConfigError(f"domain.d must be 1, 2 or 3, got {d!r}")
    _positive(L, "domain.L")
    if not isinstance(cfg["m"], (int, float)) or cfg["m"] < 0:
        raise ConfigError(f"'m' must be a nonnegative number, got {cfg['m']!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("'seed' must be a nonnegative integer")

    a_minus = build_kernel(cfg["kernels"]["competition"], d, "competition")
    a_plus = build_kernel(cfg["kernels"]["dispersal"], d, "dispersal")
    for label, k in (("competition", a_minus), ("dispersal", a_plus)):
        try:
            k.check_torus(L)
        except KernelError as exc:
            raise ConfigError(
                f"kernels.{label}: {exc}; a kernel's range must stay below L/2 so each pair "
                "interacts through a single periodic image"
            ) from exc
    pair = KernelPair(a_minus, a_plus, m=float(cfg["m"]), allow_pure_death=a_plus.is_zero)

    sim = cfg["simulate"]
    if sim["seed"] is None:
        sim["seed"] = cfg["seed"]
    if sim["observe_every"] is None:
        sim["observe_every"] = sim["t_end"] / 10
    _positive(sim["t_end"], "simulate.t_end")
    _positive(sim["observe_every"], "simulate.observe_every")
    _positive(sim["replicas"], "simulate.replicas", integer=True)
    _positive(sim["max_points"], "simulate.max_points", integer=True)
    _positive(sim["bins"], "simulate.bins", integer=True)
    if not isinstance(sim["initial_intensity"], (int, float)) or sim["initial_intensity"] < 0:
        raise ConfigError("simulate.initial_intensity must be nonnegative")

    hier = cfg["hierarchy"]
    if hier["t_end"] is None:
        hier["t_end"] = sim["t_end"]
    if hier["observe_every"] is None:
        hier["observe_every"] = sim["observe_every"]
    _positive(hier["grid_points"], "hierarchy.grid_points", integer=True)
    _positive(hier["dt"], "hierarchy.dt")
    _positive(hier["t_end"], "hierarchy.t_end")
    if hier["closure"] not in ("poisson", "kirkwood"):
        raise ConfigError(f"hierarchy.closure must be 'poisson' or 'kirkwood', got {hier['closure']!r}")

    st = cfg["stability"]
    if st["b"] is not None and (not isinstance(st["b"], (int, float)) or st["b"] < 0):
        raise ConfigError("stability.b must be nonnegative")
    _positive(st["n_max"], "stability.n_max", integer=True)
    _positive(st["trials"], "stability.trials", integer=True)

    bd = cfg["bounds"]
    if bd["variant"] not in ("B_full", "B_pos"):
        raise ConfigError("bounds.variant must be 'B_full' or 'B_pos'")
    if not bd["alpha2"] > bd["alpha1"]:
        raise ConfigError("bounds.alpha2 must exceed bounds.alpha1")
    if bd["k0_sup_root"] is None:
        bd["k0_sup_root"] = float(sim["initial_intensity"])
    _check_delta_epsilon(pair, cfg)

    if cfg["compare"]["r0"] is None:
        rng = a_plus.length_scale if not a_plus.is_zero else a_minus.length_scale
        cfg["compare"]["r0"] = float(min(rng if rng > 0 else L / 4, L / 2))
    return ExperimentConfig(cfg, pair, source)


def _check_delta_epsilon(pair: KernelPair, cfg: dict) -> None:
    bd = cfg["bounds"]
    if pair.a_plus.is_zero:
        return
    try:
        cert = certify(pair, cfg["stability"]["b"])
    except StabilityError as exc:
        raise ConfigError(f"stability: {exc}") from exc
    growth = pair.m <= pair.mass_plus
    key, other = ("delta", "epsilon") if growth else ("epsilon", "delta")
    if bd[other] is not None:
        regime = "m <= <a+>" if growth else "m > <a+>"
        raise ConfigError(f"bounds.{other} does not apply when {regime}; set bounds.{key} instead")
    if bd[key] is None or cert is None:
        return
    try:
        theorem2_constants(pair, cert, bd["k0_sup_root"], bd[key])
    except BoundsError as exc:
        raise ConfigError(f"bounds.{key}: {exc}") from exc


def parse_string(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return _validate(raw, source)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_string(text, str(path))
