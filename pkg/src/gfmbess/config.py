"""Model parameters, per-unit conversion and the flat ``section.key = value`` config format.

Physical quantities on the DC side (capacitances, inductances, resistances,
switching frequency, dead time) are read in SI units and stored in per unit.
AC-side filter, virtual impedance and controller values are read directly in
per unit.  See ``docs/config.md`` in the repository for the full key list.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

__all__ = [
    "BaseValues",
    "AcParams",
    "DcParams",
    "BatteryParams",
    "SystemParams",
    "ConfigError",
    "CONFIG_DIR_ENV",
    "to_per_unit",
    "from_per_unit",
    "load_config",
    "parse_config",
    "default_params",
    "config_digest",
    "with_gains",
    "with_dc_capacitance",
    "with_battery_order",
]

CONFIG_DIR_ENV = "GFMBESS_CONFIG_DIR"


class ConfigError(ValueError):
    """Raised for malformed config text or parameter invariant violations."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class BaseValues:
    """Per-unit bases.  ``v_ac_base`` is the AC peak line-to-neutral voltage."""

    s_base: float = 200e3
    v_ac_base: float = 480.0 * math.sqrt(2.0 / 3.0)
    omega_b: float = 2.0 * math.pi * 60.0

    def __post_init__(self):
        for name in ("s_base", "v_ac_base", "omega_b"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"must be finite and > 0, got {value}", key=f"bases.{name}")

    @property
    def v_dc_base(self) -> float:
        return 2.0 * self.v_ac_base

    @property
    def z_dc_base(self) -> float:
        return self.v_dc_base**2 / self.s_base

    @property
    def z_ac_base(self) -> float:
        # three-phase power S = 3/2 * V_peak * I_peak
        return 1.5 * self.v_ac_base**2 / self.s_base


@dataclass(frozen=True)
class AcParams:
    r_f: float = 0.003
    l_f: float = 0.08
    c_f: float = 0.074
    r_g: float = 0.01
    l_g: float = 0.2
    r_v: float = 0.0
    l_v: float = 0.2
    rp: float = 0.05
    rq: float = 0.05
    omega_z: float = 50.0
    kp_v: float = 0.59
    ki_v: float = 736.0
    kf_i: float = 0.0
    kp_i: float = 1.27
    ki_i: float = 14.3
    kf_v: float = 0.0
    p_star: float = 0.5
    q_star: float = 0.0
    v_star: float = 1.0
    omega_star: float = 1.0
    v_m_limit_scale: float = 1.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ConfigError(f"must be finite, got {value}", key=f"ac.{f.name}")
        nonneg = ("r_f", "r_g", "r_v", "l_v", "rp", "rq", "omega_z", "kp_v", "ki_v",
                  "kf_i", "kp_i", "ki_i", "kf_v", "v_m_limit_scale")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"must be >= 0, got {getattr(self, name)}", key=f"ac.{name}")
        for name in ("l_f", "c_f", "l_g"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"must be > 0, got {getattr(self, name)}", key=f"ac.{name}")


I_IN_MODELS = ("power_balance", "averaged")
LOAD_MODELS = ("impedance", "power")
DEADTIME_MODES = ("duty", "off")


@dataclass(frozen=True)
class DcParams:
    """DC link, boost converter and DC/DC controller.  ``c_dc`` and ``l_dc`` are per unit."""

    c_dc: float
    l_dc: float
    f_sw: float = 3200.0
    d_max: float = 0.9
    v_dc_star: float = 1.2
    kp_vdc: float = 3.0
    ki_vdc: float = 10.0
    kp_ib: float = 3.5
    ki_ib: float = 10.0
    k_pred: float = 0.0
    t_dead: float | None = None
    i_in_model: str = "power_balance"
    deadtime: str = "duty"

    def __post_init__(self):
        if self.t_dead is None:
            object.__setattr__(self, "t_dead", self.t_s)
        for name in ("c_dc", "l_dc", "f_sw", "v_dc_star", "t_dead"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"must be finite and > 0, got {value}", key=f"dc.{name}")
        if not 0.0 < self.d_max < 1.0:
            raise ConfigError(f"must lie in (0, 1), got {self.d_max}", key="dc.d_max")
        for name in ("kp_vdc", "ki_vdc", "kp_ib", "ki_ib", "k_pred"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("must be finite", key=f"dc.{name}")
        if self.i_in_model not in I_IN_MODELS:
            raise ConfigError(f"must be one of {I_IN_MODELS}", key="dc.i_in_model")
        if self.deadtime not in DEADTIME_MODES:
            raise ConfigError(f"must be one of {DEADTIME_MODES}", key="dc.deadtime")

    @property
    def t_s(self) -> float:
        return 1.0 / self.f_sw

    @property
    def gains(self) -> tuple[float, float, float, float, float]:
        return (self.kp_vdc, self.ki_vdc, self.kp_ib, self.ki_ib, self.k_pred)


@dataclass(frozen=True)
class BatteryParams:
    """Battery equivalent circuit, per unit.  Only the elements of the active order are read."""

    order: int = 0
    v_oc: float = 0.5
    r_b0: float = 0.0
    r_b1: float = 0.0
    r_b2: float = 0.0
    r_b3: float = 0.0
    r_b4: float = 0.0
    l_b1: float = 0.0
    l_b2: float = 0.0
    c_b1: float = 0.0
    c_b2: float = 0.0

    def __post_init__(self):
        if self.order not in (0, 2, 4):
            raise ConfigError(f"must be 0, 2 or 4, got {self.order}", key="battery.order")
        for f in dataclasses.fields(self):
            if f.name == "order":
                continue
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"must be finite and >= 0, got {value}", key=f"battery.{f.name}")
        if self.v_oc <= 0:
            raise ConfigError("must be > 0", key="battery.v_oc")
        required = {2: ("c_b1", "c_b2", "r_b3", "r_b4"),
                    4: ("c_b1", "c_b2", "r_b3", "r_b4", "l_b1", "l_b2", "r_b1", "r_b2")}
        for name in required.get(self.order, ()):
            if getattr(self, name) <= 0:
                raise ConfigError(f"must be > 0 for battery order {self.order}",
                                  key=f"battery.{name}")

    @property
    def r_steady_state(self) -> float:
        """DC resistance of the full circuit: RL branches short, RC branches act as resistors."""
        return self.r_b0 + self.r_b3 + self.r_b4


@dataclass(frozen=True)
class SystemParams:
    bases: BaseValues = field(default_factory=BaseValues)
    ac: AcParams = field(default_factory=AcParams)
    dc: DcParams = None  # type: ignore[assignment]
    battery: BatteryParams = field(default_factory=BatteryParams)
    p_l: float = 0.5
    q_l: float = 0.0
    load_model: str = "impedance"

    def __post_init__(self):
        if self.load_model not in LOAD_MODELS:
            raise ConfigError(f"must be one of {LOAD_MODELS}", key="load.model")
        if self.dc is None:
            object.__setattr__(self, "dc", _default_dc(self.bases))
        for name in ("p_l", "q_l"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("must be finite", key=f"load.{name}")

    @property
    def load(self) -> tuple[float, float]:
        return (self.p_l, self.q_l)


# ---------------------------------------------------------------------------
# per-unit conversion

_KINDS = ("resistance", "inductance", "capacitance")


def _z_base(bases: BaseValues, side: str) -> float:
    side = side.upper()
    if side == "DC":
        return bases.z_dc_base
    if side == "AC":
        return bases.z_ac_base
    raise ValueError(f"side must be 'AC' or 'DC', got {side!r}")


def to_per_unit(value: float, kind: str, bases: BaseValues, side: str = "DC") -> float:
    """Convert an SI resistance [Ohm], inductance [H] or capacitance [F] to per unit.

    Reactance-style scaling: ``r = R/Z``, ``l = w_b L/Z``, ``c = w_b C Z``.
    """
    z = _z_base(bases, side)
    if kind == "resistance":
        return value / z
    if kind == "inductance":
        return bases.omega_b * value / z
    if kind == "capacitance":
        return bases.omega_b * value * z
    raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")


def from_per_unit(value: float, kind: str, bases: BaseValues, side: str = "DC") -> float:
    """Inverse of :func:`to_per_unit`."""
    z = _z_base(bases, side)
    if kind == "resistance":
        return value * z
    if kind == "inductance":
        return value * z / bases.omega_b
    if kind == "capacitance":
        return value / (bases.omega_b * z)
    raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")


def _default_dc(bases: BaseValues) -> DcParams:
    return DcParams(c_dc=to_per_unit(2e-3, "capacitance", bases),
                    l_dc=to_per_unit(3e-3, "inductance", bases))


# ---------------------------------------------------------------------------
# config file parsing

# key -> (section attribute, field, conversion kind or None for pass-through, type)
_SI_KEYS = {
    "dc.c_dc": "capacitance",
    "dc.l_dc": "inductance",
    "battery.r_b0": "resistance",
    "battery.r_b1": "resistance",
    "battery.r_b2": "resistance",
    "battery.r_b3": "resistance",
    "battery.r_b4": "resistance",
    "battery.l_b1": "inductance",
    "battery.l_b2": "inductance",
    "battery.c_b1": "capacitance",
    "battery.c_b2": "capacitance",
}
_STRING_KEYS = {"dc.i_in_model", "dc.deadtime", "battery.r_b0_preset", "load.model"}
_INT_KEYS = {"battery.order"}
_SCALAR_SECTIONS = {
    "bases": [f.name for f in dataclasses.fields(BaseValues)],
    "ac": [f.name for f in dataclasses.fields(AcParams)],
    "dc": [f.name for f in dataclasses.fields(DcParams)],
    "battery": [f.name for f in dataclasses.fields(BatteryParams)] + ["r_b0_preset"],
    "load": ["p_l", "q_l", "model"],
}
KNOWN_KEYS = frozenset(f"{s}.{k}" for s, keys in _SCALAR_SECTIONS.items() for k in keys)
R_B0_PRESETS = ("table", "steady_state")


def _parse_value(key: str, raw: str, lineno: int) -> Any:
    if key in _STRING_KEYS:
        return raw.strip().strip("\"'")
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r}", key=key, line=lineno) from None


def parse_config(text: str, source: str = "<string>") -> SystemParams:
    """Build :class:`SystemParams` from config text.  Omitted keys take their defaults."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value' in {source}", line=lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key in {source}", key=key, line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key in {source}", key=key, line=lineno)
        values[key] = _parse_value(key, raw, lineno)
        lines[key] = lineno

    def build(cls, section, convert=None, **extra):
        kwargs = dict(extra)
        for k, v in values.items():
            sec, name = k.split(".", 1)
            if sec != section or name == "r_b0_preset":
                continue
            kwargs[name] = convert(k, v) if convert else v
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], key=exc.key,
                              line=lines.get(exc.key or "")) from None

    bases = build(BaseValues, "bases")

    def si(key, value):
        kind = _SI_KEYS.get(key)
        if kind is None:
            return value
        if not math.isfinite(value) or value < 0:
            raise ConfigError(f"physical value must be >= 0, got {value}", key=key,
                              line=lines[key])
        return to_per_unit(value, kind, bases, "DC")

    ac = build(AcParams, "ac")
    dc_defaults = {}
    if "dc.c_dc" not in values:
        dc_defaults["c_dc"] = to_per_unit(2e-3, "capacitance", bases)
    if "dc.l_dc" not in values:
        dc_defaults["l_dc"] = to_per_unit(3e-3, "inductance", bases)
    dc = build(DcParams, "dc", si, **dc_defaults)
    battery = build(BatteryParams, "battery", si)
    preset = values.get("battery.r_b0_preset", "table")
    if preset not in R_B0_PRESETS:
        raise ConfigError(f"must be one of {R_B0_PRESETS}", key="battery.r_b0_preset",
                          line=lines["battery.r_b0_preset"])
    if preset == "steady_state" and battery.order == 0:
        battery = dataclasses.replace(battery, r_b0=battery.r_steady_state, r_b3=0.0, r_b4=0.0)
    load = {k.split(".")[1]: v for k, v in values.items() if k.startswith("load.")}
    if "model" in load:
        load["load_model"] = load.pop("model")
    try:
        return SystemParams(bases=bases, ac=ac, dc=dc, battery=battery, **load)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], key=exc.key,
                          line=lines.get(exc.key or "")) from None


def _resolve(path: str | os.PathLike) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir and (Path(env_dir) / p).exists():
        return Path(env_dir) / p
    return p


def load_config(path: str | os.PathLike) -> SystemParams:
    """Read a config file.

    Relative paths that do not exist in the working directory are looked up in
    the directory named by the ``GFMBESS_CONFIG_DIR`` environment variable.
    """
    resolved = _resolve(path)
    try:
        text = resolved.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}") from None
    return parse_config(text, source=str(resolved))


def default_config_text() -> str:
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir and (Path(env_dir) / "default.cfg").exists():
        return (Path(env_dir) / "default.cfg").read_text()
    return resources.files("gfmbess").joinpath("data/default.cfg").read_text()


def default_params(order: int | None = None, r_b0_preset: str | None = None) -> SystemParams:
    """Shipped defaults (200 kVA rating, DC-side values from the reference hardware).

    ``order`` and ``r_b0_preset`` override the corresponding config keys.
    """
    text = default_config_text()
    extra = []
    if order is not None:
        extra.append(f"battery.order = {order}")
    if r_b0_preset is not None:
        extra.append(f"battery.r_b0_preset = {r_b0_preset}")
    if extra:
        drop = {line.split("=")[0].strip() for line in extra}
        kept = [ln for ln in text.splitlines()
                if ln.split("#", 1)[0].split("=")[0].strip() not in drop]
        text = "\n".join(kept + extra)
    return parse_config(text, source="default.cfg")


def config_digest(params: SystemParams) -> str:
    """SHA-256 over the resolved parameter values (full float precision)."""
    flat = []
    for section in ("bases", "ac", "dc", "battery"):
        obj = getattr(params, section)
        for f in dataclasses.fields(obj):
            flat.append(f"{section}.{f.name}={getattr(obj, f.name)!r}")
    flat.append(f"load.p_l={params.p_l!r}")
    flat.append(f"load.q_l={params.q_l!r}")
    flat.append(f"load.model={params.load_model}")
    return hashlib.sha256("\n".join(flat).encode()).hexdigest()


# ---------------------------------------------------------------------------
# convenience overrides

def with_gains(params: SystemParams, kp_vdc=None, ki_vdc=None, kp_ib=None, ki_ib=None,
               k_pred=None) -> SystemParams:
    changes = {k: v for k, v in dict(kp_vdc=kp_vdc, ki_vdc=ki_vdc, kp_ib=kp_ib, ki_ib=ki_ib,
                                      k_pred=k_pred).items() if v is not None}
    return dataclasses.replace(params, dc=dataclasses.replace(params.dc, **changes))


def with_dc_capacitance(params: SystemParams, c_farad: float) -> SystemParams:
    if not c_farad > 0:
        raise ConfigError(f"capacitance must be > 0, got {c_farad}", key="dc.c_dc")
    c_pu = to_per_unit(c_farad, "capacitance", params.bases, "DC")
    return dataclasses.replace(params, dc=dataclasses.replace(params.dc, c_dc=c_pu))


def with_battery_order(params: SystemParams, order: int, *, lump: bool = False) -> SystemParams:
    """Switch the battery model order.

    With ``lump=True`` and ``order == 0`` the RC branch resistances are folded
    into ``r_b0`` (the steady-state preset), so all orders share one DC resistance.
    """
    bat = dataclasses.replace(params.battery, order=order)
    if lump and order == 0:
        bat = dataclasses.replace(bat, r_b0=params.battery.r_steady_state, r_b3=0.0, r_b4=0.0)
    return dataclasses.replace(params, battery=bat)
