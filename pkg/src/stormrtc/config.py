"""Scenario files: TOML parsing, validation findings and object construction.

A scenario file is a TOML document with ``schema_version = 1`` and the
tables ``[simulation]``, ``[watershed]``, ``[reservoir]``, ``[channel]``,
``[forcing]``, ``[controllers]``, plus optional ``[initial]``,
``[metrics]`` and ``[output]``. The README documents every key.

Problems come in two grades. A :class:`ConfigError` means the document
cannot be read at all (bad TOML, wrong schema version, wrong value types).
Everything else is reported as :class:`Finding` entries: ``error`` findings
block a run, ``warning`` findings (stability advisories) do not.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from . import channel as ch
from . import reservoir as rs
from . import watershed as ws
from .forcing import (EtSeries, ForcingError, IdfCurve, RainSeries, design_storm,
                      load_et_csv, load_rain_csv, synthetic_storms)
from .metrics import MetricsWindow
from .mpc import Mpc, MpcConfig
from .plant import Controller, Forcing, Plant, PlantState
from .reactive import REACTIVE

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
CONTROLLERS = ("passive", "onoff", "detention", "dlqr", "dlqi", "mpc")
_REQUIRED = object()


class ConfigError(ValueError):
    """The scenario file cannot be parsed."""


@dataclass(frozen=True)
class Finding:
    level: str  # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.level}: {self.message}"


class _Table:
    """Typed access to one TOML table that remembers which keys were read."""

    def __init__(self, raw, where: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"[{where}] must be a table")
        self.raw = raw
        self.where = where
        self.seen: set[str] = set()

    def __contains__(self, key):
        return key in self.raw

    def get(self, key: str, default=_REQUIRED, kind=float):
        self.seen.add(key)
        if key not in self.raw:
            if default is _REQUIRED:
                raise ConfigError(f"{self._name(key)} is required")
            return default
        value = self.raw[key]
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{self._name(key)} must be a number")
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{self._name(key)} must be an integer")
            return value
        if not isinstance(value, kind):
            raise ConfigError(f"{self._name(key)} has the wrong type")
        return value

    def table(self, key: str, required: bool = False) -> "_Table":
        if key not in self.raw and not required:
            self.seen.add(key)
            return _Table({}, self._name(key))
        return _Table(self.get(key, kind=dict), self._name(key))

    def _name(self, key: str) -> str:
        return f"{self.where}.{key}" if self.where else key

    def unknown(self) -> list[Finding]:
        return [Finding("error", f"unknown key {self._name(k)}")
                for k in sorted(set(self.raw) - self.seen)]


@dataclass
class ControllerSetup:
    name: str
    interval: float
    params: dict = field(default_factory=dict)

    def build(self) -> Controller:
        if self.name == "mpc":
            return Mpc(MpcConfig(**self.params))
        return REACTIVE[self.name](**self.params)


@dataclass
class Scenario:
    name: str
    plant: Plant
    forcing: Forcing
    duration: float
    seed: int
    controllers: list[ControllerSetup]
    windows: list[MetricsWindow]
    h_c_lim: float
    initial: dict
    out: Path | None = None
    decimate: int = 1

    def initial_state(self) -> PlantState:
        return self.plant.initial_state(**self.initial)

    def controller(self, name: str) -> ControllerSetup:
        for setup in self.controllers:
            if setup.name == name:
                return setup
        raise KeyError(name)


def read(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    return raw


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _field_or_file(t: _Table, key: str, default, base: Path):
    """A per-cell parameter given as a number or a matrix file path."""
    if key not in t:
        t.seen.add(key)
        return default
    value = t.raw[key]
    t.seen.add(key)
    if isinstance(value, str):
        return ws.load_matrix(_resolve(base, value))
    return t.get(key)


_SOIL_KEYS = ("manning", "h0", "k_sat", "suction", "moisture_deficit")


def _soil(t: _Table) -> dict:
    return {k: t.get(k) for k in _SOIL_KEYS if k in t}


def _watershed(t: _Table, base: Path, findings: list) -> ws.WatershedGrid:
    kind = t.get("kind", "v_tilted", str)
    dx, dy = t.get("dx", 20.0), t.get("dy", 20.0)
    k_f = t.raw.get("k_f", "consistent")
    t.seen.add("k_f")
    if k_f == "consistent":
        k_f = ws.consistent_k_f(dx, dy) if dx > 0 and dy > 0 else 1.0
    elif isinstance(k_f, (int, float)) and not isinstance(k_f, bool):
        k_f = float(k_f)
    else:
        raise ConfigError("watershed.k_f must be a number or \"consistent\"")
    common = dict(k_f=k_f, f_d_min=t.get("f_d_min", 5.0), min_slope=t.get("min_slope", 1e-4),
                  outlet_slope=t.get("outlet_slope", None))
    if kind == "v_tilted":
        per, imp = t.table("pervious"), t.table("impervious")
        kwargs = dict(rows=t.get("rows", 50, int), cols=t.get("cols", 81, int), dx=dx, dy=dy,
                      hill_slope=t.get("hill_slope", 0.05),
                      channel_slope=t.get("channel_slope", 0.02),
                      pervious=_soil(per), impervious=_soil(imp), **common)
        findings += per.unknown() + imp.unknown()
        if kwargs["rows"] < 2 or kwargs["cols"] < 3 or kwargs["cols"] % 2 == 0:
            raise ws.GridError("v_tilted grids need rows >= 2 and an odd cols >= 3")
        return ws.v_tilted_grid(**kwargs)
    if kind == "matrix":
        outlet = t.get("outlet", kind=list)
        if len(outlet) != 2 or not all(isinstance(i, int) for i in outlet):
            raise ConfigError("watershed.outlet must be [row, col]")
        dem = ws.load_matrix(_resolve(base, t.get("dem", kind=str)))
        defaults = {"manning": 0.3, "h0": 10.0, "k_sat": 10.92, "suction": 110.0,
                    "moisture_deficit": 0.453}
        cells = {k: _field_or_file(t, k, v, base) for k, v in defaults.items()}
        return ws.WatershedGrid(dem, dx, dy, tuple(outlet), **cells, **common)
    raise ConfigError(f"watershed.kind must be 'v_tilted' or 'matrix', got {kind!r}")


def _reservoir(t: _Table, base: Path) -> rs.ReservoirSpec:
    kwargs = {k: t.get(k) for k in ("k_o", "k_s", "crest", "h_o", "porosity") if k in t}
    if "stage_area" in t:
        kwargs["area"] = rs.StageArea.from_csv(_resolve(base, t.get("stage_area", kind=str)))
    elif "area" in t:
        kwargs["area"] = t.get("area")
    if "orifice_diameter" in t:
        d = t.get("orifice_diameter")
        if d <= 0:
            raise rs.ReservoirError("orifice_diameter must be positive")
        if "h_m" in t:
            raise rs.ReservoirError("give either h_m or orifice_diameter, not both")
        return rs.ReservoirSpec.with_orifice_diameter(d, **kwargs)
    if "h_m" in t:
        kwargs["h_m"] = t.get("h_m")
    return rs.ReservoirSpec(**kwargs)


def _channel(t: _Table) -> ch.ChannelSpec:
    return ch.ChannelSpec.uniform(
        n_reaches=t.get("n_reaches", 100, int), width=t.get("width", 3.0),
        length=t.get("length", 30.0), manning=t.get("manning", 0.3),
        bed_slope=t.get("bed_slope", 0.025), outlet_slope=t.get("outlet_slope", 0.025))


def _storm(t: _Table) -> RainSeries:
    duration_min = t.get("duration_min")
    b, c = t.get("b", 15.0), t.get("c", 0.8)
    if "depth_mm" in t:
        if "a" in t:
            raise ForcingError("give either a or depth_mm for a storm, not both")
        idf = IdfCurve.from_depth(t.get("depth_mm"), duration_min, b, c,
                                  return_period=t.get("return_period", 0.0))
    else:
        idf = IdfCurve(t.get("a"), b, c, return_period=t.get("return_period", 0.0))
    return design_storm(idf, duration_min * 60.0, t.get("step_s", 300.0),
                        method=t.get("method", "alternating-block", str),
                        peak_position=t.get("peak_position", 0.5))


def _forcing(t: _Table, base: Path, duration: float, seed: int, findings: list):
    """Returns the forcing, the split times (s) between rain events and
    whether rain also falls on the pond."""
    kind = t.get("kind", kind=str)
    splits: list[float] = []
    if kind == "design_storms":
        raw = t.get("storms", kind=list)
        if not raw:
            raise ConfigError("forcing.storms must list at least one storm")
        gap = t.get("gap_h", 12.0) * 3600.0
        if gap < 0:
            raise ForcingError("gap_h must be non-negative")
        rain = None
        for k, item in enumerate(raw):
            st = _Table(item, f"forcing.storms[{k}]")
            storm = _storm(st)
            findings += st.unknown()
            if rain is None:
                rain = storm
            else:
                splits.append(rain.end + gap / 2.0)
                rain = rain.then(storm, gap)
        rain = rain.padded(duration)
    elif kind == "csv":
        rain = load_rain_csv(_resolve(base, t.get("rain_csv", kind=str)),
                             step=t.get("step_s", None),
                             fill_gaps=t.get("fill_gaps", False, bool))
        rain = RainSeries(rain.values, rain.step, 0.0, rain.origin)
    elif kind == "synthetic":
        rng = np.random.default_rng(int(t.get("seed", seed, int)))
        rain = synthetic_storms(duration, t.get("step_s", 3600.0), rng,
                                mean_gap_h=t.get("mean_gap_h", 72.0),
                                mean_duration_h=t.get("mean_duration_h", 4.0),
                                mean_intensity=t.get("mean_intensity", 6.0))
    else:
        raise ConfigError(f"forcing.kind must be design_storms, csv or synthetic, got {kind!r}")
    if rain.end < duration - 1e-6:
        findings.append(Finding("error", "rain series ends before the simulation span"))

    if "et_csv" in t:
        et: EtSeries | float = load_et_csv(_resolve(base, t.get("et_csv", kind=str)))
    else:
        et = t.get("et_mm_day", 2.0)
        if et < 0:
            raise ForcingError("et_mm_day must be non-negative")
    evaporation = t.get("evaporation_mm_day", None)
    if evaporation is not None and evaporation < 0:
        raise ForcingError("evaporation_mm_day must be non-negative")
    return Forcing(rain, et, evaporation), splits, t.get("rain_on_pond", True, bool)


def _controllers(t: _Table, mpc_interval_default: float, findings: list):
    names = t.get("run", list(CONTROLLERS), list)
    reactive_interval = t.get("interval_s", 900.0)
    setups = []
    for name in names:
        if name not in CONTROLLERS:
            findings.append(Finding("error", f"unknown controller {name!r}"))
            continue
        sub = t.table(name)
        params = dict(sub.raw)
        interval = params.pop("interval_s", None)
        if name == "mpc":
            allowed = {f.name for f in fields(MpcConfig)}
            if interval is not None:
                params["interval"] = interval
            interval = params.get("interval", mpc_interval_default)
        else:
            cls = REACTIVE[name]
            allowed = {f.name for f in fields(cls)} if is_dataclass(cls) else set()
            interval = reactive_interval if interval is None else interval
        for key in sorted(set(params) - allowed):
            findings.append(Finding("error", f"unknown key controllers.{name}.{key}"))
            params.pop(key)
        for key, value in params.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"controllers.{name}.{key} must be a number")
        setups.append(ControllerSetup(name, float(interval), params))
    for key in t.raw:
        if key not in ("run", "interval_s") and key not in CONTROLLERS:
            findings.append(Finding("error", f"unknown key controllers.{key}"))
    t.seen.update(t.raw)
    return setups


def _windows(splits, duration, dt, h_c_lim):
    n = int(round(duration / dt))
    bounds = [0] + [min(int(round(s / dt)), n) for s in splits] + [n]
    return [MetricsWindow(a, b, h_c_lim, dt) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def build(raw: dict, base: Path = Path(".")) -> tuple[Scenario | None, list[Finding]]:
    """Construct a scenario; returns ``(None, findings)`` when values are invalid."""
    findings: list[Finding] = []
    top = _Table(raw, "")
    top.get("schema_version", kind=int)
    name = top.get("name", "scenario", str)
    sim = top.table("simulation", required=True)
    dt = sim.get("dt", 1.0)
    duration = sim.get("duration_h") * 3600.0
    seed = sim.get("seed", 0, int)
    if dt <= 0 or duration <= 0:
        findings.append(Finding("error", "dt and duration_h must be positive"))
        return None, findings

    parts = {}
    builders = {
        "watershed": lambda t: _watershed(t, base, findings),
        "reservoir": lambda t: _reservoir(t, base),
        "channel": _channel,
        "forcing": lambda t: _forcing(t, base, duration, seed, findings),
    }
    for key, make in builders.items():
        t = top.table(key, required=True)
        try:
            parts[key] = make(t)
        except (ws.GridError, rs.ReservoirError, ch.ChannelError, ForcingError,
                OSError) as exc:
            findings.append(Finding("error", f"{key}: {exc}"))
        findings += t.unknown()

    init = top.table("initial")
    initial = {"h_r": init.get("h_r", 0.0), "u": init.get("u", 1.0),
               "f_d0": init.get("f_d0", 10.0), "h_c": init.get("h_c", 0.0)}
    if min(initial.values()) < 0 or initial["u"] > 1 or initial["f_d0"] <= 0:
        findings.append(Finding("error", "initial depths must be non-negative, u in [0, 1], "
                                         "f_d0 positive"))
    findings += init.unknown()

    met = top.table("metrics")
    h_c_lim = met.get("h_c_lim", 1.8)
    split_h = met.get("split_h", None, list)
    findings += met.unknown()
    if h_c_lim <= 0:
        findings.append(Finding("error", "metrics.h_c_lim must be positive"))

    ctl = top.table("controllers", required=True)
    setups = _controllers(ctl, MpcConfig().interval, findings)
    for s in setups:
        try:
            s.build()
        except (TypeError, ValueError) as exc:
            findings.append(Finding("error", f"controllers.{s.name}: {exc}"))
        if s.interval <= 0 or abs(s.interval / dt - round(s.interval / dt)) > 1e-9:
            findings.append(Finding("error", f"controllers.{s.name}: control interval must "
                                             f"be a positive multiple of dt"))

    out = top.table("output")
    out_dir = out.get("dir", None, str)
    decimate = out.get("decimate", 1, int)
    findings += out.unknown() + sim.unknown() + top.unknown()
    if decimate < 1:
        findings.append(Finding("error", "output.decimate must be at least 1"))

    if any(f.level == "error" for f in findings):
        return None, findings
    forcing, splits, rain_on_pond = parts["forcing"]
    if split_h is not None:
        splits = [float(s) * 3600.0 for s in split_h]
    plant = Plant(parts["watershed"], parts["reservoir"], parts["channel"], dt,
                  rain_on_pond=rain_on_pond)
    scenario = Scenario(name, plant, forcing, duration, seed, setups,
                        _windows(splits, duration, dt, h_c_lim), h_c_lim, initial,
                        _resolve(base, out_dir) if out_dir else None, decimate)
    findings += advisories(scenario)
    return scenario, findings


def advisories(scenario: Scenario) -> list[Finding]:
    """Stability warnings for the explicit steps, evaluated without simulating.

    The watershed bound uses the peak rain intensity; the channel bound uses
    a uniform depth of twice the flood limit.
    """
    plant = scenario.plant
    out = []
    peak = float(scenario.forcing.rain.values.max(initial=0.0))
    ws_dt = plant.grid.max_stable_dt(peak)
    if plant.dt > ws_dt:
        out.append(Finding("warning", f"dt {plant.dt:g} s exceeds the watershed advisory "
                                      f"{ws_dt:.3g} s at {peak:.3g} mm/h"))
    ch_dt = ch.max_stable_dt(plant.channel, np.full(plant.channel.n, 2.0 * scenario.h_c_lim))
    if plant.dt > ch_dt:
        out.append(Finding("warning", f"dt {plant.dt:g} s exceeds the channel advisory "
                                      f"{ch_dt:.3g} s"))
    for s in scenario.controllers:
        if s.name == "mpc":
            internal = s.params.get("dt_internal") or plant.dt
            if internal > ch_dt:
                out.append(Finding("warning", f"mpc dt_internal {internal:g} s exceeds the "
                                              f"channel advisory {ch_dt:.3g} s"))
            if abs(internal / plant.dt - round(internal / plant.dt)) > 1e-9:
                out.append(Finding("error", "mpc dt_internal must be a multiple of dt"))
    return out


def load(path) -> tuple[Scenario | None, list[Finding]]:
    path = Path(path)
    return build(read(path), path.parent)


def validate(path) -> list[Finding]:
    """Findings for a scenario file; raises :class:`ConfigError` if it cannot be parsed."""
    return load(path)[1]


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    path = Path(__file__).parent / "configs" / f"{name}.toml"
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return path
