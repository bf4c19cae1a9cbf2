"""Scenario files: YAML documents with fixed sections and strict keys.

Every numeric field is in SI units.  Unknown keys are rejected, missing
optional sections take the shipped defaults, and ``schema_version`` is
required.  Errors carry the 1-based line and column of the offending node.

Example::

    schema_version: 1
    waypoints:
      polyline: [[0, 0], [300, 0]]
      spacing: 10
    vehicle: {initial: {d: 2.0, v: 5.0}}
    planner: {enabled: false}
    acc: {cruise_speed: 5.0}
    sim: {duration: 20, seed: 3}
"""

from __future__ import annotations

import math
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .acc import DEFAULT_Q_PROC, DEFAULT_R_MEAS, AccParams
from .bezier import CornerSpec
from .errors import ParseError
from .geometry import Point2
from .lateral_planner import CostWeights, SamplingGrid
from .sim import AccConfig, ObstacleSpec, PlannerConfig, Scenario, SimConfig, VehicleConfig
from .stanley import StanleySchedule

SCHEMA_VERSION = 1
SECTIONS = ("waypoints", "corners", "obstacles", "vehicle", "planner", "acc", "stanley", "sim")
TOP_LEVEL = ("schema_version", "name") + SECTIONS


class _Node:
    """Parsed value plus the position of its YAML node."""

    __slots__ = ("value", "line", "column")

    def __init__(self, value, mark):
        self.value = value
        self.line = mark.line + 1
        self.column = mark.column + 1


def _wrap(node: yaml.Node, loader: yaml.SafeLoader) -> _Node:
    if isinstance(node, yaml.MappingNode):
        out: dict[str, tuple[_Node, _Node]] = {}
        for k, v in node.value:
            key = _wrap(k, loader)
            if not isinstance(key.value, str):
                raise ParseError("mapping keys must be strings", key.line, key.column)
            if key.value in out:
                raise ParseError(f"duplicate key {key.value!r}", key.line, key.column)
            out[key.value] = (key, _wrap(v, loader))
        return _Node(out, node.start_mark)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_wrap(v, loader) for v in node.value], node.start_mark)
    return _Node(loader.construct_object(node), node.start_mark)


def _compose(text: str) -> _Node:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ParseError(f"invalid YAML: {exc.problem or exc}", line, col) from None
    finally:
        loader.dispose()
    if root is None:
        raise ParseError("scenario file is empty", 1, 1)
    return _wrap(root, yaml.SafeLoader(""))


class _Reader:
    """Typed access to one mapping section with unknown-key rejection."""

    def __init__(self, node: _Node, section: str, allowed):
        if not isinstance(node.value, dict):
            raise ParseError(f"section {section!r} must be a mapping", node.line, node.column, section)
        self.node = node
        self.section = section
        for key, (knode, _) in node.value.items():
            if key not in allowed:
                raise ParseError(
                    f"unknown key {key!r} in section {section!r}", knode.line, knode.column, section
                )

    def has(self, key: str) -> bool:
        return key in self.node.value

    def raw(self, key: str) -> _Node:
        return self.node.value[key][1]

    def error(self, msg: str, node: Optional[_Node] = None):
        node = node or self.node
        return ParseError(msg, node.line, node.column, self.section)

    def number(self, key: str, default=None, positive=False, nonneg=False) -> float:
        if not self.has(key):
            if default is None:
                raise self.error(f"missing required key {key!r} in section {self.section!r}")
            return default
        return _number(self.raw(key), f"{self.section}.{key}", self.section, positive, nonneg)

    def integer(self, key: str, default: int) -> int:
        if not self.has(key):
            return default
        n = self.raw(key)
        if isinstance(n.value, bool) or not isinstance(n.value, int):
            raise self.error(f"{self.section}.{key} must be an integer", n)
        return n.value

    def flag(self, key: str, default: bool) -> bool:
        if not self.has(key):
            return default
        n = self.raw(key)
        if not isinstance(n.value, bool):
            raise self.error(f"{self.section}.{key} must be true or false", n)
        return n.value

    def text(self, key: str, default: str, choices=None) -> str:
        if not self.has(key):
            return default
        n = self.raw(key)
        if not isinstance(n.value, str) or (choices and n.value not in choices):
            want = f" (one of {', '.join(choices)})" if choices else ""
            raise self.error(f"{self.section}.{key} must be a string{want}", n)
        return n.value

    def vector(self, key: str, size: int, default=None) -> tuple:
        if not self.has(key):
            if default is None:
                raise self.error(f"missing required key {key!r} in section {self.section!r}")
            return tuple(default)
        return _vector(self.raw(key), size, f"{self.section}.{key}", self.section)

    def sub(self, key: str, allowed) -> Optional["_Reader"]:
        if not self.has(key):
            return None
        return _Reader(self.raw(key), f"{self.section}.{key}", allowed)


def _number(n: _Node, name: str, section: str, positive=False, nonneg=False) -> float:
    v = n.value
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParseError(f"{name} must be a finite number", n.line, n.column, section)
    if positive and not v > 0:
        raise ParseError(f"{name} must be positive", n.line, n.column, section)
    if nonneg and v < 0:
        raise ParseError(f"{name} must be non-negative", n.line, n.column, section)
    return float(v)


def _vector(n: _Node, size: int, name: str, section: str) -> tuple:
    if not isinstance(n.value, list) or len(n.value) != size:
        raise ParseError(f"{name} must be a list of {size} numbers", n.line, n.column, section)
    return tuple(_number(item, name, section) for item in n.value)


def _points(n: _Node, name: str, section: str) -> np.ndarray:
    if not isinstance(n.value, list):
        raise ParseError(f"{name} must be a list of [x, y] pairs", n.line, n.column, section)
    return np.array([_vector(item, 2, name, section) for item in n.value], dtype=float).reshape(-1, 2)


def densify(polyline: np.ndarray, spacing: float) -> np.ndarray:
    """Points every ``spacing`` metres along each segment, keeping the vertices."""
    out = [polyline[0]]
    for a, b in zip(polyline[:-1], polyline[1:]):
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / spacing - 1e-9)))
        out.extend(a + (b - a) * (k / n) for k in range(1, n + 1))
    return np.array(out)


def _matrix(r: _Reader, key: str, default: np.ndarray) -> np.ndarray:
    """3x3 matrix given in full or as its diagonal."""
    if not r.has(key):
        return default.copy()
    n = r.raw(key)
    name = f"{r.section}.{key}"
    if isinstance(n.value, list) and n.value and isinstance(n.value[0].value, list):
        if len(n.value) != 3:
            raise r.error(f"{name} must be 3x3", n)
        m = np.array([_vector(row, 3, name, r.section) for row in n.value])
    else:
        m = np.diag(_vector(n, 3, name, r.section))
    if not np.allclose(m, m.T) or np.min(np.linalg.eigvalsh(0.5 * (m + m.T))) < -1e-12:
        raise r.error(f"{name} must be symmetric positive semidefinite", n)
    return m


def _waypoints(n: _Node) -> np.ndarray:
    if isinstance(n.value, list):
        return _points(n, "waypoints", "waypoints")
    r = _Reader(n, "waypoints", ("polyline", "spacing"))
    if not r.has("polyline"):
        raise r.error("waypoints mapping needs a 'polyline' list")
    poly = _points(r.raw("polyline"), "waypoints.polyline", "waypoints")
    spacing = r.number("spacing", 1.0, positive=True)
    return densify(poly, spacing)


def _corners(n: _Node) -> list[CornerSpec]:
    if not isinstance(n.value, list):
        raise ParseError("corners must be a list", n.line, n.column, "corners")
    out = []
    for item in n.value:
        r = _Reader(item, "corners", ("w1", "w2", "w3", "d"))
        w = [Point2(*r.vector(k, 2)) for k in ("w1", "w2", "w3")]
        d = r.vector("d", 3, (3.0, 3.0, 8.0))
        out.append(CornerSpec(*w, *d))
    return out


def _obstacles(n: _Node) -> list[ObstacleSpec]:
    if not isinstance(n.value, list):
        raise ParseError("obstacles must be a list", n.line, n.column, "obstacles")
    out = []
    keys = ("center", "length", "width", "heading", "velocity", "spacing", "name")
    for item in n.value:
        r = _Reader(item, "obstacles", keys)
        out.append(
            ObstacleSpec(
                center=r.vector("center", 2),
                length=r.number("length", 4.5, positive=True),
                width=r.number("width", 1.8, positive=True),
                heading=r.number("heading", 0.0),
                velocity=r.vector("velocity", 2, (0.0, 0.0)),
                spacing=r.number("spacing", 0.5, positive=True),
                name=r.text("name", ""),
            )
        )
    return out


def _vehicle(n: Optional[_Node]) -> VehicleConfig:
    base = VehicleConfig()
    if n is None:
        return base
    r = _Reader(n, "vehicle", ("wheelbase", "length", "width", "initial"))
    init = r.sub("initial", ("s", "d", "heading_offset", "v"))
    kw = dict(
        wheelbase=r.number("wheelbase", base.wheelbase, positive=True),
        length=r.number("length", base.length, positive=True),
        width=r.number("width", base.width, positive=True),
    )
    if init is not None:
        kw.update(
            s0=init.number("s", base.s0, nonneg=True),
            d0=init.number("d", base.d0),
            heading_offset=init.number("heading_offset", base.heading_offset),
            v0=init.number("v", base.v0, nonneg=True),
        )
    return VehicleConfig(**kw)


def _planner(n: Optional[_Node]) -> PlannerConfig:
    base = PlannerConfig()
    if n is None:
        return base
    r = _Reader(n, "planner", ("enabled", "grid", "weights", "safety_margin", "circles", "sample_step", "horizon"))
    grid = base.grid
    g = r.sub("grid", ("d_min", "d_max", "delta_d", "l_min", "l_max", "delta_l", "road_half_width"))
    if g is not None:
        half = g.number("road_half_width", math.inf, positive=True)
        try:
            grid = SamplingGrid(
                g.number("d_min", grid.d_min),
                g.number("d_max", grid.d_max),
                g.number("delta_d", grid.delta_d, positive=True),
                g.number("l_min", grid.l_min, positive=True),
                g.number("l_max", grid.l_max, positive=True),
                g.number("delta_l", grid.delta_l, positive=True),
                None if math.isinf(half) else half,
            )
        except ParseError:
            raise
        except ValueError as exc:
            raise g.error(str(exc)) from None
    weights = base.weights
    w = r.sub("weights", tuple(f.name for f in fields(CostWeights)))
    if w is not None:
        try:
            weights = CostWeights(
                **{f.name: w.number(f.name, getattr(weights, f.name), nonneg=True) for f in fields(CostWeights)}
            )
        except ParseError:
            raise
        except ValueError as exc:
            raise w.error(str(exc)) from None
    return PlannerConfig(
        enabled=r.flag("enabled", base.enabled),
        grid=grid,
        weights=weights,
        safety_margin=r.number("safety_margin", base.safety_margin, nonneg=True),
        circles=r.integer("circles", base.circles),
        sample_step=r.number("sample_step", base.sample_step, positive=True),
        horizon=r.number("horizon", base.horizon, positive=True),
    )


def _acc(n: Optional[_Node]) -> AccConfig:
    base = AccConfig()
    if n is None:
        return base
    keys = (
        "tau_h", "d0", "T_L", "K_L", "T", "rho", "r", "u_max",
        "cruise_speed", "Q_proc", "R_meas", "noise", "detection_range", "corridor_margin",
    )
    r = _Reader(n, "acc", keys)
    p = base.params
    rho = r.vector("rho", 3, (p.rho1, p.rho2, p.rho3))
    try:
        params = AccParams(
            tau_h=r.number("tau_h", p.tau_h),
            d0=r.number("d0", p.d0),
            T_L=r.number("T_L", p.T_L),
            K_L=r.number("K_L", p.K_L),
            T=r.number("T", p.T),
            rho1=rho[0],
            rho2=rho[1],
            rho3=rho[2],
            r=r.number("r", p.r),
            u_max=r.number("u_max", p.u_max),
        )
    except ParseError:
        raise
    except ValueError as exc:
        raise r.error(str(exc)) from None
    return AccConfig(
        params=params,
        cruise_speed=r.number("cruise_speed", base.cruise_speed, nonneg=True),
        Q_proc=_matrix(r, "Q_proc", DEFAULT_Q_PROC),
        R_meas=_matrix(r, "R_meas", DEFAULT_R_MEAS),
        noise=r.flag("noise", base.noise),
        detection_range=r.number("detection_range", base.detection_range, positive=True),
        corridor_margin=r.number("corridor_margin", base.corridor_margin, nonneg=True),
    )


def _stanley(n: Optional[_Node]) -> StanleySchedule:
    base = StanleySchedule()
    if n is None:
        return base
    names = [f.name for f in fields(StanleySchedule) if f.name != "mode"]
    r = _Reader(n, "stanley", tuple(names) + ("mode",))
    try:
        return StanleySchedule(
            **{k: r.number(k, getattr(base, k)) for k in names},
            mode=r.text("mode", base.mode, ("modified", "classic")),
        )
    except ParseError:
        raise
    except ValueError as exc:
        raise r.error(str(exc)) from None


def _sim(n: Optional[_Node]) -> tuple[SimConfig, int]:
    base = SimConfig()
    if n is None:
        return base, 0
    r = _Reader(n, "sim", ("dt", "replan_period", "duration", "reference_step", "e_fa_threshold", "seed"))
    dt = r.number("dt", base.dt, positive=True)
    if dt > 0.1:
        raise r.error("sim.dt must not exceed 0.1 s", r.raw("dt"))
    replan = r.number("replan_period", base.replan_period, positive=True)
    if replan < dt:
        raise r.error("sim.replan_period must be at least dt", r.raw("replan_period"))
    cfg = SimConfig(
        dt=dt,
        replan_period=replan,
        duration=r.number("duration", base.duration, positive=True),
        reference_step=r.number("reference_step", base.reference_step, positive=True),
        e_fa_threshold=r.number("e_fa_threshold", base.e_fa_threshold, positive=True),
    )
    return cfg, r.integer("seed", 0)


def parse_scenario(text: str, name: str = "") -> Scenario:
    """Build a :class:`Scenario` from YAML text.

    Raises:
        ParseError: on malformed YAML, unknown sections or keys, missing
            required fields or out-of-range values.
    """
    root = _compose(text)
    if not isinstance(root.value, dict):
        raise ParseError("scenario must be a mapping of sections", root.line, root.column)
    top = root.value
    for key, (knode, _) in top.items():
        if key not in TOP_LEVEL:
            raise ParseError(f"unknown section {key!r}", knode.line, knode.column, key)
    if "schema_version" not in top:
        raise ParseError("missing required key 'schema_version'", root.line, root.column)
    ver = top["schema_version"][1]
    if ver.value != SCHEMA_VERSION or isinstance(ver.value, bool):
        raise ParseError(f"unsupported schema_version {ver.value!r} (expected {SCHEMA_VERSION})", ver.line, ver.column)
    if "waypoints" not in top:
        raise ParseError("missing required section 'waypoints'", root.line, root.column, "waypoints")

    def get(key):
        return top[key][1] if key in top else None

    wp_node = get("waypoints")
    waypoints = _waypoints(wp_node)
    if len(waypoints) < 3:
        raise ParseError("need at least 3 waypoints", wp_node.line, wp_node.column, "waypoints")
    sim_cfg, seed = _sim(get("sim"))
    title = get("name")
    try:
        return Scenario(
            waypoints=waypoints,
            corners=_corners(get("corners")) if get("corners") is not None else [],
            obstacles=_obstacles(get("obstacles")) if get("obstacles") is not None else [],
            vehicle=_vehicle(get("vehicle")),
            planner=_planner(get("planner")),
            acc=_acc(get("acc")),
            stanley=_stanley(get("stanley")),
            sim=sim_cfg,
            rng_seed=seed,
            name=str(title.value) if title is not None else name,
        )
    except ParseError:
        raise
    except ValueError as exc:
        raise ParseError(str(exc), root.line, root.column) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_scenario(text, name=path.stem)


def shipped_scenarios() -> dict[str, Path]:
    """Scenario files bundled with the package, by stem."""
    root = resources.files("roadplan") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".yaml")}


def load_shipped(name: str) -> Scenario:
    paths = shipped_scenarios()
    if name not in paths:
        raise KeyError(f"no shipped scenario {name!r}; have {sorted(paths)}")
    return load_scenario(paths[name])


def to_mapping(node: Any):
    """Strip position info (mostly for debugging)."""
    if isinstance(node, _Node):
        return to_mapping(node.value)
    if isinstance(node, dict):
        return {k: to_mapping(v[1]) for k, v in node.items()}
    if isinstance(node, list):
        return [to_mapping(v) for v in node]
    return node
