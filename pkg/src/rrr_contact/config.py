"""Scenario configuration: YAML defaults plus a scenario overlay.

Values are validated while the :class:`Scenario` is built; problems raise
:class:`ConfigError` naming the dotted key and, when the key came from a
file, its line number.
"""
import copy
from importlib import resources

import numpy as np
import yaml

from .control import ImpedanceGains, QuinticTrajectory
from .detection import DetectionConfig
from .dynamics import DynamicsParams, ModelError
from .errors import ConfigError
from .kinematics import ContactLocation, Geometry
from .observers import OBSERVER_IDS, SlidingModeGains, check_sosml_gains
from .simulation import (ClampSpring, ContactSpec, PrescribedWrench, Scenario,
                         SensorPipeline, SpringWall)

CHECKED_SECTIONS = ("geometry", "dynamics", "model_error", "control", "trajectory",
                    "detection", "sensors", "sim")
EXTRA_KEYS = {"trajectory": {"peak_speed"}}
CONTACT_KEYS = {
    "none": set(),
    "prescribed": {"wrench", "profile", "onset", "ramp_time", "hold", "table"},
    "spring_wall": {"wall_point", "wall_normal", "stiffness", "damping"},
    "clamp_spring": {"onset", "stiffness", "damping"},
}


class Config:
    """Merged configuration tree with the source line of every overlay key."""

    def __init__(self, data, lines=None, source=None):
        self.data = data
        self.lines = lines or {}
        self.source = source

    def line(self, path):
        return self.lines.get(path)

    def error(self, path, message):
        return ConfigError(path, message, self.line(path))

    def get(self, path, default=None):
        node = self.data
        for key in path.split("."):
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node


def _node_lines(node, prefix="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            out[path] = key_node.start_mark.line + 1
            _node_lines(value_node, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}.{i}"
            out[path] = item.start_mark.line + 1
            _node_lines(item, path, out)
    return out


def parse_yaml(text, name="<string>"):
    """``(data, lines)`` for a YAML document; syntax errors become ConfigError."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = None if mark is None else mark.line + 1
        raise ConfigError(name, f"invalid YAML: {getattr(exc, 'problem', exc)}", line) from None
    if data is None:
        return {}, {}
    if not isinstance(data, dict):
        raise ConfigError(name, "top level must be a mapping", 1)
    return data, _node_lines(node)


def deep_merge(base, overlay):
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def default_tree():
    text = resources.files("rrr_contact").joinpath("defaults.yaml").read_text()
    return parse_yaml(text, "defaults.yaml")[0]


def load_config(path=None, text=None, overrides=None):
    """Merge a scenario file (or YAML ``text``) and ``overrides`` onto the defaults."""
    defaults = default_tree()
    lines = {}
    overlay = {}
    source = None
    if path is not None:
        source = str(path)
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(source, f"cannot read scenario file: {exc.strerror}") from None
    if text is not None:
        overlay, lines = parse_yaml(text, source or "<string>")
        _check_keys(overlay, defaults, lines)
    data = deep_merge(defaults, overlay)
    if overrides:
        data = deep_merge(data, overrides)
    return Config(data, lines, source)


def _check_keys(overlay, defaults, lines):
    for key, value in overlay.items():
        if key not in defaults:
            raise ConfigError(key, "unknown key", lines.get(key))
        if key in CHECKED_SECTIONS and isinstance(value, dict):
            allowed = set(defaults[key]) | EXTRA_KEYS.get(key, set())
            for sub in value:
                if sub not in allowed:
                    path = f"{key}.{sub}"
                    raise ConfigError(path, "unknown key", lines.get(path))


# ---------------------------------------------------------------------------
# typed accessors
# ---------------------------------------------------------------------------

def _vector(cfg, path, size, positive=False, nonneg=False, allow_scalar=True):
    raw = cfg.get(path)
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise cfg.error(path, f"expected numbers, got {raw!r}") from None
    if arr.ndim == 0 and allow_scalar:
        arr = np.full(size, float(arr))
    if arr.shape != (size,):
        raise cfg.error(path, f"expected {size} values, got {raw!r}")
    if not np.all(np.isfinite(arr)):
        raise cfg.error(path, "values must be finite")
    if positive and np.any(arr <= 0):
        raise cfg.error(path, "values must be positive")
    if nonneg and np.any(arr < 0):
        raise cfg.error(path, "values must be non-negative")
    return arr


def _scalar(cfg, path, positive=False, nonneg=False, default=None):
    raw = cfg.get(path, default)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise cfg.error(path, f"expected a number, got {raw!r}")
    val = float(raw)
    if positive and val <= 0:
        raise cfg.error(path, "must be positive")
    if nonneg and val < 0:
        raise cfg.error(path, "must be non-negative")
    return val


def _poses(cfg, path):
    raw = cfg.get(path) or []
    try:
        arr = np.asarray(raw, dtype=float).reshape(-1, 3)
    except (TypeError, ValueError):
        raise cfg.error(path, "expected a list of [rx, ry, phi] poses") from None
    return arr


# ---------------------------------------------------------------------------
# scenario assembly
# ---------------------------------------------------------------------------

def _geometry(cfg):
    g = "geometry"
    sigma = _vector(cfg, f"{g}.sigma", 3, allow_scalar=False)
    if not np.all(np.abs(sigma) == 1.0):
        raise cfg.error(f"{g}.sigma", "entries must be +1 or -1")
    try:
        geom = Geometry.symmetric(
            base_radius=_scalar(cfg, f"{g}.base_radius", positive=True),
            platform_radius=_scalar(cfg, f"{g}.platform_radius", positive=True),
            l1=_vector(cfg, f"{g}.link_len_1", 3, positive=True),
            l2=_vector(cfg, f"{g}.link_len_2", 3, positive=True),
            link_half_width=_scalar(cfg, f"{g}.link_half_width", nonneg=True),
        )
    except ValueError as exc:
        raise cfg.error(g, str(exc)) from None
    return geom, sigma


def _dynamics(cfg, geom):
    d = "dynamics"
    try:
        return DynamicsParams.default(
            geom,
            link_mass=_scalar(cfg, f"{d}.link_mass", positive=True),
            platform_mass=_scalar(cfg, f"{d}.platform_mass", positive=True),
            platform_radius=_scalar(cfg, f"{d}.platform_radius", positive=True),
            viscous=_vector(cfg, f"{d}.viscous", 3, nonneg=True),
            coulomb=_vector(cfg, f"{d}.coulomb", 3, nonneg=True),
            coulomb_eps=_scalar(cfg, f"{d}.coulomb_eps", positive=True),
            gravity=_vector(cfg, f"{d}.gravity", 2, allow_scalar=False),
        )
    except ValueError as exc:
        raise cfg.error(d, str(exc)) from None


def _trajectory(cfg):
    t = "trajectory"
    start = _vector(cfg, f"{t}.start", 3, allow_scalar=False)
    waypoints = _poses(cfg, f"{t}.waypoints")
    t0 = _scalar(cfg, f"{t}.start_time", nonneg=True)
    if len(waypoints) == 0:
        return QuinticTrajectory.hold(start)
    speed = cfg.get(f"{t}.peak_speed")
    if speed is not None:
        if len(waypoints) != 1:
            raise cfg.error(f"{t}.peak_speed", "needs exactly one waypoint")
        try:
            return QuinticTrajectory.point_to_point(
                start, waypoints[0], _scalar(cfg, f"{t}.peak_speed", positive=True), t0)
        except ValueError as exc:
            raise cfg.error(f"{t}.peak_speed", str(exc)) from None
    durations = np.atleast_1d(np.asarray(cfg.get(f"{t}.durations") or [], dtype=float))
    if len(durations) != len(waypoints):
        raise cfg.error(f"{t}.durations", "need one duration per waypoint")
    if np.any(durations <= 0):
        raise cfg.error(f"{t}.durations", "durations must be positive")
    return QuinticTrajectory(np.vstack([start, waypoints]), durations, t0)


def _observers(cfg):
    o = "observers"
    enabled = cfg.get(f"{o}.enabled")
    if isinstance(enabled, str):
        enabled = [s.strip() for s in enabled.split(",") if s.strip()]
    if not isinstance(enabled, list) or not enabled:
        raise cfg.error(f"{o}.enabled", "expected a non-empty list of observers")
    for name in enabled:
        if name not in OBSERVER_IDS:
            raise cfg.error(f"{o}.enabled", f"unknown observer {name!r}")
    obs_cfg = {}
    obs_cfg["mo"] = {"gain": _vector(cfg, f"{o}.mo.gain", 3, positive=True)}
    obs_cfg["kf"] = {
        "q_p": _vector(cfg, f"{o}.kf.q_p", 3, nonneg=True),
        "q_f": _vector(cfg, f"{o}.kf.q_f", 3, nonneg=True),
        "r": _vector(cfg, f"{o}.kf.r", 3, positive=True),
    }
    s = {k: _vector(cfg, f"{o}.sosml.{k}", 3, positive=True) for k in ("T1", "T2", "S1", "S2")}
    if cfg.get(f"{o}.sosml.disturbance_bound") is not None:
        bound = _vector(cfg, f"{o}.sosml.disturbance_bound", 3, nonneg=True)
        try:
            check_sosml_gains(SlidingModeGains(**s), bound, f"{o}.sosml.S1")
        except ConfigError as exc:
            raise cfg.error(exc.field, exc.message) from None
    obs_cfg["sosml"] = s
    return tuple(enabled), obs_cfg


def _contact(cfg, geom):
    c = "contact"
    kind = cfg.get(f"{c}.type", "none")
    if kind not in CONTACT_KEYS:
        raise cfg.error(f"{c}.type", f"unknown contact type {kind!r}")
    if kind == "none":
        return None
    for key in cfg.get(c):
        if key not in CONTACT_KEYS[kind] | {"type", "body", "offset"}:
            raise cfg.error(f"{c}.{key}", f"not a parameter of {kind} contacts")
    try:
        loc = ContactLocation.from_label(str(cfg.get(f"{c}.body", "MP")),
                                         _vector(cfg, f"{c}.offset", 2, allow_scalar=False)
                                         if cfg.get(f"{c}.offset") is not None else (0.0, 0.0))
        loc.validate(geom)
    except ValueError as exc:
        raise cfg.error(f"{c}.body", str(exc)) from None
    if kind == "prescribed":
        table = cfg.get(f"{c}.table")
        try:
            model = PrescribedWrench(
                wrench=_vector(cfg, f"{c}.wrench", 3, allow_scalar=False)
                if cfg.get(f"{c}.wrench") is not None else np.zeros(3),
                onset=_scalar(cfg, f"{c}.onset", nonneg=True, default=0.0),
                profile=cfg.get(f"{c}.profile", "step"),
                ramp_time=_scalar(cfg, f"{c}.ramp_time", positive=True, default=1.0),
                hold=cfg.get(f"{c}.hold"),
                table=table,
            )
        except ValueError as exc:
            raise cfg.error(f"{c}.profile", str(exc)) from None
    elif kind == "spring_wall":
        normal = _vector(cfg, f"{c}.wall_normal", 2, allow_scalar=False)
        if np.linalg.norm(normal) == 0:
            raise cfg.error(f"{c}.wall_normal", "normal must be nonzero")
        model = SpringWall(
            _vector(cfg, f"{c}.wall_point", 2, allow_scalar=False), normal,
            stiffness=_scalar(cfg, f"{c}.stiffness", positive=True, default=5000.0),
            damping=_scalar(cfg, f"{c}.damping", nonneg=True, default=50.0),
        )
    else:
        model = ClampSpring(
            _scalar(cfg, f"{c}.onset", nonneg=True),
            stiffness=_scalar(cfg, f"{c}.stiffness", positive=True, default=2000.0),
            damping=_scalar(cfg, f"{c}.damping", nonneg=True, default=5.0),
        )
    return ContactSpec(loc, model)


def scenario_from_config(cfg, seed=None, observers=None):
    """Build a :class:`Scenario`; ``seed``/``observers`` override the file."""
    geom, sigma = _geometry(cfg)
    params = _dynamics(cfg, geom)
    me = "model_error"
    error = ModelError(**{k: _scalar(cfg, f"{me}.{k}") for k in ("mass", "coriolis", "gravity", "friction")})
    gains = ImpedanceGains(_vector(cfg, "control.stiffness", 3, positive=True),
                           _vector(cfg, "control.damping_ratio", 3, nonneg=True))
    enabled, obs_cfg = _observers(cfg)
    if observers is not None:
        enabled = tuple(observers)
        for name in enabled:
            if name not in OBSERVER_IDS:
                raise ConfigError("--observers", f"unknown observer {name!r}")
    det = "detection"
    detection = DetectionConfig(
        _vector(cfg, f"{det}.thresholds", 3, positive=True),
        int(_scalar(cfg, f"{det}.debounce", positive=True)),
    )
    reaction_observer = cfg.get(f"{det}.reaction_observer")
    if reaction_observer not in OBSERVER_IDS + ("any",):
        raise cfg.error(f"{det}.reaction_observer", f"unknown observer {reaction_observer!r}")
    sn = "sensors"
    sensors = SensorPipeline(
        enabled=bool(cfg.get(f"{sn}.enabled")),
        active_quantum_deg=_scalar(cfg, f"{sn}.active_quantum_deg", positive=True),
        passive_quantum_deg=_scalar(cfg, f"{sn}.passive_quantum_deg", positive=True),
        cutoff_hz=_scalar(cfg, f"{sn}.cutoff_hz", positive=True),
        torque_noise_std=_scalar(cfg, f"{sn}.torque_noise_std", nonneg=True),
    )
    duration = _scalar(cfg, "sim.duration", positive=True)
    contact = _contact(cfg, geom)
    onset = getattr(contact.model, "onset", 0.0) if contact else 0.0
    if onset > duration:
        raise cfg.error("contact.onset", "onset lies beyond sim.duration")
    seed_value = cfg.get("sim.seed") if seed is None else seed
    if isinstance(seed_value, bool) or not isinstance(seed_value, int):
        raise cfg.error("sim.seed", "seed must be an integer")
    return Scenario(
        geometry=geom,
        params=params,
        sigma=sigma,
        gains=gains,
        trajectory=_trajectory(cfg),
        duration=duration,
        observers=enabled,
        observer_cfg=obs_cfg,
        detection=detection,
        reaction=bool(cfg.get(f"{det}.reaction")),
        reaction_observer=reaction_observer,
        contact=contact,
        sensors=sensors,
        model_error=error,
        dt=_scalar(cfg, "sim.dt", positive=True),
        substeps=int(_scalar(cfg, "sim.substeps", positive=True)),
        seed=seed_value,
        name=str(cfg.get("name", "scenario")),
    )


def load_scenario(path=None, text=None, seed=None, observers=None):
    return scenario_from_config(load_config(path, text), seed=seed, observers=observers)
