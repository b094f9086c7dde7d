"""Scenario configuration: dynamics, noise, cost, obstacles, planner
settings, and optional route geometry, with JSON load/save.

Validation errors name the offending field by dotted path, e.g.
``planner.dt: must be positive``.
"""

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .dynamics import BicycleModel, NoiseModel
from .feedback import LqrWeights
from .policy import PolicyHyperparams
from .rollout import CostModel, ObstacleSet

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Raised when a scenario document fails validation."""


@dataclass(frozen=True)
class PlannerConfig:
    """Horizon, sampling, and optimizer settings."""

    timesteps: int
    dt: float
    samples: int = 1024
    priors: int = 5
    delta: float = 0.05
    gamma: float = 10.0
    iterations: int = 100
    replan_period: float = None
    iterations_per_interval: int = 10
    opt_max_iterations: int = 60
    opt_step_tolerance: float = 1e-8
    alpha_min: float = 1e-6
    alpha_max: float = 1e6
    variance_floor: float = 1e-8
    variance_margin: float = 1e-3
    linearize_on_prior_mean: bool = False
    control_rate_hz: float = None

    def __post_init__(self):
        if self.timesteps < 1:
            raise ScenarioError("planner.timesteps: must be at least 1")
        if not self.dt > 0.0:
            raise ScenarioError("planner.dt: must be positive")
        if self.samples < 1:
            raise ScenarioError("planner.samples: must be at least 1")
        if self.priors < 1:
            raise ScenarioError("planner.priors: must be at least 1")
        if not 0.0 < self.delta < 1.0:
            raise ScenarioError("planner.delta: must lie in (0, 1)")
        if self.gamma < 0.0:
            raise ScenarioError("planner.gamma: must be non-negative")
        if self.iterations < 0:
            raise ScenarioError("planner.iterations: must be non-negative")
        if self.iterations_per_interval < 1:
            raise ScenarioError("planner.iterations_per_interval: must be at least 1")
        if not 0.0 < self.alpha_min < self.alpha_max:
            raise ScenarioError("planner.alpha_min: need 0 < alpha_min < alpha_max")
        if self.replan_period is not None:
            self.hold_steps  # validate the ratio eagerly

    @property
    def hold_steps(self):
        """Replanning period expressed in whole timesteps."""
        if self.replan_period is None:
            raise ScenarioError("planner.replan_period: required for receding-horizon runs")
        ratio = self.replan_period / self.dt
        k = int(round(ratio))
        if abs(ratio - k) > 1e-9 or k < 1 or k > self.timesteps:
            raise ScenarioError(
                "planner.replan_period: must be a whole number of timesteps "
                f"in [1, {self.timesteps}], got {ratio}")
        return k


@dataclass(frozen=True)
class Route:
    """Piecewise-linear reference path with arc-length bookkeeping."""

    waypoints: np.ndarray
    closed: bool
    lookahead: float
    cruise_speed: float
    _cum: np.ndarray = field(init=False, repr=False, compare=False)
    _starts: np.ndarray = field(init=False, repr=False, compare=False)
    _units: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.waypoints, dtype=float).reshape(-1, 2))
        if pts.shape[0] < 2:
            raise ScenarioError("route.waypoints: need at least two points")
        if self.lookahead <= 0.0:
            raise ScenarioError("route.lookahead: must be positive")
        if self.cruise_speed <= 0.0:
            raise ScenarioError("route.cruise_speed: must be positive")
        verts = np.vstack([pts, pts[:1]]) if self.closed else pts
        seg = verts[1:] - verts[:-1]
        lengths = np.linalg.norm(seg, axis=1)
        if np.any(lengths <= 0.0):
            raise ScenarioError("route.waypoints: consecutive points must be distinct")
        pts.flags.writeable = False
        object.__setattr__(self, "waypoints", pts)
        object.__setattr__(self, "_starts", verts[:-1])
        object.__setattr__(self, "_units", seg / lengths[:, None])
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(lengths)]))

    @property
    def length(self):
        return float(self._cum[-1])

    def _wrap(self, s):
        if self.closed:
            return float(np.mod(s, self.length))
        return float(np.clip(s, 0.0, self.length))

    def project(self, position):
        """Arc length of the closest point on the path to ``position``."""
        p = np.asarray(position, dtype=float)[:2]
        rel = p - self._starts
        lens = np.diff(self._cum)
        t = np.clip(np.sum(rel * self._units, axis=1), 0.0, lens)
        closest = self._starts + t[:, None] * self._units
        d2 = np.sum((closest - p) ** 2, axis=1)
        i = int(np.argmin(d2))
        return float(self._cum[i] + t[i])

    def _segment_index(self, s):
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        return min(max(i, 0), len(self._units) - 1)

    def point_at(self, s):
        s = self._wrap(s)
        i = self._segment_index(s)
        return self._starts[i] + (s - self._cum[i]) * self._units[i]

    def heading_at(self, s):
        i = self._segment_index(self._wrap(s))
        u = self._units[i]
        return float(np.arctan2(u[1], u[0]))

    def goal_state(self, position, state_dim):
        """Goal state a fixed lookahead arc length ahead of the closest
        point: position on the path, its tangent heading, cruise speed."""
        if state_dim < 4:
            raise ScenarioError("route goals need at least 4 state dimensions")
        s = self._wrap(self.project(position) + self.lookahead)
        g = np.zeros(state_dim)
        g[:2] = self.point_at(s)
        g[2] = self.heading_at(s)
        g[3] = self.cruise_speed
        return g


@dataclass(frozen=True)
class Scenario:
    """Everything one optimization or simulation run needs."""

    name: str
    model: object
    noise: NoiseModel
    cost: CostModel
    obstacles: ObstacleSet
    start: np.ndarray
    planner: PlannerConfig
    lqr: LqrWeights
    prior: PolicyHyperparams
    seed: int
    feedback: bool
    stochastic_bounds: bool
    route: Route = None

    def __post_init__(self):
        start = np.ascontiguousarray(np.asarray(self.start, dtype=float).ravel())
        if start.shape != (self.model.state_dim,):
            raise ScenarioError(f"start: must have length {self.model.state_dim}")
        start.flags.writeable = False
        object.__setattr__(self, "start", start)

    @property
    def goal(self):
        return self.cost.goal

    def with_goal(self, goal):
        return replace(self, cost=replace(self.cost, goal=np.asarray(goal, dtype=float)))

    def with_flags(self, feedback=None, stochastic_bounds=None):
        out = self
        if feedback is not None:
            out = replace(out, feedback=bool(feedback))
        if stochastic_bounds is not None:
            out = replace(out, stochastic_bounds=bool(stochastic_bounds))
        return out

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def _req(data, key, path):
    if key not in data:
        raise ScenarioError(f"{path}{key}: missing required field")
    return data[key]


def _num(value, path, positive=False, non_negative=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{path}: must be a number")
    v = float(value)
    if positive and not v > 0.0:
        raise ScenarioError(f"{path}: must be positive")
    if non_negative and v < 0.0:
        raise ScenarioError(f"{path}: must be non-negative")
    return v


def _int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{path}: must be an integer")
    if minimum is not None and value < minimum:
        raise ScenarioError(f"{path}: must be at least {minimum}")
    return int(value)


def _bool(value, path):
    if not isinstance(value, bool):
        raise ScenarioError(f"{path}: must be a boolean")
    return value


def _vec(value, path, length=None):
    if not isinstance(value, (list, tuple)):
        raise ScenarioError(f"{path}: must be a list of numbers")
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: must be a list of numbers") from None
    if arr.ndim != 1:
        raise ScenarioError(f"{path}: must be a flat list of numbers")
    if length is not None and arr.size != length:
        raise ScenarioError(f"{path}: must have length {length}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{path}: entries must be finite")
    return arr


def _model_from_dict(data):
    kind = _req(data, "type", "dynamics.")
    if kind == "bicycle":
        return BicycleModel(
            wheel_base=_num(data.get("wheel_base", 0.33), "dynamics.wheel_base", positive=True),
            steering_limit=_num(data.get("steering_limit", 0.4), "dynamics.steering_limit", positive=True),
            accel_limit=_num(data.get("accel_limit", 1.0), "dynamics.accel_limit", positive=True),
            steering_rate_limit=_num(data.get("steering_rate_limit", 1.0),
                                     "dynamics.steering_rate_limit", positive=True),
        )
    raise ScenarioError(f"dynamics.type: unknown model type {kind!r}")


def _model_to_dict(model):
    if isinstance(model, BicycleModel):
        return {
            "type": "bicycle",
            "wheel_base": model.wheel_base,
            "steering_limit": model.steering_limit,
            "accel_limit": float(model.control_upper[0]),
            "steering_rate_limit": float(model.control_upper[1]),
        }
    raise ScenarioError(f"cannot serialize dynamics model {type(model).__name__}")


def _noise_from_dict(data, state_dim):
    kind = _req(data, "type", "noise.")
    if kind == "gaussian":
        cov = _vec(_req(data, "cov_diag", "noise."), "noise.cov_diag", state_dim)
        if np.any(cov < 0.0):
            raise ScenarioError("noise.cov_diag: entries must be non-negative")
        mean = data.get("mean")
        mean = None if mean is None else _vec(mean, "noise.mean", state_dim)
        return NoiseModel.gaussian(cov, mean)
    if kind == "gaussian_mixture":
        weights = _vec(_req(data, "weights", "noise."), "noise.weights")
        means = _req(data, "means", "noise.")
        covs = _req(data, "cov_diags", "noise.")
        if not isinstance(means, list) or not isinstance(covs, list):
            raise ScenarioError("noise.means/cov_diags: must be lists of vectors")
        if len(means) != weights.size or len(covs) != weights.size:
            raise ScenarioError("noise.weights: one weight per component required")
        mu = np.stack([_vec(v, f"noise.means[{i}]", state_dim) for i, v in enumerate(means)])
        cd = np.stack([_vec(v, f"noise.cov_diags[{i}]", state_dim) for i, v in enumerate(covs)])
        if np.any(cd < 0.0):
            raise ScenarioError("noise.cov_diags: entries must be non-negative")
        try:
            return NoiseModel(weights=weights, means=mu, cov_diags=cd)
        except ValueError as exc:
            raise ScenarioError(f"noise: {exc}") from None
    raise ScenarioError(f"noise.type: unknown noise type {kind!r}")


def _noise_to_dict(noise):
    if noise.n_components == 1:
        out = {"type": "gaussian", "cov_diag": noise.cov_diags[0].tolist()}
        if np.any(noise.means[0]):
            out["mean"] = noise.means[0].tolist()
        return out
    return {
        "type": "gaussian_mixture",
        "weights": noise.weights.tolist(),
        "means": noise.means.tolist(),
        "cov_diags": noise.cov_diags.tolist(),
    }


def _prior_from_dict(data, n_controls, n_timesteps):
    dim = n_controls * n_timesteps
    mean = data.get("mean", 0.0)
    var = data.get("variance", 1.0)
    if isinstance(mean, (int, float)) and not isinstance(mean, bool):
        mean = np.full(dim, float(mean))
    else:
        mean = _vec(mean, "prior.mean", dim)
    if isinstance(var, (int, float)) and not isinstance(var, bool):
        var = np.full(dim, float(var))
    else:
        var = _vec(var, "prior.variance", dim)
    if np.any(var <= 0.0):
        raise ScenarioError("prior.variance: must be strictly positive")
    return PolicyHyperparams(mean=mean, variance=var,
                             n_controls=n_controls, n_timesteps=n_timesteps)


_PLANNER_FIELDS = {
    "samples": ("samples", lambda v: _int(v, "planner.samples", 1)),
    "priors": ("priors", lambda v: _int(v, "planner.priors", 1)),
    "delta": ("delta", lambda v: _num(v, "planner.delta", positive=True)),
    "gamma": ("gamma", lambda v: _num(v, "planner.gamma", non_negative=True)),
    "iterations": ("iterations", lambda v: _int(v, "planner.iterations", 0)),
    "replan_period": ("replan_period", lambda v: _num(v, "planner.replan_period", positive=True)),
    "iterations_per_interval": ("iterations_per_interval",
                                lambda v: _int(v, "planner.iterations_per_interval", 1)),
    "opt_max_iterations": ("opt_max_iterations", lambda v: _int(v, "planner.opt_max_iterations", 1)),
    "opt_step_tolerance": ("opt_step_tolerance",
                           lambda v: _num(v, "planner.opt_step_tolerance", positive=True)),
    "alpha_min": ("alpha_min", lambda v: _num(v, "planner.alpha_min", positive=True)),
    "alpha_max": ("alpha_max", lambda v: _num(v, "planner.alpha_max", positive=True)),
    "variance_floor": ("variance_floor", lambda v: _num(v, "planner.variance_floor", positive=True)),
    "variance_margin": ("variance_margin", lambda v: _num(v, "planner.variance_margin", positive=True)),
    "linearize_on_prior_mean": ("linearize_on_prior_mean",
                                lambda v: _bool(v, "planner.linearize_on_prior_mean")),
    "control_rate_hz": ("control_rate_hz", lambda v: _num(v, "planner.control_rate_hz", positive=True)),
}


def scenario_from_dict(data, name=None):
    """Build and validate a Scenario from a plain dict."""
    if not isinstance(data, dict):
        raise ScenarioError(": document must be a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version: unsupported version {version}")

    model = _model_from_dict(_req(data, "dynamics", ""))
    S, N = model.state_dim, model.control_dim

    planner_raw = _req(data, "planner", "")
    kwargs = {
        "timesteps": _int(_req(planner_raw, "timesteps", "planner."), "planner.timesteps", 1),
        "dt": _num(_req(planner_raw, "dt", "planner."), "planner.dt", positive=True),
    }
    for key, (attr, conv) in _PLANNER_FIELDS.items():
        if key in planner_raw and planner_raw[key] is not None:
            kwargs[attr] = conv(planner_raw[key])
    unknown = set(planner_raw) - set(_PLANNER_FIELDS) - {"timesteps", "dt"}
    if unknown:
        raise ScenarioError(f"planner.{sorted(unknown)[0]}: unknown field")
    planner = PlannerConfig(**kwargs)

    noise = _noise_from_dict(_req(data, "noise", ""), S)
    start = _vec(_req(data, "start", ""), "start", S)
    goal = _vec(_req(data, "goal", ""), "goal", S)

    cost_raw = _req(data, "cost", "")
    qf = _vec(_req(cost_raw, "qf_diag", "cost."), "cost.qf_diag", S)
    if np.any(qf < 0.0):
        raise ScenarioError("cost.qf_diag: entries must be non-negative")
    q = cost_raw.get("q_diag")
    if q is not None:
        q = _vec(q, "cost.q_diag", S)
        if np.any(q < 0.0):
            raise ScenarioError("cost.q_diag: entries must be non-negative")
    cost = CostModel(Qf=np.diag(qf), goal=goal, Q=None if q is None else np.diag(q))

    obs_raw = data.get("obstacles", [])
    if not isinstance(obs_raw, list):
        raise ScenarioError("obstacles: must be a list")
    centers, radii = [], []
    for i, ob in enumerate(obs_raw):
        centers.append(_vec(_req(ob, "center", f"obstacles[{i}]."), f"obstacles[{i}].center", 2))
        radii.append(_num(_req(ob, "radius", f"obstacles[{i}]."), f"obstacles[{i}].radius", positive=True))
    obstacles = (ObstacleSet(centers=np.array(centers), radii=np.array(radii))
                 if centers else ObstacleSet.empty())

    lqr_raw = _req(data, "lqr", "")
    try:
        lqr = LqrWeights.from_diags(
            _vec(_req(lqr_raw, "q_diag", "lqr."), "lqr.q_diag", S),
            _vec(_req(lqr_raw, "r_diag", "lqr."), "lqr.r_diag", N),
            _vec(_req(lqr_raw, "qf_diag", "lqr."), "lqr.qf_diag", S),
        )
    except ValueError as exc:
        raise ScenarioError(f"lqr: {exc}") from None

    prior = _prior_from_dict(data.get("prior", {}), N, planner.timesteps)

    route = None
    if data.get("route") is not None:
        route_raw = data["route"]
        pts = route_raw.get("waypoints")
        if not isinstance(pts, list) or len(pts) < 2:
            raise ScenarioError("route.waypoints: need at least two points")
        waypoints = np.stack([_vec(p, f"route.waypoints[{i}]", 2) for i, p in enumerate(pts)])
        route = Route(
            waypoints=waypoints,
            closed=_bool(route_raw.get("closed", True), "route.closed"),
            lookahead=_num(_req(route_raw, "lookahead", "route."), "route.lookahead", positive=True),
            cruise_speed=_num(_req(route_raw, "cruise_speed", "route."),
                              "route.cruise_speed", positive=True),
        )

    seed = _int(data.get("seed", 0), "seed", 0)
    try:
        return Scenario(
            name=name or data.get("name", ""),
            model=model, noise=noise, cost=cost, obstacles=obstacles,
            start=start, planner=planner, lqr=lqr, prior=prior, seed=seed,
            feedback=_bool(data.get("feedback", False), "feedback"),
            stochastic_bounds=_bool(data.get("stochastic_bounds", True), "stochastic_bounds"),
            route=route,
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f": {exc}") from None


def scenario_to_dict(scenario):
    """Serialize a Scenario to a JSON-compatible dict; inverse of
    scenario_from_dict."""
    out = {
        "schema_version": SCHEMA_VERSION,
        "name": scenario.name,
        "seed": scenario.seed,
        "feedback": scenario.feedback,
        "stochastic_bounds": scenario.stochastic_bounds,
        "dynamics": _model_to_dict(scenario.model),
        "noise": _noise_to_dict(scenario.noise),
        "start": scenario.start.tolist(),
        "goal": scenario.goal.tolist(),
        "cost": {
            "qf_diag": np.diag(scenario.cost.Qf).tolist(),
            "q_diag": None if scenario.cost.Q is None else np.diag(scenario.cost.Q).tolist(),
        },
        "obstacles": [
            {"center": c.tolist(), "radius": float(r)}
            for c, r in zip(scenario.obstacles.centers, scenario.obstacles.radii)
        ],
        "lqr": {
            "q_diag": np.diag(scenario.lqr.Q).tolist(),
            "r_diag": np.diag(scenario.lqr.R).tolist(),
            "qf_diag": np.diag(scenario.lqr.Qf).tolist(),
        },
        "prior": {
            "mean": scenario.prior.mean.tolist(),
            "variance": scenario.prior.variance.tolist(),
        },
        "planner": {
            "timesteps": scenario.planner.timesteps,
            "dt": scenario.planner.dt,
            "samples": scenario.planner.samples,
            "priors": scenario.planner.priors,
            "delta": scenario.planner.delta,
            "gamma": scenario.planner.gamma,
            "iterations": scenario.planner.iterations,
            "replan_period": scenario.planner.replan_period,
            "iterations_per_interval": scenario.planner.iterations_per_interval,
            "opt_max_iterations": scenario.planner.opt_max_iterations,
            "opt_step_tolerance": scenario.planner.opt_step_tolerance,
            "alpha_min": scenario.planner.alpha_min,
            "alpha_max": scenario.planner.alpha_max,
            "variance_floor": scenario.planner.variance_floor,
            "variance_margin": scenario.planner.variance_margin,
            "linearize_on_prior_mean": scenario.planner.linearize_on_prior_mean,
            "control_rate_hz": scenario.planner.control_rate_hz,
        },
    }
    if scenario.route is not None:
        out["route"] = {
            "waypoints": scenario.route.waypoints.tolist(),
            "closed": scenario.route.closed,
            "lookahead": scenario.route.lookahead,
            "cruise_speed": scenario.route.cruise_speed,
        }
    return out


def load_scenario(path):
    """Load and validate a scenario JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f": invalid JSON ({exc})") from None
    return scenario_from_dict(data)


def save_scenario(scenario, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2)
        fh.write("\n")


def list_builtin_scenarios():
    """Names of the scenario files shipped with the package."""
    root = resources.files("pacmpc") / "scenarios"
    return sorted(p.name[:-len(".json")] for p in root.iterdir()
                  if p.name.endswith(".json"))


def builtin_scenario(name):
    """Load a packaged scenario by name."""
    path = resources.files("pacmpc") / "scenarios" / f"{name}.json"
    if not path.is_file():
        known = ", ".join(list_builtin_scenarios())
        raise ScenarioError(f"unknown scenario {name!r}; packaged scenarios: {known}")
    return scenario_from_dict(json.loads(path.read_text(encoding="utf-8")), name=name)
