"""Scenario files: strict YAML schema, loading, dumping, built-in benchmarks.

A scenario bundles a mission description with optional policy (warm start),
optimizer settings, stochastic growth parameters, and output options.
Unknown keys are rejected everywhere so typos surface as validation errors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ConfigError
from .model import MissionConfig, Policy
from .optimizer import ArmijoStep, ConstantStep, OptimizerSettings

log = logging.getLogger(__name__)

R0_DEFAULT = 4.0


@dataclass(frozen=True)
class StochasticParams:
    mu: float = 10.0
    lo: float = 0.075
    hi: float = 0.125

    def __post_init__(self):
        if self.mu <= 0.0 or self.lo <= 0.0 or self.hi < self.lo:
            raise ConfigError(
                f"stochastic section needs mu > 0 and 0 < lo <= hi, got "
                f"mu={self.mu} lo={self.lo} hi={self.hi}")


@dataclass(frozen=True)
class OutputOptions:
    sample_dt: float = 1.0
    plot: bool = True
    magnify: tuple | None = None   # optional (t0, t1) zoom for trajectory plot


@dataclass
class Scenario:
    name: str
    mission: MissionConfig
    policy: Policy | None
    optimizer: OptimizerSettings
    stochastic: StochasticParams | None
    output: OutputOptions
    expected_cost: float | None = None


def _require_mapping(node, path: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(node).__name__}")
    return node


def _take(node: dict, path: str, allowed: dict):
    """Pop known keys with defaults; reject anything left over.

    ``allowed`` maps key -> (required, default).
    """
    node = dict(node)
    out = {}
    for key, (required, default) in allowed.items():
        if key in node:
            out[key] = node.pop(key)
        elif required:
            raise ConfigError(f"{path}: missing required key '{key}'")
        else:
            out[key] = default
    if node:
        raise ConfigError(f"{path}: unknown keys {sorted(node)}")
    return out


def _float(value, path: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None


def _float_list(value, path: str) -> list[float]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of numbers")
    return [_float(v, f"{path}[{k}]") for k, v in enumerate(value)]


def _parse_mission(node, path: str) -> MissionConfig:
    vals = _take(_require_mapping(node, path), path, {
        "length": (True, None), "lo": (False, 0.0), "hi": (False, None),
        "points": (False, None), "n_points": (False, None),
        "growth": (True, None), "decay": (True, None),
        "horizon": (True, None), "r0": (False, R0_DEFAULT),
        "no_crossing": (False, False), "agents": (True, None),
    })
    if not isinstance(vals["agents"], list) or not vals["agents"]:
        raise ConfigError(f"{path}.agents: expected a non-empty list")
    agents = []
    for k, a in enumerate(vals["agents"]):
        aval = _take(_require_mapping(a, f"{path}.agents[{k}]"),
                     f"{path}.agents[{k}]",
                     {"start": (True, None), "range": (True, None)})
        agents.append((_float(aval["start"], f"{path}.agents[{k}].start"),
                       _float(aval["range"], f"{path}.agents[{k}].range")))
    growth = vals["growth"]
    growth = _float_list(growth, f"{path}.growth") \
        if isinstance(growth, (list, tuple)) else _float(growth, f"{path}.growth")
    r0 = vals["r0"]
    r0 = _float_list(r0, f"{path}.r0") \
        if isinstance(r0, (list, tuple)) else _float(r0, f"{path}.r0")
    points = vals["points"]
    if points is not None:
        points = _float_list(points, f"{path}.points")
    n_points = vals["n_points"]
    if points is None and n_points is None:
        raise ConfigError(f"{path}: provide 'points' or 'n_points'")
    return MissionConfig.create(
        length=_float(vals["length"], f"{path}.length"),
        lo=_float(vals["lo"], f"{path}.lo"),
        hi=None if vals["hi"] is None else _float(vals["hi"], f"{path}.hi"),
        points=points,
        n_points=None if n_points is None else int(n_points),
        growth=growth, decay=_float(vals["decay"], f"{path}.decay"),
        horizon=_float(vals["horizon"], f"{path}.horizon"),
        agents=agents, r0=r0, no_crossing=bool(vals["no_crossing"]))


def _parse_policy(node, path: str, n_agents: int) -> Policy:
    vals = _take(_require_mapping(node, path), path, {"agents": (True, None)})
    if not isinstance(vals["agents"], list) or len(vals["agents"]) != n_agents:
        raise ConfigError(f"{path}.agents: expected one entry per mission agent")
    switches, dwells = [], []
    for k, a in enumerate(vals["agents"]):
        aval = _take(_require_mapping(a, f"{path}.agents[{k}]"),
                     f"{path}.agents[{k}]",
                     {"switches": (True, None), "dwells": (False, None)})
        sw = _float_list(aval["switches"], f"{path}.agents[{k}].switches")
        dw = aval["dwells"]
        dw = [0.0] * len(sw) if dw is None else _float_list(
            dw, f"{path}.agents[{k}].dwells")
        if len(dw) != len(sw):
            raise ConfigError(
                f"{path}.agents[{k}]: switches and dwells lengths differ")
        switches.append(sw)
        dwells.append(dw)
    return Policy(switches, dwells)


def _parse_step(node, path: str):
    vals = _take(_require_mapping(node, path), path, {
        "mode": (True, None), "beta": (False, 0.5), "gamma": (False, 1e-4),
        "initial": (False, 1.0), "eta_switch": (False, 0.05),
        "eta_dwell": (False, 0.05),
    })
    mode = vals["mode"]
    if mode == "armijo":
        return ArmijoStep(beta=_float(vals["beta"], f"{path}.beta"),
                          gamma=_float(vals["gamma"], f"{path}.gamma"),
                          initial=_float(vals["initial"], f"{path}.initial"))
    if mode == "constant":
        return ConstantStep(
            eta_switch=_float(vals["eta_switch"], f"{path}.eta_switch"),
            eta_dwell=_float(vals["eta_dwell"], f"{path}.eta_dwell"))
    raise ConfigError(f"{path}.mode: expected 'armijo' or 'constant', got {mode!r}")


def _parse_optimizer(node, path: str) -> OptimizerSettings:
    vals = _take(_require_mapping(node, path), path, {
        "sigma": (False, 5.0), "epsilon": (False, 2e-10),
        "max_iters": (False, 300), "seed": (False, 0), "step": (False, None),
    })
    step_node = vals["step"]
    step = ArmijoStep() if step_node is None else _parse_step(step_node, f"{path}.step")
    return OptimizerSettings(
        sigma=_float(vals["sigma"], f"{path}.sigma"),
        epsilon=_float(vals["epsilon"], f"{path}.epsilon"),
        max_iters=int(vals["max_iters"]), step=step, seed=int(vals["seed"]))


def _parse_stochastic(node, path: str) -> StochasticParams:
    vals = _take(_require_mapping(node, path), path, {
        "mu": (False, 10.0), "lo": (False, 0.075), "hi": (False, 0.125)})
    return StochasticParams(mu=_float(vals["mu"], f"{path}.mu"),
                            lo=_float(vals["lo"], f"{path}.lo"),
                            hi=_float(vals["hi"], f"{path}.hi"))


def _parse_output(node, path: str) -> OutputOptions:
    vals = _take(_require_mapping(node, path), path, {
        "sample_dt": (False, 1.0), "plot": (False, True),
        "magnify": (False, None)})
    magnify = vals["magnify"]
    if magnify is not None:
        magnify = tuple(_float_list(magnify, f"{path}.magnify"))
        if len(magnify) != 2:
            raise ConfigError(f"{path}.magnify: expected [t0, t1]")
    return OutputOptions(sample_dt=_float(vals["sample_dt"], f"{path}.sample_dt"),
                         plot=bool(vals["plot"]), magnify=magnify)


def parse_scenario(data, name: str = "scenario") -> Scenario:
    vals = _take(_require_mapping(data, name), name, {
        "name": (False, name), "mission": (True, None), "policy": (False, None),
        "optimizer": (False, None), "stochastic": (False, None),
        "output": (False, None), "expected_cost": (False, None),
    })
    mission = _parse_mission(vals["mission"], "mission")
    policy = None
    if vals["policy"] is not None:
        policy = _parse_policy(vals["policy"], "policy", mission.n_agents)
    optimizer = OptimizerSettings() if vals["optimizer"] is None \
        else _parse_optimizer(vals["optimizer"], "optimizer")
    stochastic = None
    if vals["stochastic"] is not None:
        stochastic = _parse_stochastic(vals["stochastic"], "stochastic")
    output = OutputOptions() if vals["output"] is None \
        else _parse_output(vals["output"], "output")
    expected = vals["expected_cost"]
    return Scenario(name=str(vals["name"]), mission=mission, policy=policy,
                    optimizer=optimizer, stochastic=stochastic, output=output,
                    expected_cost=None if expected is None else float(expected))


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return parse_scenario(data, name=str(path))


def scenario_to_dict(sc: Scenario) -> dict:
    m = sc.mission
    data = {
        "name": sc.name,
        "mission": {
            "length": m.length, "lo": m.lo, "hi": m.hi,
            "points": [float(x) for x in m.points],
            "growth": [float(x) for x in m.growth],
            "decay": m.decay, "horizon": m.horizon,
            "r0": [float(x) for x in m.r0],
            "no_crossing": m.no_crossing,
            "agents": [{"start": float(s), "range": float(r)}
                       for s, r in zip(m.starts, m.ranges)],
        },
        "optimizer": {
            "sigma": sc.optimizer.sigma, "epsilon": sc.optimizer.epsilon,
            "max_iters": sc.optimizer.max_iters, "seed": sc.optimizer.seed,
            "step": _step_to_dict(sc.optimizer.step),
        },
        "output": {"sample_dt": sc.output.sample_dt, "plot": sc.output.plot},
    }
    if sc.output.magnify is not None:
        data["output"]["magnify"] = list(sc.output.magnify)
    if sc.policy is not None:
        data["policy"] = policy_to_dict(sc.policy)
    if sc.stochastic is not None:
        data["stochastic"] = {"mu": sc.stochastic.mu, "lo": sc.stochastic.lo,
                              "hi": sc.stochastic.hi}
    if sc.expected_cost is not None:
        data["expected_cost"] = sc.expected_cost
    return data


def _step_to_dict(step) -> dict:
    if isinstance(step, ConstantStep):
        return {"mode": "constant", "eta_switch": step.eta_switch,
                "eta_dwell": step.eta_dwell}
    return {"mode": "armijo", "beta": step.beta, "gamma": step.gamma,
            "initial": step.initial}


def policy_to_dict(policy: Policy) -> dict:
    return {"agents": [{"switches": [float(x) for x in th],
                        "dwells": [float(x) for x in w]}
                       for th, w in zip(policy.switches, policy.dwells)]}


def dump_scenario(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scenario_to_dict(sc), fh, sort_keys=False)


def dump_policy(policy: Policy, path) -> None:
    """Write a policy in the scenario policy-section format (warm-startable)."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump({"policy": policy_to_dict(policy)}, fh, sort_keys=False)


def load_policy(path, n_agents: int) -> Policy:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    vals = _take(_require_mapping(data, str(path)), str(path),
                 {"policy": (True, None)})
    return _parse_policy(vals["policy"], "policy", n_agents)


# ---------------------------------------------------------------------------
# Built-in benchmark scenarios.

BUILTIN_NAMES = ("one-agent-a", "one-agent-b", "one-agent-c", "one-agent-d",
                 "two-agent-full", "two-agent-restricted")


def builtin_scenario(name: str) -> Scenario:
    """Benchmark configurations with published reference costs where known.

    One-agent family: unit-spaced sampling points over [0, 20], common range
    4, decay 3, horizon 400, initial uncertainty 4.  Two-agent family: the
    same over [0, 40] with growth 0.01.  The two-agent reference costs are
    unreliable and therefore omitted; those runs are judged on convergence
    and ordering behavior only.
    """
    if name not in BUILTIN_NAMES:
        raise ConfigError(
            f"unknown scenario '{name}'; available: {', '.join(BUILTIN_NAMES)}")
    armijo = OptimizerSettings(sigma=5.0, epsilon=2e-10, max_iters=250,
                               step=ArmijoStep(), seed=0)
    if name.startswith("one-agent"):
        points = list(np.linspace(0.0, 20.0, 21))
        base = dict(length=20.0, lo=0.0, hi=20.0, points=points, decay=3.0,
                    horizon=400.0, r0=4.0)
        growth = 0.1
        agents = [(0.0, 4.0)]
        stochastic = None
        optimizer = armijo
        expected = None
        if name == "one-agent-a":
            expected = 17.77
        elif name == "one-agent-b":
            base.update(lo=4.0, hi=16.0)
            agents = [(4.0, 4.0)]
            expected = 39.14
        elif name == "one-agent-c":
            growth = [0.5] + [0.1] * 19 + [0.5]
            expected = 39.30
        else:  # one-agent-d
            stochastic = StochasticParams(mu=10.0, lo=0.075, hi=0.125)
            optimizer = OptimizerSettings(
                sigma=5.0, epsilon=2e-10, max_iters=150,
                step=ConstantStep(eta_switch=0.2, eta_dwell=0.2), seed=0)
            expected = 17.54
        mission = MissionConfig.create(growth=growth, agents=agents, **base)
        return Scenario(name=name, mission=mission, policy=None,
                        optimizer=optimizer, stochastic=stochastic,
                        output=OutputOptions(magnify=(0.0, 75.0)),
                        expected_cost=expected)
    points = list(np.linspace(0.0, 40.0, 41))
    base = dict(length=40.0, points=points, decay=3.0, horizon=400.0, r0=4.0,
                growth=0.01)
    if name == "two-agent-full":
        mission = MissionConfig.create(lo=0.0, hi=40.0,
                                       agents=[(0.0, 4.0), (20.0, 4.0)], **base)
    else:
        mission = MissionConfig.create(lo=4.0, hi=36.0,
                                       agents=[(4.0, 4.0), (20.0, 4.0)], **base)
    return Scenario(name=name, mission=mission, policy=None, optimizer=armijo,
                    stochastic=None, output=OutputOptions(magnify=(0.0, 75.0)),
                    expected_cost=None)
