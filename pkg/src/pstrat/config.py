"""Run configuration: one strict-schema JSON file per scenario.

Every knob that the run needs lives here, including all the constants the
analysis leaves non-constructive (detector level, Reifenberg constants,
covering budgets, pinching amounts).  Unknown keys are rejected with their
full path; every module-level precondition checkable at load time is
checked at load time (exponent range, cutoff feasibility, admissibility of
the configured scales inside the configured domain).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .covering import CoveringParams
from .grid import GridDomain, GridError, Initializer
from .minimize import DescentSchedule
from .monitor import CutoffError, CutoffProfile, MonitorError, StratumQuery, \
    make_cutoff, make_ladder

ENV_OUT_DIR = "PSTRAT_OUT"

#: scenario name -> (initializer kind, target dimension, initializer kwargs)
SCENARIOS = {
    "constant": ("constant", 3, {}),
    "radial-p2": ("radial", 3, {}),
    "radial-p25": ("radial", 3, {}),
    "cylindrical-p15": ("cylindrical", 2, {}),
    "cylindrical-p2": ("cylindrical", 2, {}),
    "geodesic-line": ("geodesic", 3, {"rate": 1.5}),
    "random": ("random", 3, {}),
}


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "scenario": str,
    "seed": int,
    "out_dir": str,
    "p": float,
    "free_radius": float,
    "grid": {"m": int, "n_target": int, "h": float, "r_dom": float},
    "cutoff": {"t_a": float, "t_b": float, "xi": float},
    "descent": {"step_size": float, "max_iter": int, "tol": float},
    "profile": {"center": list, "radii": list},
    "stratum": {"k": int, "eta": float, "r": float, "ladder_top": float},
    "detect": {"eps0": float, "r": float, "stride": int, "query_radius": float},
    "covering": {"kappa": int, "jhat": int, "gamma": float, "delta": float,
                 "delta0": float, "e_ceiling": float, "lam_bound": float},
    "constants": {"c_r": float, "delta_r": float, "c_i": float, "c_ii": float,
                  "c_fat": float, "c_ball": float, "c_round": float},
    "minkowski": {"radii": list, "h_count": float},
    "audit": {"delta": float, "rbar": float, "r_min": float},
}

_DEFAULTS = {
    "seed": 0,
    "out_dir": "out",
    "free_radius": 1.0,
    "cutoff": {"t_a": 3.5, "t_b": 4.0, "xi": 0.1},
    "descent": {"step_size": 1e-3, "max_iter": 150, "tol": 1e-7},
    "profile": {"center": [0.15, 0.0, 0.0], "radii": [0.05, 0.1, 0.15, 0.2]},
    "stratum": {"k": 1, "eta": 1e-3, "r": 0.03, "ladder_top": 0.15},
    "detect": {"eps0": 0.5, "r": 0.04, "stride": 2, "query_radius": 1.0},
    "covering": {"kappa": 1, "jhat": 2, "gamma": 0.05, "delta": 0.05,
                 "delta0": 0.2, "e_ceiling": 1.0, "lam_bound": 1.0},
    "constants": {"c_r": 40.0, "delta_r": 1e-2, "c_i": 40.0, "c_ii": 80.0,
                  "c_fat": 64.0, "c_ball": 512.0, "c_round": 512.0},
    "minkowski": {"radii": [0.2, 0.1, 0.05, 0.025], "h_count": 0.01},
    "audit": {"delta": 0.05, "rbar": 0.04, "r_min": 0.02},
}

_REQUIRED = ("scenario", "p", "grid")


def _check_keys(data: dict, schema: dict, path: str = ""):
    for key, val in data.items():
        here = f"{path}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {here}")
        spec = schema[key]
        if isinstance(spec, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {here} must be a table")
            _check_keys(val, spec, here + ".")
        elif spec is float:
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"config key {here} must be a number")
        elif not isinstance(val, spec) or isinstance(val, bool) and spec is int:
            raise ConfigError(f"config key {here} must be {spec.__name__}")


def _merged(data: dict) -> dict:
    out = {}
    for key, default in _DEFAULTS.items():
        if isinstance(default, dict):
            sub = dict(default)
            sub.update(data.get(key, {}))
            out[key] = sub
        else:
            out[key] = data.get(key, default)
    for key in data:
        if key not in out:
            out[key] = data[key]
    return out


@dataclass
class RunConfig:
    raw: dict = field(repr=False)
    scenario: str
    seed: int
    out_dir: str
    p: float
    free_radius: float
    domain: GridDomain
    n_target: int
    initializer: Initializer
    cutoff: CutoffProfile
    schedule: DescentSchedule
    profile_center: list
    profile_radii: list
    stratum: dict
    detect: dict
    covering: dict
    constants: dict
    minkowski: dict
    audit: dict

    def stratum_query(self) -> StratumQuery:
        s = self.stratum
        return StratumQuery(s["k"], s["eta"], s["r"],
                            make_ladder(s["r"], s["ladder_top"]))

    def covering_params(self) -> CoveringParams:
        c = self.covering
        k = self.constants
        return CoveringParams(kappa=c["kappa"], jhat=c["jhat"],
                              gamma=c["gamma"], delta=c["delta"],
                              delta0=c["delta0"], e_ceiling=c["e_ceiling"],
                              lam_bound=c["lam_bound"],
                              eta=self.stratum["eta"], k=self.stratum["k"],
                              c_fat=k["c_fat"], c_ball=k["c_ball"],
                              c_round=k["c_round"], c_ii=k["c_ii"])


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(data, _SCHEMA)
    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"missing config key: {key}")
    for key in ("m", "n_target", "h", "r_dom"):
        if key not in data["grid"]:
            raise ConfigError(f"missing config key: grid.{key}")
    cfg = _merged(data)

    scenario = cfg["scenario"]
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; pick one of "
                          f"{sorted(SCENARIOS)}")
    kind, n_default, init_kwargs = SCENARIOS[scenario]
    grid = cfg["grid"]
    n_target = grid["n_target"] or n_default
    try:
        domain = GridDomain(grid["m"], float(grid["h"]), float(grid["r_dom"]))
        initializer = Initializer(kind, seed=cfg["seed"], **init_kwargs)
        cut = cfg["cutoff"]
        psi = make_cutoff(float(cut["t_a"]), float(cut["t_b"]), float(cut["xi"]))
        des = cfg["descent"]
        schedule = DescentSchedule(float(des["step_size"]), int(des["max_iter"]),
                                   float(des["tol"]))
    except (GridError, CutoffError) as exc:
        raise ConfigError(str(exc))

    p = float(cfg["p"])
    if not 1 < p < grid["m"]:
        raise ConfigError(f"exponent p={p} must satisfy 1 < p < m={grid['m']}")

    # admissibility of configured scales inside the configured domain
    det = cfg["detect"]
    if det["query_radius"] + psi.t_b * det["r"] > domain.r_dom + 1e-9:
        raise ConfigError("detect.query_radius + t_b * detect.r exceeds R_dom")
    st = cfg["stratum"]
    if st["ladder_top"] > domain.r_dom - 1e-9:
        raise ConfigError("stratum.ladder_top exceeds R_dom")

    out_dir = os.environ.get(ENV_OUT_DIR, cfg["out_dir"])
    return RunConfig(raw=cfg, scenario=scenario, seed=int(cfg["seed"]),
                     out_dir=out_dir, p=p, free_radius=float(cfg["free_radius"]),
                     domain=domain, n_target=int(n_target),
                     initializer=initializer, cutoff=psi, schedule=schedule,
                     profile_center=cfg["profile"]["center"],
                     profile_radii=cfg["profile"]["radii"],
                     stratum=cfg["stratum"], detect=cfg["detect"],
                     covering=cfg["covering"], constants=cfg["constants"],
                     minkowski=cfg["minkowski"], audit=cfg["audit"])
