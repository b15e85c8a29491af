"""Batch command line: solve -> theta -> strata -> beta -> cover -> audit
-> report.

Every subcommand reads one JSON config (see config.py), writes deterministic
CSV/JSON artifacts into the output directory (override with the PSTRAT_OUT
environment variable), and exits 0 on success, 1 on a config problem, 2 when
the solver hits its iteration cap, and 3 when a pipeline invariant fails
(the message names it).  Floats are emitted with 17 significant digits so
outputs round-trip exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import covering as cov
from . import grid as gridmod
from . import jones, minimize as minmod, monitor
from .config import ConfigError, RunConfig, load_config

SCHEMA_VERSION = 1


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: str, header: list, rows: list):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              and not isinstance(v, bool) else str(v)
                              for v in row) + "\n")


def _write_json(path: str, payload: dict):
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, f"{cfg.scenario}_{name}")


def _snapshot_path(cfg: RunConfig, override: str | None) -> str:
    return override or _out(cfg, "snapshot.bin")


def _build_initial_map(cfg: RunConfig) -> gridmod.DiscretizedMap:
    return gridmod.build_map(cfg.domain, cfg.n_target, cfg.p, cfg.initializer,
                             free_radius=cfg.free_radius)


def _load_map(cfg: RunConfig, snapshot: str | None) -> gridmod.DiscretizedMap:
    path = _snapshot_path(cfg, snapshot)
    if not os.path.exists(path):
        raise ConfigError(f"snapshot not found: {path} (run `pstrat solve` first)")
    return gridmod.load_snapshot(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, args) -> int:
    mp = _build_initial_map(cfg)
    result = minmod.minimize(mp, cfg.schedule)
    path = _snapshot_path(cfg, args.snapshot)
    gridmod.save_snapshot(result.map, path, extra_meta={
        "scenario": cfg.scenario, "seed": cfg.seed,
        "converged": result.converged, "stop_reason": result.stop_reason,
        "regularization_eps": monitor.EPS_REG,
    })
    rows = [(0, result.energies[0], 0.0, 0)]
    rows += [(i + 1, e, s, b) for i, (e, s, b) in enumerate(
        zip(result.energies[1:], result.steps, result.backtracks))]
    _write_csv(_out(cfg, "energy.csv"),
               ["iteration", "energy", "step", "backtracks"], rows)
    print(f"solve: {cfg.scenario}: energy {result.energies[0]:.6g} -> "
          f"{result.energies[-1]:.6g} in {result.iterations} iterations "
          f"({result.stop_reason})")
    return 0 if result.converged else 2


def cmd_theta(cfg: RunConfig, args) -> int:
    mp = _load_map(cfg, args.snapshot)
    center = np.asarray(cfg.profile_center, dtype=float)
    prof = monitor.energy_profile(mp, center, cfg.profile_radii, cfg.cutoff)
    rows = [tuple(center) + (r, prof.theta[i], prof.dtheta_dr[i], prof.rate[i])
            for i, r in enumerate(prof.radii)]
    header = [f"x{j}" for j in range(mp.m)] + ["r", "theta", "dtheta_dr", "mf_rhs"]
    _write_csv(_out(cfg, "theta.csv"), header, rows)
    print(f"theta: wrote {len(rows)} radii at center {center.tolist()}")
    return 0


def _detect(cfg: RunConfig, mp) -> np.ndarray:
    det = cfg.detect
    return monitor.detect_singular(mp, det["eps0"], det["r"], cfg.cutoff,
                                   query_radius=det["query_radius"],
                                   stride=det["stride"])


def cmd_strata(cfg: RunConfig, args) -> int:
    mp = _load_map(cfg, args.snapshot)
    pts = _detect(cfg, mp)
    query = cfg.stratum_query()
    member = [bool(monitor.stratum_membership(mp, query, pt)) for pt in pts]
    payload = {
        "scenario": cfg.scenario,
        "k": query.k, "eta": query.eta, "r": query.r,
        "ladder": list(query.ladder),
        "points": [[float(c) for c in pt] for pt in pts],
        "member": member,
    }
    _write_json(_out(cfg, "strata.json"), payload)
    print(f"strata: {len(pts)} detected points, "
          f"{sum(member)} in the k={query.k} stratum")
    return 0


def cmd_beta(cfg: RunConfig, args) -> int:
    mp = _load_map(cfg, args.snapshot)
    pts = _detect(cfg, mp)
    if len(pts) == 0:
        _write_csv(_out(cfg, "beta.csv"), ["s", "beta"], [])
        print("beta: empty detected set")
        return 0
    mu = jones.WeightedPointMeasure(pts, np.ones(len(pts)))
    k = cfg.stratum["k"]
    scales = [cfg.detect["r"] * 5.0 ** j for j in range(3)]
    rows = []
    for y in pts:
        for s in scales:
            res = jones.beta_from_moments(mu, y, s, k)
            rows.append(tuple(y) + (s, res.beta))
    header = [f"y{j}" for j in range(mp.m)] + ["s", "beta"]
    _write_csv(_out(cfg, "beta.csv"), header, rows)
    print(f"beta: wrote {len(rows)} (point, scale) rows")
    return 0


def cmd_cover(cfg: RunConfig, args) -> int:
    mp = _load_map(cfg, args.snapshot)
    query = cfg.stratum_query()
    params = cfg.covering_params()
    state, family, total = cov.stratum_covering(
        mp, query, params, cfg.cutoff, stride=cfg.detect["stride"])
    payload = state.to_dict()
    payload.update({
        "scenario": cfg.scenario,
        "sum_rk": total,
        "k": params.k,
        "r_target": params.r_target,
        "families": {tag: state.sum_rk(params.k, (tag,))
                     for tag in ("E", "D")},
        "n_points": int(state.points.shape[0]),
    })
    _write_json(_out(cfg, "covering.json"), payload)
    print(f"cover: {family.size} balls over {state.points.shape[0]} points, "
          f"sum r^k = {total:.6g}")
    return 0


def cmd_audit(cfg: RunConfig, args) -> int:
    mp = _load_map(cfg, args.snapshot)
    pts = _detect(cfg, mp)
    aud = cfg.audit
    if len(pts) == 0:
        _write_json(_out(cfg, "audit.json"), {"verdict": "empty", "points": 0})
        print("audit: empty detected set")
        return 0
    pinch = np.array([
        monitor.normalized_energy(mp, y, 5 * aud["rbar"], cfg.cutoff)
        - monitor.normalized_energy(mp, y, aud["r_min"], cfg.cutoff)
        for y in pts])
    rep = jones.rectifiability_diagnostic(pts, pinch, aud["delta"],
                                          cfg.stratum["k"],
                                          cfg.constants["delta_r"])
    payload = {
        "scenario": cfg.scenario,
        "n_points": int(len(pts)),
        "high_pinch_fraction": rep.high_pinch_fraction,
        "verdict": "pass" if rep.passed else "fail",
        "worst_ratio": rep.reifenberg.worst_ratio if rep.reifenberg else 0.0,
        "beta_integrals": [float(v) for v in rep.beta_integrals],
    }
    _write_json(_out(cfg, "audit.json"), payload)
    print(f"audit: verdict {payload['verdict']}, worst ratio "
          f"{payload['worst_ratio']:.6g}")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    mp = _load_map(cfg, args.snapshot)
    center = np.asarray(cfg.profile_center, dtype=float)
    prof = monitor.energy_profile(mp, center, cfg.profile_radii, cfg.cutoff)
    _write_csv(_out(cfg, "report_theta.csv"),
               [f"x{j}" for j in range(mp.m)] + ["r", "theta", "dtheta_dr",
                                                 "mf_rhs"],
               [tuple(center) + (r, prof.theta[i], prof.dtheta_dr[i],
                                 prof.rate[i])
                for i, r in enumerate(prof.radii)])

    pts = _detect(cfg, mp)
    mink = cfg.minkowski
    table = cov.minkowski_estimate(pts, cfg.stratum["k"], mink["radii"], mp.m,
                                   mink["h_count"])
    _write_csv(_out(cfg, "report_minkowski.csv"),
               ["r", "volume", "ratio"], table)

    query = cfg.stratum_query()
    params = cfg.covering_params()
    state, family, total = cov.stratum_covering(
        mp, query, params, cfg.cutoff, stride=cfg.detect["stride"])
    sums = {tag: state.sum_rk(params.k, (tag,)) for tag in ("E", "D")}
    _write_csv(_out(cfg, "report_families.csv"),
               ["family", "sum_rk"], [(t, v) for t, v in sorted(sums.items())])

    ratios = [row[2] for row in table]
    payload = {
        "scenario": cfg.scenario,
        "theta_profile": {"center": [float(c) for c in center],
                          "radii": [float(r) for r in prof.radii],
                          "theta": [float(v) for v in prof.theta]},
        "minkowski": {"rows": [[float(v) for v in row] for row in table],
                      "flatness": (max(ratios) / min(ratios)
                                   if ratios and min(ratios) > 0 else None)},
        "covering": {"sum_rk": total, "families": sums,
                     "n_balls": family.size,
                     "n_points": int(state.points.shape[0])},
        "detected_points": int(len(pts)),
    }
    _write_json(_out(cfg, "report.json"), payload)
    print(f"report: {len(pts)} detected points, covering sum r^k "
          f"{total:.6g}, minkowski flatness "
          f"{payload['minkowski']['flatness']}")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "theta": cmd_theta,
    "strata": cmd_strata,
    "beta": cmd_beta,
    "cover": cmd_cover,
    "audit": cmd_audit,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pstrat",
        description="p-energy minimizing maps: singular-set stratification lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the JSON config")
        sp.add_argument("--snapshot", default=None,
                        help="snapshot path (default: <out>/<scenario>_snapshot.bin)")
        sp.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (cov.CoveringError, monitor.MonitorError, monitor.CutoffError,
            gridmod.GridError, jones.MeasureError, jones.DisjointnessError,
            minmod.DescentError) as exc:
        print(f"pipeline invariant failed [{type(exc).__name__}]: {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
