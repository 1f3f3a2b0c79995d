"""
Scenario files and the end-to-end run.

A scenario is a TOML (or JSON) document describing a map family, an adiabatic
schedule and the analysis settings. ``run_scenario`` executes the pipeline
family → KW sweep → vortex checks → atoms → tree → holonomy, stopping at the
first failing stage and keeping whatever was produced before it.
"""
import json
import logging
import math
import os
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

import app_config
from bubble_analysis import detect_atoms
from bubble_tree import BubbleTree, TreeConfig, build_tree, gromov_report, verify_conservation
from errors import ScenarioError, TheoryViolationError, VortexLabError
from gauge_holonomy import (angular_decay_exponent, classify_condition, conic_integrability, conic_model,
                            decay_fit, decaying_gauge, energy_tail, holonomy_profile, pullback_inversion,
                            smooth_model)
from holomorphic_data import (FamilySpec, HoloMap, MapFamily, energy_density, family_limit, total_energy,
                              uhlenbeck_limit)
from kazdan_warner import adiabatic_sweep, geometric_schedule
from sphere_geometry import ScalarField, build_grid
from vortex import assemble_vortex, kw_residual_of, vortex_residual, vortex_table

logger = logging.getLogger(__name__)

STAGES = ("family", "kw_sweep", "vortex", "atoms", "tree", "holonomy")


@dataclass(frozen=True)
class Scenario:
    name: str
    k: int
    r: int
    L_max: int
    family: FamilySpec
    s0: float
    ratio: float
    count: int
    kw_tol: float = app_config.KW_TOL
    kw_max_iter: int = app_config.KW_MAX_ITER
    warm_start: bool = False
    kw_delta: Optional[float] = None
    map_index: int = 0
    tree: TreeConfig = field(default_factory=TreeConfig)
    holonomy_radii: Tuple[float, ...] = tuple(np.geomspace(1e-3, 1e-1, 8).tolist())
    n_theta: int = 64
    alpha: float = 2.5
    beta: float = 0.5
    output_dir: str = app_config.OUTPUT_DIR
    schema_version: int = app_config.SCHEMA_VERSION

    @property
    def schedule(self) -> np.ndarray:
        return geometric_schedule(self.s0, self.ratio, self.count)

    def to_json(self) -> Dict[str, Any]:
        return {
            "name": self.name, "k": self.k, "r": self.r, "L_max": self.L_max,
            "family": {"roots": [list(c) for c in self.family.roots], "delta": self.family.delta,
                       "base_point": None if self.family.base_point is None
                       else [self.family.base_point.real, self.family.base_point.imag],
                       "fiber": None if self.family.fiber is None else list(self.family.fiber)},
            "schedule": {"s0": self.s0, "ratio": self.ratio, "count": self.count},
            "kw": {"tol": self.kw_tol, "max_iter": self.kw_max_iter, "warm_start": self.warm_start,
                   "delta": self.kw_delta, "map_index": self.map_index},
            "bubbles": {"C0": self.tree.C0, "eps0": self.tree.eps0, "m_levels": self.tree.m_levels,
                        "eps0_renorm": self.tree.eps0_renorm, "normalize": self.tree.normalize},
            "holonomy": {"radii": list(self.holonomy_radii), "n_theta": self.n_theta,
                         "alpha": self.alpha, "beta": self.beta},
            "schema_version": self.schema_version,
        }


def _fiber_entry(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return f"({float(value[0])!r}) + ({float(value[1])!r})*I"
    if isinstance(value, (int, float)):
        return repr(float(value))
    raise ScenarioError(f"fiber entries must be expressions or [re, im] pairs, got {value!r}")


def _complex(value) -> Optional[complex]:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return complex(float(value[0]), float(value[1]))
    return complex(value)


def parse_scenario(data: Dict[str, Any], n_jobs: Optional[int] = None) -> Scenario:
    """Validate a scenario mapping; every problem raises ScenarioError."""
    try:
        head = data.get("scenario", {})
        version = int(head.get("schema_version", app_config.SCHEMA_VERSION))
        if version != app_config.SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema_version {version}")
        r = int(head["r"])
        fam = data["family"]
        roots = tuple(tuple(str(e) for e in comp) for comp in fam["roots"])
        k = int(head.get("k", len(roots) - 1))
        sched = data["schedule"]
        s0, ratio, count = float(sched["s0"]), float(sched["ratio"]), int(sched["count"])
        kw = data.get("kw", {})
        bub = data.get("bubbles", {})
        hol = data.get("holonomy", {})
        L_max = int(data.get("grid", {}).get("L_max", app_config.L_MAX))
        fiber = fam.get("fiber")
        spec = FamilySpec(roots, r, str(fam.get("delta", "1/s")), _complex(fam.get("base_point")),
                          None if fiber is None else tuple(_fiber_entry(v) for v in fiber))
        radii = tuple(float(x) for x in hol.get("radii", np.geomspace(1e-3, 1e-1, 8).tolist()))
        n_theta = int(hol.get("n_theta", 64))
        tree = TreeConfig(C0=float(bub.get("C0", app_config.C0)),
                          eps0=float(bub.get("eps0", app_config.EPS0)),
                          m_levels=int(bub.get("m_levels", app_config.M_LEVELS)),
                          eps0_renorm=float(bub.get("eps0_renorm", app_config.EPS0_RENORM)),
                          normalize=bool(bub.get("normalize", True)),
                          holonomy_radii=radii, n_theta=n_theta,
                          n_jobs=n_jobs or app_config.THREADS)
        scenario = Scenario(
            name=str(head.get("name", "scenario")), k=k, r=r, L_max=L_max, family=spec,
            s0=s0, ratio=ratio, count=count,
            kw_tol=float(kw.get("tol", app_config.KW_TOL)),
            kw_max_iter=int(kw.get("max_iter", app_config.KW_MAX_ITER)),
            warm_start=bool(kw.get("warm_start", False)),
            kw_delta=None if kw.get("delta") is None else float(kw["delta"]),
            map_index=int(kw.get("map_index", 0)),
            tree=tree, holonomy_radii=radii, n_theta=n_theta,
            alpha=float(hol.get("alpha", 2.5)), beta=float(hol.get("beta", 0.5)),
            output_dir=str(data.get("output", {}).get("dir", app_config.OUTPUT_DIR)),
            schema_version=version,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"malformed scenario: {type(e).__name__}: {str(e)}")
    validate_scenario(scenario)
    return scenario


def validate_scenario(sc: Scenario) -> None:
    if sc.r < 0 or sc.k < 1:
        raise ScenarioError(f"need k ≥ 1 and r ≥ 0, got k={sc.k}, r={sc.r}")
    if len(sc.family.roots) != sc.k + 1:
        raise ScenarioError(f"{len(sc.family.roots)} root lists for k = {sc.k}")
    for i, comp in enumerate(sc.family.roots):
        if len(comp) > sc.r:
            raise ScenarioError(f"component {i} lists {len(comp)} roots for degree {sc.r}")
    if sc.family.fiber is not None and len(sc.family.fiber) != sc.k + 1:
        raise ScenarioError(f"fiber has {len(sc.family.fiber)} entries for k = {sc.k}")
    if sc.s0 <= 0 or sc.s0 ** 2 <= 4 * math.pi * sc.r:
        raise ScenarioError(f"s0 = {sc.s0} is not in the stable range s0² > 4πr = {4 * math.pi * sc.r:.4g}")
    if sc.ratio <= 1:
        raise ScenarioError(f"schedule ratio must exceed 1, got {sc.ratio}")
    if sc.count < 6:
        raise ScenarioError(f"schedule needs at least 6 points for regime fits, got {sc.count}")
    if not 0 < sc.tree.C0 < app_config.B0 / 2:
        raise ScenarioError(f"C0 must lie in (0, {app_config.B0 / 2}), got {sc.tree.C0}")
    if sc.L_max < app_config.L_MAX_MIN:
        raise ScenarioError(f"L_max must be at least {app_config.L_MAX_MIN}, got {sc.L_max}")
    if sc.kw_tol <= 0 or sc.kw_max_iter < 1:
        raise ScenarioError("kw.tol must be positive and kw.max_iter at least 1")
    if not 0 <= sc.map_index < sc.count:
        raise ScenarioError(f"kw.map_index {sc.map_index} outside the schedule")
    if sc.kw_delta is not None and sc.kw_delta <= 0:
        raise ScenarioError(f"kw.delta must be positive, got {sc.kw_delta}")
    radii = np.asarray(sc.holonomy_radii)
    if radii.size < 5 or np.any(radii <= 0) or radii.max() / radii.min() < 10:
        raise ScenarioError("holonomy.radii needs at least 5 positive radii spanning a decade")
    if not 0 < sc.beta <= 1:
        raise ScenarioError(f"holonomy.beta must lie in (0, 1], got {sc.beta}")
    for text in (sc.family.delta,) + tuple(e for comp in sc.family.roots for e in comp):
        try:
            sc.family._expr(text)
        except Exception as e:
            raise ScenarioError(f"cannot parse expression {text!r}: {str(e)}")


def load_scenario(path: str, n_jobs: Optional[int] = None) -> Scenario:
    if not os.path.exists(path):
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        if path.endswith(".json"):
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ScenarioError(f"cannot parse {path}: {str(e)}")
    scenario = parse_scenario(data, n_jobs)
    logger.info(f"Loaded scenario '{scenario.name}' from {path}")
    return scenario


@dataclass
class RunReport:
    scenario: Scenario
    stages: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)
    conservation: Optional[Dict[str, Any]] = None
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    fields: Dict[str, ScalarField] = field(default_factory=dict)
    heatmaps: Dict[str, ScalarField] = field(default_factory=dict)
    tree: Optional[BubbleTree] = None
    error: Optional[VortexLabError] = None

    @property
    def failed_stage(self) -> Optional[str]:
        for name, info in self.stages.items():
            if info["status"] == "failed":
                return name
        return None

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return self.error.exit_code
        if self.conservation is not None and not self.conservation["passed"]:
            return TheoryViolationError.exit_code
        return 0

    def to_json(self) -> Dict[str, Any]:
        out = {
            "schema_version": app_config.SCHEMA_VERSION,
            "scenario": self.scenario.to_json(),
            "stages": self.stages,
            "results": self.results,
            "timings": self.timings,
            "exit_code": self.exit_code,
        }
        if self.conservation is not None:
            out["conservation"] = self.conservation
        return out


def kw_map(sc: Scenario, fam: MapFamily) -> HoloMap:
    """The fixed map the KW sweep runs on: a family member, or the spec at a fixed δ."""
    if sc.kw_delta is None:
        return fam.maps[sc.map_index]
    fixed = replace(sc.family, delta=repr(sc.kw_delta))
    return MapFamily.from_spec(fixed, [sc.s0]).last


def _stage_family(sc: Scenario, report: RunReport, state: Dict[str, Any]) -> None:
    fam = MapFamily.from_spec(sc.family, sc.schedule)
    state["family"] = fam
    grid = build_grid(sc.L_max)
    state["grid"] = grid
    report.results["family"] = {
        "base_point": [fam.spec.base_point.real, fam.spec.base_point.imag],
        "degree": fam.r,
        "last_map": fam.last.to_json(),
        "last_energy": total_energy(fam.last),
    }
    report.heatmaps["energy_last"] = energy_density(fam.last, grid)


def _stage_kw(sc: Scenario, report: RunReport, state: Dict[str, Any]) -> None:
    f = kw_map(sc, state["family"])
    state["kw_map"] = f
    sweep = adiabatic_sweep(f, sc.schedule, state["grid"], sc.kw_tol, sc.kw_max_iter,
                            sc.warm_start, sc.tree.n_jobs)
    state["sweep"] = sweep
    report.tables["kw_sweep"] = sweep.to_frame()
    report.fields["phi"] = sweep.solutions[-1].phi
    report.fields["phi_inf"] = sweep.phi_inf
    report.fields["h"] = sweep.background.h
    report.heatmaps["energy_kw_map"] = energy_density(f, state["grid"])
    report.results["kw_sweep"] = {
        "map": f.to_json(),
        "final_residual": float(sweep.solutions[-1].residual),
        "sup_errors": sweep.sup_errors.tolist(),
        "decay_slope": sweep.decay_slope(),
    }


def _stage_vortex(sc: Scenario, report: RunReport, state: Dict[str, Any]) -> None:
    sweep = state["sweep"]
    f = state["kw_map"]
    vortices = [assemble_vortex(f, sol, sweep.background) for sol in sweep.solutions]
    identity = []
    for v in vortices:
        kw_res = kw_residual_of(v).values
        gap = np.max(np.abs(vortex_residual(v).values + 0.5 * kw_res))
        identity.append(float(gap / (1.0 + v.coupling)))
    table = vortex_table(vortices)
    report.tables["vortex"] = table
    last = vortices[-1]
    report.fields["u"] = last.u
    report.fields["curvature"] = last.curvature
    report.fields["section_norm"] = last.section_norm
    report.results["vortex"] = {
        "degree_error": float(np.max(np.abs(table["degree_check"] - sc.r))),
        "residual_identity": max(identity),
        "ymh_total": table["ymh_total"].tolist(),
        "bogomolny_gap": float(np.max(np.abs(table["bogomolny_gap"]))),
    }


def _stage_atoms(sc: Scenario, report: RunReport, state: Dict[str, Any]) -> None:
    fam = state["family"]
    lim = family_limit(fam)
    atoms = detect_atoms(fam, sc.tree.eps0, sc.tree.m_levels, limit=lim)
    state["atoms"] = atoms
    report.tables["atoms"] = pd.DataFrame(
        [{"point": json.dumps(a.to_json()["point"]), "mass": a.mass, "capture_radius": a.capture_radius}
         for a in atoms], columns=["point", "mass", "capture_radius"])
    uhlenbeck = uhlenbeck_limit(fam, [(a.point, a.mass) for a in atoms])
    report.results["atoms"] = {"E": lim.E.to_json(), "f0": lim.f0.to_json(), "uhlenbeck": uhlenbeck.to_json(),
                               "atoms": [a.to_json() for a in atoms]}


def _stage_tree(sc: Scenario, report: RunReport, state: Dict[str, Any]) -> None:
    fam = state["family"]
    tree = build_tree(fam, sc.tree)
    report.tree = tree
    conservation = verify_conservation(tree, sc.r)
    report.conservation = conservation.to_json()
    gromov = gromov_report(fam, tree)
    rows = []
    for path, node in tree.nodes():
        for s, t in zip(fam.schedule, node.t_of_s):
            rows.append({"node": path, "s": s, "t": t})
    report.tables["scales"] = pd.DataFrame(rows, columns=["node", "s", "t"])
    report.results["tree"] = {"total_energy": tree.total_energy, "depth": tree.depth,
                              "gromov": gromov.to_json()}


def _stage_holonomy(sc: Scenario, report: RunReport, state: Dict[str, Any]) -> None:
    radii = sc.holonomy_radii
    conic = conic_model(sc.beta, radii, sc.n_theta)
    smooth = smooth_model(radii, sc.n_theta)
    out: Dict[str, Any] = {
        "conic_model": classify_condition(holonomy_profile(conic), conic).to_json(),
        "smooth_model": classify_condition(holonomy_profile(smooth), smooth).to_json(),
    }
    gauge = decaying_gauge(smooth_model(radii, sc.n_theta), sc.alpha, 1.0)
    out["decaying_gauge"] = {"alpha": sc.alpha,
                             "pullback_exponent": angular_decay_exponent(pullback_inversion(gauge.sample))}
    integrable = conic_integrability(0.5 * sc.beta, sc.beta)
    out["conic_integrability"] = {"eps": 0.5 * sc.beta, "beta": sc.beta, "value": integrable.value,
                                  "divergent": integrable.divergent}
    tails = []
    if report.tree is not None:
        rho = np.geomspace(10.0, 1000.0, 12)
        for path, node in report.tree.nodes():
            if node.tag == "root" or node.map is None or node.map.r == 0:
                continue
            fit = decay_fit(rho, energy_tail(node.map, rho))
            tails.append({"node": path, "slope": fit.slope, "within_bound": fit.within_bound})
    out["energy_tails"] = tails
    report.results["holonomy"] = out


_RUNNERS = {
    "family": _stage_family,
    "kw_sweep": _stage_kw,
    "vortex": _stage_vortex,
    "atoms": _stage_atoms,
    "tree": _stage_tree,
    "holonomy": _stage_holonomy,
}


def run_scenario(scenario: Scenario, stages: Tuple[str, ...] = STAGES) -> RunReport:
    """Run the pipeline; the first failing stage ends it and is recorded in the report."""
    report = RunReport(scenario)
    state: Dict[str, Any] = {}
    for name in stages:
        logger.info(f"Stage '{name}' started")
        start = time.perf_counter()
        try:
            _RUNNERS[name](scenario, report, state)
            report.stages[name] = {"status": "ok"}
        except VortexLabError as e:
            logger.error(f"Stage '{name}' failed: {str(e)}")
            report.stages[name] = {"status": "failed", "error": type(e).__name__, "message": str(e)}
            report.error = e
        finally:
            report.timings[name] = time.perf_counter() - start
        if report.error is not None:
            break
        logger.info(f"Stage '{name}' finished in {report.timings[name]:.2f}s")
    for name in stages:
        report.stages.setdefault(name, {"status": "skipped"})
    return report
