"""
Recursive bubble-tree assembly.

The root carries the limit map of the family after its common divisor is
stripped. Every energy atom is renormalized into a bubble chart whose limit
becomes a child node; atoms found inside a bubble chart are treated the same
way one level down. Attachment points are stored in the parent's chart.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

import app_config
from bubble_analysis import (EnergyAtom, RegimeFit, bubble_limit, classify_regime, compute_scale,
                             detect_atoms, renormalize_family)
from errors import (AccuracyError, DegenerateRescalingError, InvalidMapError, NonConvergenceError,
                    PreconditionError, ResolutionError, StratificationError, TheoryViolationError)
from gauge_holonomy import ConditionReport, classify_condition, connection_from_map, holonomy_profile
from holomorphic_data import (FamilyLimit, HoloMap, MapFamily, family_limit, fs_distance, point_from_json,
                              point_to_json)
from sphere_geometry import build_grid, is_infinity

logger = logging.getLogger(__name__)

GHOST_ENERGY = 0.05
CONSERVATION_TOL = 1e-2

# failures that end a branch without aborting the whole tree
_BRANCH_ERRORS = (NonConvergenceError, DegenerateRescalingError, PreconditionError,
                  StratificationError, ResolutionError)


@dataclass(frozen=True)
class TreeConfig:
    C0: float = app_config.C0
    eps0: float = app_config.EPS0
    m_levels: int = app_config.M_LEVELS
    eps0_renorm: float = app_config.EPS0_RENORM
    normalize: bool = True
    holonomy_radii: Tuple[float, ...] = tuple(np.geomspace(1e-3, 1e-1, 8).tolist())
    n_theta: int = 64
    n_jobs: int = app_config.THREADS


@dataclass(eq=False)
class BubbleNode:
    tag: str                                  # root | sphere | conic-sphere | error
    map: Optional[HoloMap]
    energy: int
    degree: int
    attachment: Optional[complex] = None
    children: List["BubbleNode"] = field(default_factory=list)
    regime: Optional[str] = None
    beta: Optional[float] = None
    lam: Optional[float] = None
    mass: Optional[float] = None
    tau: Optional[float] = None
    t_of_s: List[float] = field(default_factory=list)
    condition: Optional[ConditionReport] = None
    error: Optional[str] = None
    family: Optional[MapFamily] = field(default=None, repr=False)

    def walk(self, path: str = "root"):
        yield path, self
        for i, child in enumerate(self.children):
            yield from child.walk(f"{path}/{i}")


@dataclass(eq=False)
class BubbleTree:
    root: BubbleNode
    r: int

    @property
    def total_energy(self) -> int:
        return sum(node.energy for _, node in self.root.walk())

    @property
    def depth(self) -> int:
        return max(path.count("/") for path, _ in self.root.walk())

    def nodes(self) -> List[Tuple[str, BubbleNode]]:
        return list(self.root.walk())


def _atom_key(atom: EnergyAtom):
    p = atom.point
    if is_infinity(p):
        return (1, 0.0, 0.0)
    return (0, round(p.real, 9), round(p.imag, 9))


def _attachment_condition(m: HoloMap, config: TreeConfig) -> Optional[ConditionReport]:
    """Condition of the pulled-back connection around the neck (y = ∞) of a bubble."""
    try:
        c = connection_from_map(m.at_infinity(), config.holonomy_radii, config.n_theta)
        return classify_condition(holonomy_profile(c), c)
    except (AccuracyError, InvalidMapError, PreconditionError) as e:
        logger.warning(f"holonomy check skipped: {str(e)}")
        return None


def _error_leaf(atom: EnergyAtom, e: Exception) -> BubbleNode:
    return BubbleNode("error", None, 0, 0, attachment=atom.point, mass=atom.mass,
                      error=f"{type(e).__name__}: {str(e)}")


def _build_child(fam: MapFamily, lim: FamilyLimit, atom: EnergyAtom, config: TreeConfig,
                 level: int, max_depth: int) -> BubbleNode:
    if level > max_depth:
        raise TheoryViolationError(f"bubble tree deeper than ceil(r/C0) = {max_depth}")
    logger.info(f"Level {level}: renormalizing atom at {point_to_json(atom.point)} (mass {atom.mass:.6f})")
    try:
        scale = compute_scale(fam, atom, config.C0, config.eps0_renorm, limit=lim, n_jobs=1)
        regime: RegimeFit = classify_regime(scale, fam.schedule)
        rf = renormalize_family(fam, atom, scale, regime, config.normalize, limit=lim)
        bl = bubble_limit(rf, config.eps0, config.m_levels)
    except _BRANCH_ERRORS as e:
        logger.error(f"Bubble at {point_to_json(atom.point)} left unresolved: {str(e)}")
        return _error_leaf(atom, e)

    condition = _attachment_condition(bl.map, config)
    tag, beta = "sphere", None
    if condition is not None and condition.classification == "H_beta":
        tag, beta = "conic-sphere", condition.beta
    node = BubbleNode(tag, bl.map, bl.map.r, bl.map.r, attachment=atom.point, regime=regime.label,
                      beta=beta, lam=regime.lam, mass=atom.mass, tau=bl.tau,
                      t_of_s=scale.t.tolist(), condition=condition, family=rf.family)
    node.children = _build_children(rf.family, bl.limit, bl.atoms, config, level + 1, max_depth)
    return node


def _build_children(fam: MapFamily, lim: FamilyLimit, atoms: Sequence[EnergyAtom], config: TreeConfig,
                    level: int, max_depth: int) -> List[BubbleNode]:
    ordered = sorted(atoms, key=_atom_key)
    if not ordered:
        return []
    n_jobs = 1 if len(ordered) == 1 else config.n_jobs
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_build_child)(fam, lim, a, config, level, max_depth) for a in ordered)


def build_tree(fam: MapFamily, config: Optional[TreeConfig] = None) -> BubbleTree:
    """Root limit plus one renormalized child per energy atom, recursively."""
    config = config or TreeConfig()
    lim = family_limit(fam)
    atoms = detect_atoms(fam, config.eps0, config.m_levels, limit=lim)
    max_depth = math.ceil(fam.r / config.C0) if fam.r > 0 else 0
    root = BubbleNode("root", lim.f0, lim.f0.r, lim.f0.r, family=fam,
                      tau=float(fam.r - lim.f0.r - sum(a.mass for a in atoms)))
    root.children = _build_children(fam, lim, atoms, config, 1, max_depth)
    tree = BubbleTree(root, fam.r)
    logger.info(f"Built bubble tree: {len(tree.nodes())} nodes, depth {tree.depth}, "
                f"total energy {tree.total_energy}")
    return tree


# conservation -------------------------------------------------------------------

@dataclass(frozen=True)
class ConservationReport:
    passed: bool
    total: int
    numerical_total: float
    failures: List[Dict[str, str]]

    def to_json(self) -> Dict:
        return {"passed": self.passed, "total": self.total, "numerical_total": self.numerical_total,
                "failures": list(self.failures)}


def verify_conservation(tree: BubbleTree, r: Optional[int] = None) -> ConservationReport:
    """Energy bookkeeping, per-node neck balance and the ghost-bubble rule."""
    r = tree.r if r is None else r
    failures = []
    for path, node in tree.nodes():
        if node.tag == "error":
            failures.append({"path": path, "rule": "unresolved", "message": node.error or ""})
            continue
        if node.map is not None and node.energy != node.map.r:
            failures.append({"path": path, "rule": "degree",
                             "message": f"energy {node.energy} differs from map degree {node.map.r}"})
        if node.tag != "root" and node.energy < GHOST_ENERGY and len(node.children) < 2:
            failures.append({"path": path, "rule": "ghost",
                             "message": f"ghost bubble with {len(node.children)} children"})
        if node.mass is not None:
            child_mass = sum(c.mass or 0.0 for c in node.children)
            balance = node.mass - node.energy - child_mass
            if abs(balance) > CONSERVATION_TOL * max(1.0, node.mass):
                failures.append({"path": path, "rule": "neck",
                                 "message": f"atom mass {node.mass:.6f} leaves {balance:.3e} in the neck"})
        siblings = [c.attachment for c in node.children if c.attachment is not None]
        for i, p in enumerate(siblings):
            for q in siblings[i + 1:]:
                same = (is_infinity(p) and is_infinity(q)) or (
                    not is_infinity(p) and not is_infinity(q) and abs(p - q) < 1e-9)
                if same:
                    failures.append({"path": path, "rule": "attachment",
                                     "message": f"two children attached at {point_to_json(p)}"})

    total = tree.total_energy
    if total != r:
        failures.append({"path": "root", "rule": "total", "message": f"node energies sum to {total}, not {r}"})
    numerical = tree.root.energy + sum(c.mass or 0.0 for c in tree.root.children)
    if abs(numerical - r) > CONSERVATION_TOL * max(1, r):
        failures.append({"path": "root", "rule": "numerical",
                         "message": f"measured energy {numerical:.6f} differs from {r}"})
    for fail in failures:
        logger.warning(f"conservation failure at {fail['path']} ({fail['rule']}): {fail['message']}")
    return ConservationReport(not failures, total, float(numerical), failures)


# Gromov convergence -------------------------------------------------------------

@dataclass(frozen=True)
class NodeDistance:
    path: str
    distances: List[float]     # one per schedule point
    ratio: Optional[float]     # d(s_last) / d(s_last / 4)
    monotone: bool

    @property
    def distance(self) -> float:
        return self.distances[-1]


@dataclass(frozen=True)
class GromovReport:
    eps: float
    nodes: List[NodeDistance]

    @property
    def max_distance(self) -> float:
        return max((n.distance for n in self.nodes), default=0.0)

    def to_json(self) -> Dict:
        return {"eps": self.eps, "max_distance": self.max_distance,
                "nodes": [{"path": n.path, "distance": n.distance, "distances": n.distances,
                           "ratio": n.ratio, "monotone": n.monotone} for n in self.nodes]}


def _sample_points(node: BubbleNode, eps: float) -> np.ndarray:
    if node.tag == "root":
        z = build_grid(24).z.ravel()
    else:
        radii = np.linspace(0.0, 1.0 / eps, 81)[1:]
        angles = 2 * np.pi * (np.arange(64) + 0.5) / 64
        z = np.concatenate([[0j], (radii[:, None] * np.exp(1j * angles)[None, :]).ravel()])
    keep = np.ones(z.size, dtype=bool)
    for child in node.children:
        p = child.attachment
        if p is None:
            continue
        if is_infinity(p):
            keep &= np.abs(z) < 1.0 / eps
        else:
            keep &= np.abs(z - p) > eps
    return z[keep]


def gromov_report(fam: MapFamily, tree: BubbleTree, eps: float = 0.1) -> GromovReport:
    """Sup Fubini-Study distance between members and node limits off the ε-discs."""
    out = []
    for path, node in tree.nodes():
        if node.map is None:
            continue
        members = fam if node.tag == "root" and node.family is None else node.family
        if members is None:
            continue
        pts = _sample_points(node, eps)
        d = [float(np.max(fs_distance(m, node.map, pts))) if pts.size else 0.0 for m in members.maps]
        s = members.schedule
        j = int(np.argmin(np.abs(s - s[-1] / 4)))
        ratio = None
        if j < len(d) - 1 and d[j] > 0:
            ratio = d[-1] / d[j]
        top = np.array(d[members.top_half()])
        monotone = bool(np.all(np.diff(top) <= 1e-12 + 1e-9 * top[:-1]))
        if not monotone:
            logger.warning(f"node {path}: distance to the limit not monotone over the top of the schedule")
        out.append(NodeDistance(path, d, ratio, monotone))
    report = GromovReport(eps, out)
    logger.info(f"Gromov report: max sup-distance {report.max_distance:.3e} at s = {fam.schedule[-1]:.4g}")
    return report


# serialization -------------------------------------------------------------------

def _node_to_json(node: BubbleNode) -> Dict:
    return {
        "tag": node.tag,
        "energy": node.energy,
        "degree": node.degree,
        "beta": node.beta,
        "attachment": None if node.attachment is None else point_to_json(node.attachment),
        "map": None if node.map is None else {"coeffs": node.map.to_json()},
        "regime": node.regime,
        "lambda": node.lam,
        "mass": node.mass,
        "tau": node.tau,
        "t_of_s": list(node.t_of_s),
        "condition": None if node.condition is None else node.condition.to_json(),
        "error": node.error,
        "children": [_node_to_json(c) for c in node.children],
    }


def tree_to_json(tree: BubbleTree) -> Dict:
    return {
        "schema_version": app_config.SCHEMA_VERSION,
        "r": tree.r,
        "total_energy": tree.total_energy,
        "depth": tree.depth,
        "root": _node_to_json(tree.root),
    }


def _node_from_json(data: Dict) -> BubbleNode:
    att = data.get("attachment")
    cond = data.get("condition")
    condition = None
    if cond is not None:
        exps = {k: (np.inf if v is None else v) for k, v in cond.get("exponents", {}).items()}
        condition = ConditionReport(cond["classification"], cond.get("beta"), exps,
                                    cond.get("extension_eligible", False))
    return BubbleNode(
        tag=data["tag"],
        map=None if data.get("map") is None else HoloMap.from_json(data["map"]["coeffs"]),
        energy=int(data["energy"]),
        degree=int(data.get("degree", data["energy"])),
        attachment=None if att is None else point_from_json(att),
        children=[_node_from_json(c) for c in data.get("children", [])],
        regime=data.get("regime"),
        beta=data.get("beta"),
        lam=data.get("lambda"),
        mass=data.get("mass"),
        tau=data.get("tau"),
        t_of_s=list(data.get("t_of_s", [])),
        condition=condition,
        error=data.get("error"),
    )


def tree_from_json(data: Dict) -> BubbleTree:
    root = _node_from_json(data["root"])
    r = data.get("r")
    if r is None:
        r = sum(n.energy for _, n in root.walk())
    return BubbleTree(root, int(r))


def tree_to_dot(tree: BubbleTree) -> str:
    lines = ["digraph bubble_tree {", "  node [shape=box];"]
    for path, node in tree.nodes():
        name = path.replace("/", "_")
        label = f"{node.tag}\\nE={node.energy}"
        if node.beta is not None:
            label += f"\\nβ={node.beta:.4f}"
        if node.regime is not None:
            label += f"\\n{node.regime}"
        lines.append(f'  {name} [label="{label}"];')
        for i, child in enumerate(node.children):
            att = point_to_json(child.attachment) if child.attachment is not None else ""
            lines.append(f'  {name} -> {name}_{i} [label="{att}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
