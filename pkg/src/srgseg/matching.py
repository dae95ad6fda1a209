"""Solution cost, greedy initial assignment, exhaustive oracle, weight sweeps.

An assignment maps each super-region to a model vertex.  Internally it is a
0-based integer array whose entry ``r`` holds the model vertex index of
region ``r + 1``; files and reports use 1-based model indices.

Cost of an assignment ``s`` against a model with ``n`` vertices::

    C(s) = alpha * (1/n) * sum_j cV(j) + (1 - alpha) * (1/n^2) * sum_{j != k} cE(j, k)

where ``j`` runs over the vertices of the observation graph (all regions
sharing a prediction pooled together) and each cost is a weighted sum of
normalized per-attribute distances to the matching model vertex or edge.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import AssignmentLengthMismatch, EmptyVertex, InstanceTooLarge
from .graph import EdgeAttributes, ModelStatistics, RegionStats, Srg, VertexAttributes
from .volume import LabelVolume, ScalarVolume, check_same_geometry

__all__ = [
    "VERTEX_ATTRS",
    "EDGE_ATTRS",
    "CostWeights",
    "DistanceSpec",
    "Solution",
    "SweepRow",
    "SweepResult",
    "DEFAULT_SWEEP_PROFILES",
    "join_regions",
    "vertex_cost",
    "edge_cost",
    "vertex_cost_matrix",
    "evaluate",
    "greedy_initial",
    "exhaustive_best",
    "sweep_weights",
    "detect_plateau",
    "n_regions",
]

VERTEX_ATTRS = ("centroid", "intensity", "volume")
EDGE_ATTRS = ("centroid_vector", "volume_ratio", "contrast")
WEIGHT_TOL = 1e-12
DEFAULT_CAP = 250_000

# (centroid weight, intensity weight) pairs of the exploratory sweep
DEFAULT_SWEEP_PROFILES = (
    (0.0, 1.0),
    (0.001, 0.999),
    (0.005, 0.995),
    (0.01, 0.99),
    (0.02, 0.98),
    (0.1, 0.9),
    (0.2, 0.8),
    (0.5, 0.5),
    (1.0, 0.0),
)


def _group(values, names, what) -> Tuple[float, float, float]:
    vals = tuple(float(v) for v in values)
    if len(vals) != len(names):
        raise ValueError(f"{what} weights need {len(names)} values {names}, got {len(vals)}")
    if any(not np.isfinite(v) or v < 0 for v in vals):
        raise ValueError(f"{what} weights must be finite and >= 0, got {vals}")
    if abs(sum(vals) - 1.0) > WEIGHT_TOL:
        raise ValueError(f"{what} weights must sum to 1, got {sum(vals)!r}")
    return vals


@dataclass(frozen=True)
class CostWeights:
    """Balance ``alpha`` between the vertex and edge terms plus per-attribute weights.

    ``vertex`` is ordered (centroid, intensity, volume) and ``edge``
    (centroid_vector, volume_ratio, contrast); each group sums to 1.
    """

    alpha: float = 0.5
    vertex: Tuple[float, float, float] = (0.5, 0.5, 0.0)
    edge: Tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        a = float(self.alpha)
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {a}")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "vertex", _group(self.vertex, VERTEX_ATTRS, "vertex"))
        object.__setattr__(self, "edge", _group(self.edge, EDGE_ATTRS, "edge"))

    @classmethod
    def normalized(cls, alpha=0.5, vertex=(0.5, 0.5, 0.0), edge=(1, 1, 1)) -> "CostWeights":
        """Build from unnormalized non-negative weights (e.g. 0.34,0.33,0.33)."""
        v = np.asarray(vertex, float)
        e = np.asarray(edge, float)
        return cls(alpha, tuple(v / v.sum()), tuple(e / e.sum()))

    def greedy_profile(self, ignore_volume: bool = True) -> Tuple[float, float, float]:
        """Vertex weights used while building the greedy solution.

        Super-regions are far smaller than whole structures, so by default
        the volume weight is dropped and the rest renormalized.
        """
        c, i, v = self.vertex
        if not ignore_volume or v == 0.0 or c + i == 0.0:
            return self.vertex
        return (c / (c + i), i / (c + i), 0.0)


@dataclass(frozen=True)
class DistanceSpec:
    """Normalization scales dividing each attribute distance.

    Vector attributes use the Euclidean norm of the difference, scalars the
    absolute difference, and the volume ratio the absolute log difference.
    """

    centroid: float = 1.0
    intensity: float = 1.0
    volume: float = 1.0
    centroid_vector: float = 1.0
    volume_ratio: float = 1.0
    contrast: float = 1.0

    def __post_init__(self):
        for name in VERTEX_ATTRS + EDGE_ATTRS:
            val = float(getattr(self, name))
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"scale for {name} must be finite and > 0, got {val}")
            object.__setattr__(self, name, val)

    @classmethod
    def from_stats(cls, stats: ModelStatistics) -> "DistanceSpec":
        """Pool each attribute's fitted stddevs into one scale (root mean square)."""
        n = stats.n
        off = ~np.eye(n, dtype=bool)
        rms = lambda a: float(np.sqrt(np.mean(np.square(a)))) if np.size(a) else 1.0  # noqa: E731
        return cls(
            centroid=rms(stats.centroid_std),
            intensity=rms(stats.intensity_std),
            volume=rms(stats.volume_std),
            centroid_vector=rms(stats.dvec_std[off]),
            volume_ratio=rms(stats.log_vratio_std[off]),
            contrast=rms(stats.contrast_std[off]),
        )

    def scaled(self, factor: float) -> "DistanceSpec":
        return DistanceSpec(*(getattr(self, a) * factor for a in VERTEX_ATTRS + EDGE_ATTRS))

    def vertex_scales(self) -> Tuple[float, float, float]:
        return (self.centroid, self.intensity, self.volume)

    def edge_scales(self) -> Tuple[float, float, float]:
        return (self.centroid_vector, self.volume_ratio, self.contrast)


# --------------------------------------------------------------- primitives


def vertex_cost(obs: VertexAttributes, model: VertexAttributes, weights, dist: DistanceSpec) -> float:
    """Weighted sum of normalized vertex attribute distances.

    ``weights`` is a :class:`CostWeights` or a (centroid, intensity, volume)
    triple.
    """
    if obs is None or model is None:
        raise EmptyVertex("vertex cost is undefined for an EMPTY vertex")
    wc, wi, wv = weights.vertex if isinstance(weights, CostWeights) else weights
    d_c = float(np.linalg.norm(np.asarray(obs.centroid) - np.asarray(model.centroid))) / dist.centroid
    d_i = abs(obs.mean_intensity - model.mean_intensity) / dist.intensity
    d_v = abs(obs.volume - model.volume) / dist.volume
    return wc * d_c + wi * d_i + wv * d_v


def edge_cost(obs: EdgeAttributes, model: EdgeAttributes, weights, dist: DistanceSpec) -> float:
    """Weighted sum of normalized edge attribute distances."""
    if obs is None or model is None:
        raise EmptyVertex("edge cost is undefined when an endpoint is EMPTY")
    wd, wr, wc = weights.edge if isinstance(weights, CostWeights) else weights
    d_d = float(np.linalg.norm(np.asarray(obs.centroid_vector) - np.asarray(model.centroid_vector)))
    d_r = abs(np.log(obs.volume_ratio) - np.log(model.volume_ratio))
    d_c = abs(obs.contrast - model.contrast)
    return wd * d_d / dist.centroid_vector + wr * d_r / dist.volume_ratio + wc * d_c / dist.contrast


def _vertex_distances(obs: Srg, model: Srg, dist: DistanceSpec) -> np.ndarray:
    """Array (3, n_obs, n_model) of normalized per-attribute vertex distances."""
    dc = np.linalg.norm(obs.centroids[:, None, :] - model.centroids[None, :, :], axis=2)
    di = np.abs(obs.intensities[:, None] - model.intensities[None, :])
    dv = np.abs(obs.volumes[:, None] - model.volumes[None, :])
    return np.stack([dc / dist.centroid, di / dist.intensity, dv / dist.volume])


def vertex_cost_matrix(obs: Srg, model: Srg, vertex_weights, dist: DistanceSpec) -> np.ndarray:
    """``M[j, i]`` = vertex cost of observation vertex ``j`` against model vertex ``i``."""
    w = np.asarray(vertex_weights, float)
    return np.tensordot(w, _vertex_distances(obs, model, dist), axes=1)


# ------------------------------------------------------------- observation


def n_regions(super_labels: LabelVolume) -> int:
    return int(super_labels.data.max())


def _check_assignment(assignment, n_super: int, n_model: int) -> np.ndarray:
    s = np.asarray(assignment)
    if s.ndim != 1 or len(s) != n_super:
        raise AssignmentLengthMismatch(f"assignment has length {len(s)}, expected {n_super}")
    if s.size and (s.dtype.kind not in "iu" or s.min() < 0 or s.max() >= n_model):
        raise ValueError(f"assignment entries must be model indices in [0, {n_model})")
    return s.astype(np.int64)


def join_regions(
    super_labels: LabelVolume,
    scalar: ScalarVolume,
    assignment,
    model_labels: Sequence[int],
) -> Srg:
    """Observation graph: pool every region predicted as the same model vertex.

    Attributes are recomputed from the voxels of each union.  Model vertices
    that receive no voxels come back flagged EMPTY (attributes NaN).
    """
    check_same_geometry(scalar, super_labels)
    n = len(model_labels)
    s = _check_assignment(assignment, n_regions(super_labels), n)
    lut = np.concatenate([[n], s])  # label 0 (unassigned) -> sentinel n
    pooled = LabelVolume(lut[super_labels.data], super_labels.spacing)
    g = RegionStats.from_volumes(scalar, pooled, size=n + 1).graph(range(n))
    return replace(g, labels=tuple(model_labels))


@dataclass(frozen=True, eq=False)
class Solution:
    """An evaluated assignment.

    ``vertex_mean`` is ``(1/n) sum_j cV`` and ``edge_mean`` is
    ``(1/n^2) sum_{j,k} cE``; ``cost = alpha * vertex_mean + (1 - alpha) * edge_mean``.
    ``contributions`` splits the total into per-attribute parts plus the
    EMPTY penalty; they sum to ``cost``.
    """

    assignment: np.ndarray
    observation: Srg
    cost: float
    vertex_mean: float
    edge_mean: float
    alpha: float
    contributions: Dict[str, float] = field(default_factory=dict)
    empty_labels: Tuple[int, ...] = ()

    @property
    def vertex_term(self) -> float:
        return self.alpha * self.vertex_mean

    @property
    def edge_term(self) -> float:
        return (1.0 - self.alpha) * self.edge_mean

    def assignment_1based(self) -> np.ndarray:
        return self.assignment + 1

    def report(self) -> str:
        """Plain-text report: costs, per-attribute contributions, assignments."""
        obs = self.observation
        lines = [
            f"cost\t{self.cost:.17g}",
            f"alpha\t{self.alpha:.17g}",
            f"vertex_mean\t{self.vertex_mean:.17g}",
            f"edge_mean\t{self.edge_mean:.17g}",
            f"vertex_term\t{self.vertex_term:.17g}",
            f"edge_term\t{self.edge_term:.17g}",
        ]
        for key, val in self.contributions.items():
            lines.append(f"contribution\t{key}\t{val:.17g}")
        lines.append("empty\t" + (",".join(str(x) for x in self.empty_labels) or "none"))
        for k, lab in enumerate(obs.labels):
            regions = np.flatnonzero(self.assignment == k) + 1
            lines.append(
                f"vertex\t{k + 1}\tlabel={lab}\tregions={len(regions)}\t"
                + ("EMPTY" if obs.empty[k] else "ok")
            )
        lines.append("assignment\t" + ",".join(str(int(v)) for v in self.assignment_1based()))
        return "\n".join(lines) + "\n"


def _score(obs: Srg, model: Srg, weights: CostWeights, dist: DistanceSpec, empty_penalty: float):
    """Vertex/edge means and per-attribute contributions of an observation graph."""
    n = model.n
    if obs.n != n:
        raise ValueError("observation and model graphs differ in size")
    empty = obs.empty
    keep = ~empty
    a = weights.alpha
    contrib: Dict[str, float] = {}

    # vertex term: observation vertex j against model vertex j
    vc = np.zeros(n)
    vw = np.asarray(weights.vertex)
    if keep.any():
        dc = np.linalg.norm(obs.centroids[keep] - model.centroids[keep], axis=1) / dist.centroid
        di = np.abs(obs.intensities[keep] - model.intensities[keep]) / dist.intensity
        dv = np.abs(obs.volumes[keep] - model.volumes[keep]) / dist.volume
        parts = vw[:, None] * np.stack([dc, di, dv])
        vc[keep] = parts.sum(axis=0)
        for name, p in zip(VERTEX_ATTRS, parts):
            contrib[f"vertex.{name}"] = a * p.sum() / n
    else:
        for name in VERTEX_ATTRS:
            contrib[f"vertex.{name}"] = 0.0
    v_pen = empty_penalty * vw.sum()
    vc[empty] = v_pen
    contrib["vertex.empty_penalty"] = a * v_pen * empty.sum() / n

    # edge term over ordered pairs j != k
    ew = np.asarray(weights.edge)
    pairs = np.outer(keep, keep)
    np.fill_diagonal(pairs, False)
    touched = ~np.outer(keep, keep)
    np.fill_diagonal(touched, False)
    ec = np.zeros((n, n))
    if pairs.any():
        dd = np.linalg.norm(obs.centroid_vectors[pairs] - model.centroid_vectors[pairs], axis=1)
        dr = np.abs(np.log(obs.volume_ratios[pairs]) - np.log(model.volume_ratios[pairs]))
        dk = np.abs(obs.contrasts[pairs] - model.contrasts[pairs])
        parts = ew[:, None] * np.stack(
            [dd / dist.centroid_vector, dr / dist.volume_ratio, dk / dist.contrast]
        )
        ec[pairs] = parts.sum(axis=0)
        for name, p in zip(EDGE_ATTRS, parts):
            contrib[f"edge.{name}"] = (1 - a) * p.sum() / n**2
    else:
        for name in EDGE_ATTRS:
            contrib[f"edge.{name}"] = 0.0
    e_pen = empty_penalty * ew.sum()
    ec[touched] = e_pen
    contrib["edge.empty_penalty"] = (1 - a) * e_pen * touched.sum() / n**2

    v_mean = vc.sum() / n
    e_mean = ec.sum() / n**2
    return v_mean, e_mean, contrib


def evaluate(
    assignment,
    super_labels: LabelVolume,
    scalar: ScalarVolume,
    model: Srg,
    weights: CostWeights,
    dist: DistanceSpec,
    empty_penalty: float = 10.0,
) -> Solution:
    """Join regions under ``assignment`` and compute the full solution cost.

    A model vertex that receives no region is EMPTY: its vertex cost and the
    cost of every edge touching it are replaced by ``empty_penalty`` times
    the sum of the corresponding weights (i.e. ``empty_penalty`` unit
    distances).
    """
    obs = join_regions(super_labels, scalar, assignment, model.labels)
    v_mean, e_mean, contrib = _score(obs, model, weights, dist, empty_penalty)
    cost = weights.alpha * v_mean + (1.0 - weights.alpha) * e_mean
    return Solution(
        assignment=np.asarray(assignment, dtype=np.int64).copy(),
        observation=obs,
        cost=float(cost),
        vertex_mean=float(v_mean),
        edge_mean=float(e_mean),
        alpha=weights.alpha,
        contributions=contrib,
        empty_labels=tuple(lab for lab, e in zip(model.labels, obs.empty) if e),
    )


# ---------------------------------------------------------------- solvers


def greedy_initial(
    super_srg: Srg,
    model: Srg,
    weights: CostWeights,
    dist: DistanceSpec,
    ignore_volume: bool = True,
) -> np.ndarray:
    """Assign each super-vertex independently to its cheapest model vertex.

    Ties go to the lowest model index.  See :meth:`CostWeights.greedy_profile`
    for the vertex weights used.
    """
    if super_srg.n < 1:
        raise ValueError("super graph has no vertices")
    costs = vertex_cost_matrix(super_srg, model, weights.greedy_profile(ignore_volume), dist)
    return np.argmin(costs, axis=1).astype(np.int64)


def _batch_costs(
    assignments: np.ndarray,
    region: RegionStats,
    model: Srg,
    weights: CostWeights,
    dist: DistanceSpec,
    empty_penalty: float,
) -> np.ndarray:
    """Approximate costs for a batch of assignments from pooled region sums."""
    b, n_super = assignments.shape
    n = model.n
    onehot = (assignments[:, :, None] == np.arange(n)[None, None, :]).astype(np.float64)
    cnt = np.einsum("brn,r->bn", onehot, region.counts[1 : n_super + 1])
    psum = np.einsum("brn,ra->bna", onehot, region.position_sums[1 : n_super + 1])
    isum = np.einsum("brn,r->bn", onehot, region.intensity_sums[1 : n_super + 1])
    empty = cnt == 0
    safe = np.where(empty, 1.0, cnt)
    cen = psum / safe[:, :, None]
    inten = isum / safe
    vol = safe * region.voxel_volume

    vw, ew = np.asarray(weights.vertex), np.asarray(weights.edge)
    vc = (
        vw[0] * np.linalg.norm(cen - model.centroids[None], axis=2) / dist.centroid
        + vw[1] * np.abs(inten - model.intensities[None]) / dist.intensity
        + vw[2] * np.abs(vol - model.volumes[None]) / dist.volume
    )
    vc = np.where(empty, empty_penalty * vw.sum(), vc)

    dvec = cen[:, None, :, :] - cen[:, :, None, :]
    lratio = np.log(vol)[:, None, :] - np.log(vol)[:, :, None]
    contrast = inten[:, None, :] - inten[:, :, None]
    ec = (
        ew[0] * np.linalg.norm(dvec - model.centroid_vectors[None], axis=3) / dist.centroid_vector
        + ew[1] * np.abs(lratio - np.log(model.volume_ratios)[None]) / dist.volume_ratio
        + ew[2] * np.abs(contrast - model.contrasts[None]) / dist.contrast
    )
    touched = empty[:, :, None] | empty[:, None, :]
    ec = np.where(touched, empty_penalty * ew.sum(), ec)
    diag = np.eye(n, dtype=bool)[None]
    ec = np.where(diag, 0.0, ec)
    return weights.alpha * vc.sum(axis=1) / n + (1 - weights.alpha) * ec.sum(axis=(1, 2)) / n**2


def exhaustive_best(
    super_labels: LabelVolume,
    scalar: ScalarVolume,
    model: Srg,
    weights: CostWeights,
    dist: DistanceSpec,
    cap: int = DEFAULT_CAP,
    empty_penalty: float = 10.0,
    batch: int = 4096,
) -> Tuple[np.ndarray, float]:
    """Globally cheapest assignment by enumeration.

    Assignments are scanned in lexicographic order; candidates within a
    relative 1e-9 of the batch minimum are re-scored with :func:`evaluate`
    and the first one with the lowest exact cost wins.
    """
    n = model.n
    n_super = n_regions(super_labels)
    total = n**n_super
    if total > cap:
        raise InstanceTooLarge(f"{n}^{n_super} = {total} assignments exceed cap {cap}")
    region = RegionStats.from_volumes(scalar, super_labels, size=n_super + 1)

    costs = np.empty(total)
    it = itertools.product(range(n), repeat=n_super)
    for start in range(0, total, batch):
        stop = min(start + batch, total)
        block = np.fromiter(
            itertools.chain.from_iterable(itertools.islice(it, stop - start)),
            dtype=np.int64,
            count=(stop - start) * n_super,
        ).reshape(stop - start, n_super)
        costs[start:stop] = _batch_costs(block, region, model, weights, dist, empty_penalty)

    best = costs.min()
    near = np.flatnonzero(costs <= best + 1e-9 * max(abs(best), 1.0))
    best_s, best_c = None, np.inf
    for code in near:  # ascending code = lexicographic order
        s = np.array(np.unravel_index(code, (n,) * n_super), dtype=np.int64) if n_super else np.zeros(0, np.int64)
        c = evaluate(s, super_labels, scalar, model, weights, dist, empty_penalty).cost
        if c < best_c:
            best_s, best_c = s, c
    return best_s, float(best_c)


# ------------------------------------------------------------------ sweeps


@dataclass(frozen=True, eq=False)
class SweepRow:
    centroid_weight: float
    intensity_weight: float
    volume_weight: float
    assignment: np.ndarray
    cost: float
    vertex_mean: float
    edge_mean: float


@dataclass(frozen=True, eq=False)
class SweepResult:
    rows: List[SweepRow]
    plateau_start: Optional[float]
    plateau_rows: int

    def plateau_line(self) -> str:
        if self.plateau_start is None or self.plateau_rows < 2:
            return "plateau\tnone"
        return (
            f"plateau\tcentroid_weight>={self.plateau_start:g}\t"
            f"rows={self.plateau_rows}/{len(self.rows)}\tassignment constant"
        )

    def table(self) -> str:
        """Tab-separated table: centroid weight, intensity weight, cost, then extras."""
        out = ["centroid_alpha\tintensity_alpha\tcost\tvertex_mean\tedge_mean\tassignment"]
        for r in self.rows:
            out.append(
                f"{r.centroid_weight:g}\t{r.intensity_weight:g}\t{r.cost:.17g}\t"
                f"{r.vertex_mean:.17g}\t{r.edge_mean:.17g}\t"
                + ",".join(str(int(v) + 1) for v in r.assignment)
            )
        out.append(self.plateau_line())
        return "\n".join(out) + "\n"

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "centroid_alpha": r.centroid_weight,
                    "intensity_alpha": r.intensity_weight,
                    "volume_alpha": r.volume_weight,
                    "cost": r.cost,
                    "vertex_mean": r.vertex_mean,
                    "edge_mean": r.edge_mean,
                    "assignment": [int(v) + 1 for v in r.assignment],
                }
                for r in self.rows
            ],
            "plateau": {"centroid_alpha": self.plateau_start, "rows": self.plateau_rows},
        }


def detect_plateau(rows: Sequence[SweepRow]) -> Tuple[Optional[float], int]:
    """Smallest centroid weight from which the greedy assignment no longer changes.

    Rows are ordered by centroid weight; the plateau is the maximal run of
    rows at the top end whose assignments equal the last row's.
    """
    if not rows:
        return None, 0
    ordered = sorted(rows, key=lambda r: r.centroid_weight)
    last = ordered[-1].assignment
    k = len(ordered) - 1
    while k > 0 and np.array_equal(ordered[k - 1].assignment, last):
        k -= 1
    return ordered[k].centroid_weight, len(ordered) - k


def sweep_weights(
    profiles: Sequence,
    super_srg: Srg,
    super_labels: LabelVolume,
    scalar: ScalarVolume,
    model: Srg,
    dist: DistanceSpec,
    alpha: float = 0.5,
    edge_weights=(1 / 3, 1 / 3, 1 / 3),
    ignore_volume: bool = True,
    empty_penalty: float = 10.0,
) -> SweepResult:
    """Greedy solution and full cost for each vertex weight profile.

    Each profile is ``(centroid, intensity)`` or ``(centroid, intensity, volume)``.
    """
    if not profiles:
        raise ValueError("at least one weight profile is required")
    rows = []
    for prof in profiles:
        prof = tuple(float(p) for p in prof)
        vertex = prof + (0.0,) * (3 - len(prof))
        w = CostWeights(alpha, vertex, tuple(edge_weights))
        s = greedy_initial(super_srg, model, w, dist, ignore_volume)
        sol = evaluate(s, super_labels, scalar, model, w, dist, empty_penalty)
        rows.append(SweepRow(vertex[0], vertex[1], vertex[2], s, sol.cost, sol.vertex_mean, sol.edge_mean))
    start, count = detect_plateau(rows)
    return SweepResult(rows, start, count)
