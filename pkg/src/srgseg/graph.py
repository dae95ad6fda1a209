"""Statistical-relational graphs: attribute extraction, model fitting, text I/O.

A graph holds one vertex per structure with three attributes (centroid in
mm, mean intensity, volume in mm^3) and a fully connected set of ordered
edges with three relational attributes (centroid vector, volume ratio,
intensity contrast).  Edge attributes of a graph built from a volume are
derived from its vertices on demand; model graphs store them explicitly
because averaged edge attributes are not functions of averaged vertices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import (
    CorruptHeader,
    InconsistentLabelMaps,
    IoFailure,
    MissingLabel,
    UnsupportedFormat,
)
from .volume import LabelVolume, ScalarVolume, check_same_geometry

__all__ = [
    "VertexAttributes",
    "EdgeAttributes",
    "Srg",
    "ModelStatistics",
    "RegionStats",
    "STD_FLOOR",
    "build_srg",
    "fit_model",
    "model_graph",
    "save_graph",
    "load_graph",
    "format_graph",
    "parse_graph",
]

STD_FLOOR = 1e-6


class VertexAttributes(NamedTuple):
    centroid: np.ndarray
    mean_intensity: float
    volume: float


class EdgeAttributes(NamedTuple):
    centroid_vector: np.ndarray
    volume_ratio: float
    contrast: float


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Srg:
    """Graph ``(V, E, A_V, A_E)`` over ``n`` structures.

    Parameters
    ----------
    labels : sequence of int
        Structure id of each vertex.
    centroids : array (n, 3)
    intensities : array (n,)
    volumes : array (n,)
    edges : tuple of (dvec (n, n, 3), vratio (n, n), contrast (n, n)), optional
        Explicit edge attributes.  Derived from the vertices when omitted.
    empty : array of bool (n,), optional
        Marks vertices that received no voxels (observation graphs only).
    """

    labels: tuple
    centroids: np.ndarray
    intensities: np.ndarray
    volumes: np.ndarray
    edges: Optional[tuple] = None
    empty: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        n = len(self.labels)
        c = _ro(self.centroids).reshape(n, 3)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "intensities", _ro(self.intensities).reshape(n))
        object.__setattr__(self, "volumes", _ro(self.volumes).reshape(n))
        empty = np.zeros(n, bool) if self.empty is None else np.array(self.empty, bool)
        empty.setflags(write=False)
        object.__setattr__(self, "empty", empty)
        if self.edges is not None:
            dvec, vratio, contrast = self.edges
            object.__setattr__(
                self,
                "edges",
                (_ro(dvec).reshape(n, n, 3), _ro(vratio).reshape(n, n), _ro(contrast).reshape(n, n)),
            )

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return self.n * (self.n - 1)

    def index_of(self, label: int) -> int:
        return self.labels.index(int(label))

    # edge attribute arrays, indexed [source, target]; diagonal is neutral
    @property
    def centroid_vectors(self) -> np.ndarray:
        if self.edges is not None:
            return self.edges[0]
        c = self.centroids
        return c[None, :, :] - c[:, None, :]

    @property
    def volume_ratios(self) -> np.ndarray:
        if self.edges is not None:
            return self.edges[1]
        v = self.volumes
        with np.errstate(divide="ignore", invalid="ignore"):
            return v[None, :] / v[:, None]

    @property
    def contrasts(self) -> np.ndarray:
        if self.edges is not None:
            return self.edges[2]
        m = self.intensities
        return m[None, :] - m[:, None]

    def vertex(self, k: int) -> Optional[VertexAttributes]:
        """Attributes of vertex ``k`` (0-based), or None when it is EMPTY."""
        if self.empty[k]:
            return None
        return VertexAttributes(self.centroids[k].copy(), float(self.intensities[k]), float(self.volumes[k]))

    def edge(self, i: int, j: int) -> Optional[EdgeAttributes]:
        if i == j:
            raise ValueError("graphs have no self-edges")
        if self.empty[i] or self.empty[j]:
            return None
        return EdgeAttributes(
            np.array(self.centroid_vectors[i, j]),
            float(self.volume_ratios[i, j]),
            float(self.contrasts[i, j]),
        )

    def with_explicit_edges(self) -> "Srg":
        return Srg(
            self.labels,
            self.centroids,
            self.intensities,
            self.volumes,
            (self.centroid_vectors, self.volume_ratios, self.contrasts),
            self.empty,
        )

    def allclose(self, other: "Srg", rtol: float = 1e-12, atol: float = 0.0) -> bool:
        if self.labels != other.labels or not np.array_equal(self.empty, other.empty):
            return False
        keep = ~self.empty
        pairs = np.outer(keep, keep) & ~np.eye(self.n, dtype=bool)
        close = lambda a, b: np.allclose(a, b, rtol=rtol, atol=atol)  # noqa: E731
        return (
            close(self.centroids[keep], other.centroids[keep])
            and close(self.intensities[keep], other.intensities[keep])
            and close(self.volumes[keep], other.volumes[keep])
            and close(self.centroid_vectors[pairs], other.centroid_vectors[pairs])
            and close(self.volume_ratios[pairs], other.volume_ratios[pairs])
            and close(self.contrasts[pairs], other.contrasts[pairs])
        )


# ---------------------------------------------------------------- extraction


@dataclass(frozen=True, eq=False)
class RegionStats:
    """Sufficient statistics (voxel count, position sum, intensity sum) per label.

    Row ``k`` describes label ``k``; row 0 is background.
    """

    counts: np.ndarray
    position_sums: np.ndarray
    intensity_sums: np.ndarray
    voxel_volume: float

    @classmethod
    def from_volumes(cls, scalar: ScalarVolume, labels: LabelVolume, size: int | None = None) -> "RegionStats":
        check_same_geometry(scalar, labels)
        lab = labels.data.ravel(order="F")
        size = int(lab.max()) + 1 if size is None else max(size, int(lab.max()) + 1)
        nx, ny, nz = labels.dims
        sx, sy, sz = labels.spacing
        # voxel-centre convention: voxel x spans [x*sx, (x+1)*sx]
        gx, gy, gz = np.meshgrid(
            (np.arange(nx) + 0.5) * sx,
            (np.arange(ny) + 0.5) * sy,
            (np.arange(nz) + 0.5) * sz,
            indexing="ij",
        )
        pos = np.stack([g.ravel(order="F") for g in (gx, gy, gz)], axis=1)
        counts = np.bincount(lab, minlength=size).astype(np.float64)
        psum = np.stack([np.bincount(lab, weights=pos[:, a], minlength=size) for a in range(3)], axis=1)
        isum = np.bincount(lab, weights=scalar.data.ravel(order="F"), minlength=size)
        return cls(counts, psum, isum, labels.voxel_volume)

    def graph(self, label_map: Sequence[int]) -> Srg:
        """Graph over the given labels; labels without voxels become EMPTY."""
        idx = np.asarray(label_map, dtype=np.int64)
        inside = idx < len(self.counts)
        cnt = np.zeros(len(idx))
        cnt[inside] = self.counts[idx[inside]]
        empty = cnt == 0
        safe = np.where(empty, 1.0, cnt)
        psum = np.zeros((len(idx), 3))
        isum = np.zeros(len(idx))
        psum[inside] = self.position_sums[idx[inside]]
        isum[inside] = self.intensity_sums[idx[inside]]
        centroids = np.where(empty[:, None], np.nan, psum / safe[:, None])
        intensities = np.where(empty, np.nan, isum / safe)
        volumes = np.where(empty, np.nan, cnt * self.voxel_volume)
        return Srg(tuple(label_map), centroids, intensities, volumes, empty=empty)


def build_srg(scalar: ScalarVolume, labels: LabelVolume, label_map: Sequence[int] | None = None) -> Srg:
    """One vertex per label in ``label_map`` (default: the nonzero labels).

    Centroids are means of voxel-centre positions in mm, volumes are voxel
    counts times the voxel volume.  Raises ``MissingLabel`` when an id in
    ``label_map`` has no voxels.
    """
    check_same_geometry(scalar, labels)
    if label_map is None:
        label_map = labels.unique_labels()
    label_map = [int(v) for v in label_map]
    if len(set(label_map)) != len(label_map):
        raise ValueError("label_map contains duplicates")
    stats = RegionStats.from_volumes(scalar, labels)
    g = stats.graph(label_map)
    if g.empty.any():
        missing = [lab for lab, e in zip(label_map, g.empty) if e]
        raise MissingLabel(f"labels {missing} do not occur in the label volume")
    return g


# ------------------------------------------------------------------ learning


@dataclass(frozen=True, eq=False)
class ModelStatistics:
    """Per-attribute Gaussian parameters fitted over ``k`` training graphs.

    Covariances are diagonal.  The volume ratio is modelled on a log scale,
    so ``mean.volume_ratios`` is a geometric mean and ``log_vratio_std`` is
    a standard deviation of ``log(ratio)``.
    """

    mean: Srg
    centroid_std: np.ndarray
    intensity_std: np.ndarray
    volume_std: np.ndarray
    dvec_std: np.ndarray
    log_vratio_std: np.ndarray
    contrast_std: np.ndarray
    k: int

    @property
    def labels(self) -> tuple:
        return self.mean.labels

    @property
    def n(self) -> int:
        return self.mean.n


def _std(samples: np.ndarray, floor: float) -> np.ndarray:
    if samples.shape[0] < 2:
        return np.full(samples.shape[1:], floor)
    return np.maximum(samples.std(axis=0, ddof=1), floor)


def _mean(samples: np.ndarray) -> np.ndarray:
    # keep exact values where all samples agree
    m = samples.mean(axis=0)
    same = np.all(samples == samples[:1], axis=0)
    return np.where(same, samples[0], m)


def fit_model(srgs: Sequence[Srg], floor: float = STD_FLOOR) -> ModelStatistics:
    """Fit independent Gaussians to every vertex and edge attribute component."""
    srgs = list(srgs)
    if not srgs:
        raise ValueError("fit_model needs at least one graph")
    labels = srgs[0].labels
    for g in srgs[1:]:
        if g.labels != labels:
            raise InconsistentLabelMaps(f"label maps differ: {labels} vs {g.labels}")
    if any(g.empty.any() for g in srgs):
        raise MissingLabel("training graphs must not contain EMPTY vertices")

    n = len(labels)
    off = ~np.eye(n, dtype=bool)
    cen = np.stack([g.centroids for g in srgs])
    inten = np.stack([g.intensities for g in srgs])
    vol = np.stack([g.volumes for g in srgs])
    dvec = np.stack([g.centroid_vectors for g in srgs])
    ratio = np.stack([g.volume_ratios for g in srgs])
    contrast = np.stack([g.contrasts for g in srgs])
    log_ratio = np.log(np.where(off, ratio, 1.0))

    mean_ratio = np.where(np.all(ratio == ratio[:1], axis=0), ratio[0], np.exp(log_ratio.mean(axis=0)))
    mean_ratio = np.where(off, mean_ratio, 1.0)
    mean = Srg(
        labels,
        _mean(cen),
        _mean(inten),
        _mean(vol),
        edges=(_mean(dvec), mean_ratio, _mean(contrast)),
    )
    return ModelStatistics(
        mean=mean,
        centroid_std=_std(cen, floor),
        intensity_std=_std(inten, floor),
        volume_std=_std(vol, floor),
        dvec_std=_std(dvec, floor),
        log_vratio_std=_std(log_ratio, floor),
        contrast_std=_std(contrast, floor),
        k=len(srgs),
    )


def model_graph(stats: ModelStatistics) -> Srg:
    """The model graph: every attribute set to its fitted mean."""
    return stats.mean


# ---------------------------------------------------------------- text format


def _g(x: float) -> str:
    return format(float(x), ".17g")


def _vec(v) -> str:
    return ",".join(_g(x) for x in v)


def format_graph(graph: Srg | ModelStatistics) -> str:
    """Serialize a graph, or a model with its stddev lines, to text."""
    stats = graph if isinstance(graph, ModelStatistics) else None
    g = stats.mean if stats is not None else graph
    head = f"srg v1 n={g.n}"
    if stats is not None:
        head += f" k={stats.k}"
    lines = [head]
    for k, lab in enumerate(g.labels):
        if g.empty[k]:
            lines.append(f"vertex {lab} EMPTY")
        else:
            lines.append(
                f"vertex {lab} centroid={_vec(g.centroids[k])} "
                f"intensity={_g(g.intensities[k])} volume={_g(g.volumes[k])}"
            )
    dv, vr, ct = g.centroid_vectors, g.volume_ratios, g.contrasts
    for i, a in enumerate(g.labels):
        for j, b in enumerate(g.labels):
            if i == j or g.empty[i] or g.empty[j]:
                continue
            lines.append(f"edge {a} {b} dvec={_vec(dv[i, j])} vratio={_g(vr[i, j])} contrast={_g(ct[i, j])}")
    if stats is not None:
        for k, lab in enumerate(g.labels):
            lines.append(
                f"stddev vertex {lab} centroid={_vec(stats.centroid_std[k])} "
                f"intensity={_g(stats.intensity_std[k])} volume={_g(stats.volume_std[k])}"
            )
        for i, a in enumerate(g.labels):
            for j, b in enumerate(g.labels):
                if i != j:
                    lines.append(
                        f"stddev edge {a} {b} dvec={_vec(stats.dvec_std[i, j])} "
                        f"vratio={_g(stats.log_vratio_std[i, j])} contrast={_g(stats.contrast_std[i, j])}"
                    )
    return "\n".join(lines) + "\n"


def _fields(tokens: List[str]) -> dict:
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep:
            raise CorruptHeader(f"malformed field {tok!r}")
        out[key] = [float(x) for x in val.split(",")]
    return out


def parse_graph(text: str) -> Srg | ModelStatistics:
    """Inverse of :func:`format_graph`."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0][:2] != ["srg", "v1"]:
        raise UnsupportedFormat("not an srg v1 graph file")
    head = dict(tok.split("=", 1) for tok in lines[0][2:])
    try:
        n = int(head["n"])
        k = int(head["k"]) if "k" in head else None
        verts, edges, sv, se = {}, {}, {}, {}
        for tok in lines[1:]:
            if tok[0] == "vertex":
                verts[int(tok[1])] = None if tok[2:] == ["EMPTY"] else _fields(tok[2:])
            elif tok[0] == "edge":
                edges[int(tok[1]), int(tok[2])] = _fields(tok[3:])
            elif tok[:2] == ["stddev", "vertex"]:
                sv[int(tok[2])] = _fields(tok[3:])
            elif tok[:2] == ["stddev", "edge"]:
                se[int(tok[2]), int(tok[3])] = _fields(tok[4:])
            else:
                raise CorruptHeader(f"unknown record {tok[0]!r}")
    except (KeyError, ValueError, IndexError) as exc:
        raise CorruptHeader(f"malformed graph file: {exc}") from exc
    if len(verts) != n:
        raise CorruptHeader(f"header declares {n} vertices, found {len(verts)}")

    labels = list(verts)
    empty = np.array([verts[lab] is None for lab in labels])
    cen = np.full((n, 3), np.nan)
    inten = np.full(n, np.nan)
    vol = np.full(n, np.nan)
    for i, lab in enumerate(labels):
        if verts[lab] is not None:
            cen[i] = verts[lab]["centroid"]
            inten[i] = verts[lab]["intensity"][0]
            vol[i] = verts[lab]["volume"][0]
    dvec = np.zeros((n, n, 3))
    vratio = np.ones((n, n))
    contrast = np.zeros((n, n))
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            if i == j:
                continue
            if (a, b) in edges:
                e = edges[a, b]
                dvec[i, j] = e["dvec"]
                vratio[i, j] = e["vratio"][0]
                contrast[i, j] = e["contrast"][0]
            elif not (empty[i] or empty[j]):
                raise CorruptHeader(f"missing edge {a} {b}")
            else:
                dvec[i, j], vratio[i, j], contrast[i, j] = np.nan, np.nan, np.nan
    g = Srg(tuple(labels), cen, inten, vol, (dvec, vratio, contrast), empty)
    if k is None:
        return g

    cs, is_, vs = np.zeros((n, 3)), np.zeros(n), np.zeros(n)
    # self-edges carry no stddev records; they hold the floor after fitting
    ds, rs, ks = np.full((n, n, 3), STD_FLOOR), np.full((n, n), STD_FLOOR), np.full((n, n), STD_FLOOR)
    try:
        for i, lab in enumerate(labels):
            cs[i] = sv[lab]["centroid"]
            is_[i] = sv[lab]["intensity"][0]
            vs[i] = sv[lab]["volume"][0]
        for i, a in enumerate(labels):
            for j, b in enumerate(labels):
                if i != j:
                    ds[i, j] = se[a, b]["dvec"]
                    rs[i, j] = se[a, b]["vratio"][0]
                    ks[i, j] = se[a, b]["contrast"][0]
    except KeyError as exc:
        raise CorruptHeader(f"model file lacks stddev record {exc}") from exc
    return ModelStatistics(g, cs, is_, vs, ds, rs, ks, k)


def save_graph(graph: Srg | ModelStatistics, path) -> None:
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(format_graph(graph))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_graph(path) -> Srg | ModelStatistics:
    try:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_graph(text)
