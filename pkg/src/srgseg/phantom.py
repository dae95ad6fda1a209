"""Synthetic annotated volumes (balls and boxes on a background).

Randomness comes from numpy's ``PCG64`` bit generator, which is specified
and portable, so a seed reproduces the same volume on every platform.
Noise is drawn as one standard-normal vector in x-fastest voxel order.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import InvalidSpec
from .volume import LabelVolume, ScalarVolume

__all__ = [
    "Structure",
    "PhantomSpec",
    "generate_phantom",
    "perturb_phantom",
    "read_phantom_spec",
    "write_phantom_spec",
    "format_phantom_spec",
    "parse_phantom_spec",
]

SHAPES = ("ball", "box")


@dataclass(frozen=True)
class Structure:
    """One labelled object.

    ``size`` is the radius for a ball, and the full edge lengths (x, y, z)
    for a box; all lengths in millimetres.
    """

    label: int
    shape: str
    center: Tuple[float, float, float]
    size: Tuple[float, ...]
    mean: float
    stddev: float = 0.0

    def extent(self) -> np.ndarray:
        """Half-width of the bounding box along each axis."""
        if self.shape == "ball":
            return np.full(3, float(self.size[0]))
        return np.asarray(self.size, dtype=float) / 2.0

    def contains(self, px, py, pz) -> np.ndarray:
        cx, cy, cz = self.center
        if self.shape == "ball":
            r = float(self.size[0])
            return (px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2 <= r * r
        hx, hy, hz = self.extent()
        return (np.abs(px - cx) <= hx) & (np.abs(py - cy) <= hy) & (np.abs(pz - cz) <= hz)


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    structures: Tuple[Structure, ...] = field(default_factory=tuple)
    background: float = 0.0
    background_stddev: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise InvalidSpec(f"dims must be 3 positive integers, got {self.dims}")
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise InvalidSpec(f"spacing must be 3 positive reals, got {self.spacing}")
        if self.background_stddev < 0:
            raise InvalidSpec("background_stddev must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidSpec("seed must fit in an unsigned 64-bit integer")
        labels = [s.label for s in self.structures]
        if sorted(labels) != list(range(1, len(labels) + 1)):
            raise InvalidSpec(f"labels must be unique and contiguous from 1, got {labels}")
        bounds = np.asarray(self.dims, float) * np.asarray(self.spacing, float)
        for s in self.structures:
            if s.shape not in SHAPES:
                raise InvalidSpec(f"structure {s.label}: unknown shape {s.shape!r}")
            want = 1 if s.shape == "ball" else 3
            if len(s.size) != want or any(not v > 0 for v in s.size):
                raise InvalidSpec(f"structure {s.label}: {s.shape} needs {want} positive size value(s)")
            if s.stddev < 0:
                raise InvalidSpec(f"structure {s.label}: stddev must be >= 0")
            c = np.asarray(s.center, float)
            ext = s.extent()
            if np.any(c - ext < 0) or np.any(c + ext > bounds):
                raise InvalidSpec(f"structure {s.label} extends outside the volume")


def _voxel_centres(dims, spacing):
    axes = [(np.arange(n) + 0.5) * sp for n, sp in zip(dims, spacing)]
    return np.meshgrid(*axes, indexing="ij")


def generate_phantom(spec: PhantomSpec) -> Tuple[ScalarVolume, LabelVolume]:
    """Rasterize ``spec`` into a (scalar, label) pair.

    A voxel belongs to a structure when its centre lies inside it; later
    structures overwrite earlier ones.  Intensities are
    ``mean + stddev * N(0, 1)`` per voxel.
    """
    spec.validate()
    dims = tuple(int(d) for d in spec.dims)
    px, py, pz = _voxel_centres(dims, spec.spacing)
    labels = np.zeros(dims, dtype=np.int64)
    for s in spec.structures:
        labels[s.contains(px, py, pz)] = s.label

    means = np.array([spec.background] + [0.0] * len(spec.structures))
    stds = np.array([spec.background_stddev] + [0.0] * len(spec.structures))
    for s in spec.structures:
        means[s.label] = s.mean
        stds[s.label] = s.stddev

    rng = np.random.Generator(np.random.PCG64(int(spec.seed)))
    noise = rng.standard_normal(labels.size).reshape(dims, order="F")
    intensity = means[labels] + stds[labels] * noise
    return ScalarVolume(intensity, spec.spacing), LabelVolume(labels, spec.spacing)


def perturb_phantom(
    spec: PhantomSpec, shifts, seed: int | None = None
) -> Tuple[ScalarVolume, LabelVolume]:
    """Generate a variant of ``spec`` with each structure rigidly translated.

    Parameters
    ----------
    spec : PhantomSpec
    shifts : mapping label -> (dx, dy, dz) mm, or sequence aligned with
        ``spec.structures``.  Missing labels are not moved.
    seed : int, optional
        Seed for the redrawn intensities; defaults to ``spec.seed``.
    """
    if isinstance(shifts, dict):
        lookup = {int(k): v for k, v in shifts.items()}
    else:
        shifts = list(shifts)
        if len(shifts) != len(spec.structures):
            raise InvalidSpec("one shift per structure required")
        lookup = {s.label: d for s, d in zip(spec.structures, shifts)}
    moved = []
    for s in spec.structures:
        d = np.asarray(lookup.get(s.label, (0.0, 0.0, 0.0)), dtype=float)
        if d.shape != (3,):
            raise InvalidSpec(f"shift for structure {s.label} must have 3 components")
        moved.append(replace(s, center=tuple(float(c) for c in np.asarray(s.center) + d)))
    new = replace(spec, structures=tuple(moved), seed=spec.seed if seed is None else seed)
    return generate_phantom(new)


# ------------------------------------------------------------ text format
#
#   [phantom]
#   dims = 32, 32, 32
#   spacing = 1, 1, 1
#   background = 10
#   background_stddev = 0
#   seed = 7
#
#   [structure 1]
#   shape = ball
#   center = 10, 10, 10
#   size = 4
#   mean = 100
#   stddev = 0


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def parse_phantom_spec(text: str) -> PhantomSpec:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidSpec(f"unreadable phantom spec: {exc}") from exc
    if not cp.has_section("phantom"):
        raise InvalidSpec("phantom spec needs a [phantom] section")
    try:
        head = cp["phantom"]
        structures: List[Structure] = []
        for name in cp.sections():
            if not name.startswith("structure"):
                continue
            sec = cp[name]
            label = int(sec.get("label", name.split()[-1]))
            structures.append(
                Structure(
                    label=label,
                    shape=sec.get("shape", "ball").strip(),
                    center=_floats(sec["center"]),
                    size=_floats(sec["size"]),
                    mean=float(sec["mean"]),
                    stddev=float(sec.get("stddev", "0")),
                )
            )
        spec = PhantomSpec(
            dims=tuple(int(v) for v in _floats(head["dims"])),
            spacing=_floats(head.get("spacing", "1 1 1")),
            structures=tuple(structures),
            background=float(head.get("background", "0")),
            background_stddev=float(head.get("background_stddev", "0")),
            seed=int(head.get("seed", "0")),
        )
    except (KeyError, ValueError) as exc:
        raise InvalidSpec(f"bad phantom spec: {exc}") from exc
    spec.validate()
    return spec


def _join(values: Sequence[float]) -> str:
    return ", ".join(repr(float(v)) for v in values)


def format_phantom_spec(spec: PhantomSpec) -> str:
    lines = [
        "[phantom]",
        "dims = " + ", ".join(str(int(d)) for d in spec.dims),
        "spacing = " + _join(spec.spacing),
        f"background = {float(spec.background)!r}",
        f"background_stddev = {float(spec.background_stddev)!r}",
        f"seed = {int(spec.seed)}",
    ]
    for s in spec.structures:
        lines += [
            "",
            f"[structure {s.label}]",
            f"shape = {s.shape}",
            "center = " + _join(s.center),
            "size = " + _join(s.size),
            f"mean = {float(s.mean)!r}",
            f"stddev = {float(s.stddev)!r}",
        ]
    return "\n".join(lines) + "\n"


def read_phantom_spec(path) -> PhantomSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_phantom_spec(fh.read())


def write_phantom_spec(spec: PhantomSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_phantom_spec(spec))
