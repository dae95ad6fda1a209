"""Dice overlap against ground truth and slice overlays."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from PIL import Image

from .exceptions import IoFailure
from .volume import LabelVolume, ScalarVolume, check_same_geometry, extract_slice

__all__ = ["SegmentationReport", "dice", "dice_report", "palette_color", "render_overlay", "overlay_image"]


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """``2|A & B| / (|A| + |B|)``; 1.0 when both masks are empty."""
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


@dataclass(frozen=True)
class SegmentationReport:
    labels: tuple
    dice: Dict[int, float]
    truth_voxels: Dict[int, int]
    pred_voxels: Dict[int, int]
    intersection: Dict[int, int]
    confusion: Dict[tuple, int] = field(default_factory=dict)

    @property
    def macro_dice(self) -> float:
        if not self.labels:
            return 1.0
        return float(np.mean([self.dice[k] for k in self.labels]))

    def to_dict(self) -> dict:
        return {
            "macro_dice": self.macro_dice,
            "structures": [
                {
                    "label": k,
                    "dice": self.dice[k],
                    "truth_voxels": self.truth_voxels[k],
                    "pred_voxels": self.pred_voxels[k],
                    "intersection": self.intersection[k],
                }
                for k in self.labels
            ],
            "confusion": [
                {"truth": t, "pred": p, "voxels": c} for (t, p), c in sorted(self.confusion.items())
            ],
        }

    def text(self) -> str:
        lines = [f"macro_dice\t{self.macro_dice:.17g}", "label\tdice\ttruth\tpred\tintersection"]
        for k in self.labels:
            lines.append(
                f"{k}\t{self.dice[k]:.17g}\t{self.truth_voxels[k]}\t"
                f"{self.pred_voxels[k]}\t{self.intersection[k]}"
            )
        lines.append("confusion\ttruth\tpred\tvoxels")
        for (t, p), c in sorted(self.confusion.items()):
            lines.append(f"confusion\t{t}\t{p}\t{c}")
        return "\n".join(lines) + "\n"


def dice_report(pred: LabelVolume, truth: LabelVolume, label_map: Sequence[int] | None = None) -> SegmentationReport:
    """Per-structure Dice, voxel counts and a truth-by-prediction confusion table.

    ``label_map`` defaults to the nonzero labels present in either volume.
    """
    check_same_geometry(pred, truth)
    p = pred.data.ravel(order="F")
    t = truth.data.ravel(order="F")
    if label_map is None:
        label_map = sorted(set(pred.unique_labels()) | set(truth.unique_labels()))
    labels = tuple(int(k) for k in label_map)
    d, tv, pv, iv = {}, {}, {}, {}
    for k in labels:
        tm, pm = t == k, p == k
        tv[k], pv[k] = int(tm.sum()), int(pm.sum())
        iv[k] = int(np.logical_and(tm, pm).sum())
        d[k] = dice(pm, tm)
    pairs, counts = np.unique(np.stack([t, p]), axis=1, return_counts=True)
    confusion = {(int(a), int(b)): int(c) for (a, b), c in zip(pairs.T, counts) if a != b}
    return SegmentationReport(labels, d, tv, pv, iv, confusion)


# Saturated colours only, so a 50% blend always differs from plain grey.
_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (255, 225, 25),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (0, 128, 128),
    (170, 110, 40),
    (128, 0, 0),
)


def palette_color(label: int) -> tuple:
    return _PALETTE[(int(label) - 1) % len(_PALETTE)]


def overlay_image(scalar: ScalarVolume, labels: LabelVolume, axis: str, index: int) -> np.ndarray:
    """RGB uint8 array of one slice: grey intensities, labels blended at 50%."""
    check_same_geometry(scalar, labels)
    plane = extract_slice(scalar, axis, index)
    lab = extract_slice(labels, axis, index)
    lo, hi = float(plane.min()), float(plane.max())
    if hi > lo:
        grey = np.round((plane - lo) / (hi - lo) * 255.0)
    else:
        grey = np.zeros_like(plane)
    rgb = np.repeat(grey[:, :, None], 3, axis=2)
    for k in np.unique(lab):
        if k == 0:
            continue
        m = lab == k
        rgb[m] = np.floor(0.5 * rgb[m] + 0.5 * np.asarray(palette_color(k), float) + 0.5)
    return rgb.astype(np.uint8)


def render_overlay(scalar: ScalarVolume, labels: LabelVolume, axis: str, index: int, out_path) -> None:
    """Write :func:`overlay_image` as a PNG."""
    img = Image.fromarray(overlay_image(scalar, labels, axis, index), mode="RGB")
    try:
        img.save(out_path, format="PNG", optimize=False)
    except OSError as exc:
        raise IoFailure(f"cannot write {out_path}: {exc}") from exc
