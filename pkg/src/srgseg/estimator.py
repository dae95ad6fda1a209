"""scikit-learn style front end for the segmentation pipeline.

>>> seg = SRGSegmenter(alpha=0.5, vertex_weights=(0.5, 0.5, 0.0))
>>> seg.fit(train_scalars, train_labels)          # doctest: +SKIP
>>> pred = seg.predict(test_scalar)               # doctest: +SKIP
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import dice_report
from .graph import RegionStats, build_srg, fit_model, model_graph
from .matching import CostWeights, DistanceSpec, evaluate, greedy_initial, n_regions
from .superseg import ELEMENTS, morphological_gradient, watershed
from .validation import check_label_volume, check_scalar_volume, check_volume_pairs
from .volume import LabelVolume, check_same_geometry

__all__ = ["SuperSegmenter", "SRGSegmenter"]


class SuperSegmenter(TransformerMixin, BaseEstimator):
    """Watershed of the morphological gradient.

    Parameters
    ----------
    min_depth : float
        Minima shallower than this are merged (h-minima); higher means fewer regions.
    element : {'cross6', 'cube26'}
        Structuring element of the gradient.
    """

    def __init__(self, min_depth=0.0, element="cross6"):
        self.min_depth = min_depth
        self.element = element

    def _validate_params(self):
        if self.element not in ELEMENTS:
            raise ValueError(f"element must be one of {ELEMENTS}, got {self.element!r}")
        if not (np.isfinite(self.min_depth) and self.min_depth >= 0):
            raise ValueError(f"min_depth must be finite and >= 0, got {self.min_depth!r}")

    def fit(self, X=None, y=None):
        self._validate_params()
        self.fitted_ = True
        return self

    def transform(self, X) -> LabelVolume:
        check_is_fitted(self, "fitted_")
        vol = check_scalar_volume(X)
        grad = morphological_gradient(vol, self.element)
        self.result_ = watershed(grad, float(self.min_depth), self.element)
        self.n_super_ = self.result_.n_super
        return self.result_.labels


class SRGSegmenter(BaseEstimator):
    """Learn a structure graph from annotated volumes and segment new volumes by matching.

    ``fit`` builds one graph per annotated volume and fits Gaussian attribute
    statistics.  ``predict`` over-segments the input, assigns each region
    to a model structure greedily and returns the resulting label volume.

    Parameters
    ----------
    alpha : float
        Weight of the vertex term against the edge term, in [0, 1].
    vertex_weights : 3-tuple
        Weights of (centroid, intensity, volume); normalized to sum to 1.
    edge_weights : 3-tuple
        Weights of (centroid vector, volume ratio, contrast); normalized.
    greedy_ignore_volume : bool
        Drop the volume weight while building the greedy assignment.
    empty_penalty : float
        Cost, in unit distances, charged for a structure with no regions.
    min_depth, element
        Over-segmentation parameters, see :class:`SuperSegmenter`.
    label_map : sequence of int, optional
        Structures to model.  Defaults to every label in the training data.
    include_background : bool
        Model label 0 as a structure too (only when ``label_map`` is None).
    """

    def __init__(
        self,
        alpha=0.5,
        vertex_weights=(0.5, 0.5, 0.0),
        edge_weights=(1 / 3, 1 / 3, 1 / 3),
        greedy_ignore_volume=True,
        empty_penalty=10.0,
        min_depth=0.0,
        element="cross6",
        label_map=None,
        include_background=True,
    ):
        self.alpha = alpha
        self.vertex_weights = vertex_weights
        self.edge_weights = edge_weights
        self.greedy_ignore_volume = greedy_ignore_volume
        self.empty_penalty = empty_penalty
        self.min_depth = min_depth
        self.element = element
        self.label_map = label_map
        self.include_background = include_background

    def _weights(self) -> CostWeights:
        return CostWeights.normalized(self.alpha, self.vertex_weights, self.edge_weights)

    def fit(self, X, y):
        """Fit the model graph.

        Parameters
        ----------
        X : ScalarVolume or list of ScalarVolume
        y : LabelVolume or list of LabelVolume, one per scalar volume
        """
        scalars, labels = check_volume_pairs(X, y)
        self.weights_ = self._weights()
        if self.label_map is not None:
            label_map = [int(v) for v in self.label_map]
        else:
            found = sorted(set().union(*(set(np.unique(t.data).tolist()) for t in labels)))
            label_map = [v for v in found if v != 0 or self.include_background]
        graphs = [build_srg(s, t, label_map) for s, t in zip(scalars, labels)]
        self.stats_ = fit_model(graphs)
        self.model_ = model_graph(self.stats_)
        self.dist_ = DistanceSpec.from_stats(self.stats_)
        self.label_map_ = tuple(label_map)
        self.n_structures_ = len(label_map)
        return self

    def oversegment(self, X) -> LabelVolume:
        return SuperSegmenter(self.min_depth, self.element).fit().transform(X)

    def match(self, X, super_labels: Optional[LabelVolume] = None):
        """Greedy solution for ``X``; returns an evaluated ``Solution``."""
        check_is_fitted(self, "stats_")
        vol = check_scalar_volume(X)
        if super_labels is None:
            super_labels = self.oversegment(vol)
        super_labels = check_label_volume(super_labels, vol.spacing)
        check_same_geometry(vol, super_labels)
        k = n_regions(super_labels)
        super_srg = RegionStats.from_volumes(vol, super_labels, size=k + 1).graph(range(1, k + 1))
        s = greedy_initial(super_srg, self.model_, self.weights_, self.dist_, self.greedy_ignore_volume)
        self.super_labels_ = super_labels
        return evaluate(s, super_labels, vol, self.model_, self.weights_, self.dist_, self.empty_penalty)

    def predict(self, X, super_labels: Optional[LabelVolume] = None) -> LabelVolume:
        """Label volume holding the model structure id of every voxel."""
        solution = self.match(X, super_labels)
        return assignment_to_labels(solution.assignment, self.super_labels_, self.label_map_)

    def score(self, X, y) -> float:
        """Macro Dice over the nonzero modelled structures."""
        truth = check_label_volume(y)
        pred = self.predict(X)
        structures = [k for k in self.label_map_ if k != 0]
        return dice_report(pred, truth, structures).macro_dice


def assignment_to_labels(assignment, super_labels: LabelVolume, label_map) -> LabelVolume:
    """Paint each region with the structure id of its assigned model vertex."""
    lut = np.concatenate([[0], np.asarray(label_map, dtype=np.int64)[np.asarray(assignment, dtype=np.int64)]])
    return LabelVolume(lut[super_labels.data], super_labels.spacing)
