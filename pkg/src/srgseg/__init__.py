"""Structural segmentation of labelled 3D volumes by statistical-relational graph matching."""

from .estimator import SRGSegmenter, SuperSegmenter, assignment_to_labels
from .evaluation import dice_report, render_overlay
from .exceptions import SrgError
from .graph import ModelStatistics, Srg, build_srg, fit_model, load_graph, model_graph, save_graph
from .matching import (
    CostWeights,
    DistanceSpec,
    Solution,
    evaluate,
    exhaustive_best,
    greedy_initial,
    join_regions,
    sweep_weights,
)
from .phantom import PhantomSpec, Structure, generate_phantom, perturb_phantom
from .superseg import morphological_gradient, relabel_connected, watershed
from .volume import LabelVolume, ScalarVolume, extract_slice, load_volume, save_volume

__version__ = "0.1.0"
