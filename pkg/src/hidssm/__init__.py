"""Hierarchical input-dependent state space models on numpy.

Selective (input-dependent) ZOH discretization, causal/contextual scans and
their matrix-mixer forms, segment-local aggregation driven by a phase-proposal
network, hybrid discrete-continuous training with hand-verified gradients, and
boundary-relaxed sequence metrics.
"""

from .blocks import SegmentPartition, ppn_segments
from .core import (
    DiscretizedCoefficients,
    MatrixMixer,
    SsmDims,
    SsmProjections,
    compute_delta,
    contextual_scan,
    discretize,
    discretize_zoh,
    materialize_mixer_blockdiag,
    materialize_mixer_causal,
    mixer_row_causal,
    mixer_row_contextual,
    project_inputs,
    recurrent_scan,
    softplus,
)
from .data import (
    FeatureSequence,
    SyntheticSpec,
    load_features,
    save_features,
    sparsify_indices,
    synth_generate,
)
from .metrics import EvalReport, evaluate_videos, micro_f1, relaxed_metrics
from .model import (
    GradientBundle,
    HidSsmModel,
    LayerStackConfig,
    SupervisionTargets,
    backward,
    forward,
    init_model,
    progress_targets,
    total_loss,
)
from .train import AdamOptimizer, TrainReport, predict  # the loop itself lives at hidssm.train.train

__all__ = [
    "AdamOptimizer",
    "DiscretizedCoefficients",
    "EvalReport",
    "FeatureSequence",
    "GradientBundle",
    "HidSsmModel",
    "LayerStackConfig",
    "MatrixMixer",
    "SegmentPartition",
    "SsmDims",
    "SsmProjections",
    "SupervisionTargets",
    "SyntheticSpec",
    "TrainReport",
    "backward",
    "compute_delta",
    "contextual_scan",
    "discretize",
    "discretize_zoh",
    "evaluate_videos",
    "forward",
    "init_model",
    "load_features",
    "materialize_mixer_blockdiag",
    "materialize_mixer_causal",
    "micro_f1",
    "mixer_row_causal",
    "mixer_row_contextual",
    "ppn_segments",
    "predict",
    "progress_targets",
    "project_inputs",
    "recurrent_scan",
    "relaxed_metrics",
    "save_features",
    "softplus",
    "sparsify_indices",
    "synth_generate",
    "total_loss",
]

__version__ = "0.1.0"
