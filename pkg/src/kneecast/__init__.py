"""Real-time knee-angle forecasting from EMG: causal preprocessing, an
attention CNN-LSTM model zoo, staged transfer learning, and metrics."""

from .dataset import (
    PreprocessedExample,
    SplitPolicy,
    make_examples,
    split_examples,
)
from .filters import BiquadCascade, FilterSpec, apply_filter, design_butterworth
from .metrics import MetricsReport, evaluate_metrics, persistence_baseline
from .models import ModelGraph, ModelHyper, build_model, count_parameters, set_group_training
from .preprocess import (
    PreprocessConfig,
    PreprocessedWindow,
    WindowSpec,
    preprocess_window,
    segment_stream,
)
from .recordings import Recording, load_recording, save_recording
from .stages import Stage, run_stage_plan
from .synth import SynthSpec, synthesize_subject
from .training import (
    TrainConfig,
    TrainHistory,
    finetune,
    train,
    transfer_sic_to_dic,
)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BiquadCascade", "FilterSpec", "apply_filter", "design_butterworth",
    "WindowSpec", "PreprocessConfig", "PreprocessedWindow", "preprocess_window",
    "segment_stream", "Recording", "load_recording", "save_recording",
    "SynthSpec", "synthesize_subject", "PreprocessedExample", "SplitPolicy",
    "make_examples", "split_examples", "ModelGraph", "ModelHyper", "build_model",
    "count_parameters", "set_group_training", "TrainConfig", "TrainHistory",
    "train", "finetune", "transfer_sic_to_dic", "Stage", "run_stage_plan",
    "MetricsReport", "evaluate_metrics", "persistence_baseline",
    "load_checkpoint", "save_checkpoint", "__version__",
]
