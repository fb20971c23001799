"""Dataset assembly, training, evaluation and experiment drivers."""

from .data import (
    ANALYTIC,
    SDP,
    Dataset,
    DatasetError,
    DegenerateGridError,
    build_dataset,
    build_noisy_dataset,
    build_product_dataset,
    dataset_bytes,
    load_dataset,
    parse_dataset,
    split,
    split_indices,
)
from .experiments import (
    CNN,
    CNN_SE,
    FN_ROW,
    FP_ROW,
    ArmSummary,
    ExperimentResult,
    NoiseSweepResult,
    accuracy_table_csv,
    boundary_check,
    error_table_csv,
    label_flip_point,
    noise_sweep,
    repeat_experiment,
    run_once,
)
from .training import (
    EvalReport,
    History,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    evaluate,
    report_from_predictions,
    train,
)

__all__ = [
    "ANALYTIC",
    "ArmSummary",
    "CNN",
    "CNN_SE",
    "Dataset",
    "DatasetError",
    "DegenerateGridError",
    "EvalReport",
    "ExperimentResult",
    "FN_ROW",
    "FP_ROW",
    "History",
    "NoiseSweepResult",
    "SDP",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "accuracy_table_csv",
    "boundary_check",
    "build_dataset",
    "build_noisy_dataset",
    "build_product_dataset",
    "dataset_bytes",
    "error_table_csv",
    "evaluate",
    "label_flip_point",
    "load_dataset",
    "noise_sweep",
    "parse_dataset",
    "repeat_experiment",
    "report_from_predictions",
    "run_once",
    "split",
    "split_indices",
    "train",
]
