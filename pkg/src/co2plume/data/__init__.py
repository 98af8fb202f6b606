from .channels import InjectionFields, Normalizer, build_injection_fields, encode_channels
from .metrics import evaluate_arrays, mae, r2_score, rmse
from .dataset import (
    DatasetManifest,
    DeskSpec,
    build_dataset,
    load_dataset,
    split_ids,
)
from .training import TrainConfig, TrainReport, train, finetune, evaluate_model

__all__ = [
    "InjectionFields", "Normalizer", "build_injection_fields", "encode_channels",
    "evaluate_arrays", "mae", "r2_score", "rmse",
    "DatasetManifest", "DeskSpec", "build_dataset", "load_dataset", "split_ids",
    "TrainConfig", "TrainReport", "train", "finetune", "evaluate_model",
]
