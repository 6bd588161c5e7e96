"""Python bindings for the mmfuse core."""

from ._core import (
    ablation_round,
    detr_object_mask,
    generate_synthetic,
    lr_at,
    read_dataset,
    run_cli,
    score_a,
    score_b,
    series_stats,
    stratified_split,
)

__all__ = [
    "ablation_round",
    "detr_object_mask",
    "generate_synthetic",
    "lr_at",
    "read_dataset",
    "run_cli",
    "score_a",
    "score_b",
    "series_stats",
    "stratified_split",
]
