"""Conditional flow-matching generation with parameter-efficient fine-grained control."""

from ._core import (
    __version__,
    conditional_path,
    detect_annotations,
    f1_micro,
    file_fingerprint,
    gradient_check,
    integrate_field,
    read_feature_file,
    run_corpus,
    run_evaluate,
    run_finetune,
    run_generate,
    run_pretrain,
    run_sweep,
    sinusoidal_time_embedding,
    symbol_duration,
    target_field,
    write_feature_file,
)

__all__ = [
    "__version__",
    "conditional_path",
    "detect_annotations",
    "f1_micro",
    "file_fingerprint",
    "gradient_check",
    "integrate_field",
    "read_feature_file",
    "run_corpus",
    "run_evaluate",
    "run_finetune",
    "run_generate",
    "run_pretrain",
    "run_sweep",
    "sinusoidal_time_embedding",
    "symbol_duration",
    "target_field",
    "write_feature_file",
]
