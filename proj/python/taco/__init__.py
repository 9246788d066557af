"""Python bindings for the taco C++ library."""

from ._core import (
    ConfigError,
    Error,
    FormatError,
    NumericError,
    ShapeError,
    __version__,
    average_precision,
    default_config,
    detection_rate,
    evaluate,
    gen_dataset,
    grad_clamp,
    iop,
    iou,
    local_variation,
    normalize_config,
    optimize,
    read_tensor,
    smooth_loss,
    train_detector,
    train_enhancer,
    tv_loss,
    write_tensor,
)
