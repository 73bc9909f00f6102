"""Layout-guided dual-stream attention sampler."""

from layoutfuse._core import (
    IoError,
    NumericError,
    SpecError,
    box_to_grid,
    eval_layout,
    flop_count,
    generate,
    iou,
    make_schedule,
    matmul,
    read_container,
    region_assignment,
    scaled_dot_attention,
    softmax_rows,
    train_toy,
    write_container,
    __version__,
)

__all__ = [
    "IoError",
    "NumericError",
    "SpecError",
    "box_to_grid",
    "eval_layout",
    "flop_count",
    "generate",
    "iou",
    "make_schedule",
    "matmul",
    "read_container",
    "region_assignment",
    "scaled_dot_attention",
    "softmax_rows",
    "train_toy",
    "write_container",
    "__version__",
]
