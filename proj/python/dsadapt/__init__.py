"""Cross-domain semantic segmentation adaptation toolkit.

Thin python surface over the C++ core: dataset tiling, the feature
disentangling block, soft-voting inference, metrics, and the training loop.
"""

from ._core import (
    IGNORE_INDEX,
    ConfusionMatrix,
    Ddm,
    adversarial_losses,
    combine_losses,
    ensemble_predict,
    evaluate_checkpoint,
    fit,
    seg_loss,
    synth_to_dir,
    tile_grid,
)

__all__ = [
    "IGNORE_INDEX",
    "ConfusionMatrix",
    "Ddm",
    "adversarial_losses",
    "combine_losses",
    "ensemble_predict",
    "evaluate_checkpoint",
    "fit",
    "seg_loss",
    "synth_to_dir",
    "tile_grid",
]
