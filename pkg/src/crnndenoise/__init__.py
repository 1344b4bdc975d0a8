"""Speech denoising with a convolutional-recurrent network and a
word-decoder head, on a fully synthetic corpus.

The package is a library first: reverse-mode automatic differentiation
(:mod:`~crnndenoise.autodiff`), the optimizer (:mod:`~crnndenoise.optim`),
frame analysis/synthesis (:mod:`~crnndenoise.dsp`), corpus synthesis
(:mod:`~crnndenoise.corpus` and :mod:`~crnndenoise.vocab`), the model
(:mod:`~crnndenoise.model`), the training schedule
(:mod:`~crnndenoise.training`), evaluation (:mod:`~crnndenoise.metrics`),
and checkpoints (:mod:`~crnndenoise.checkpoint`). The ``crnndenoise``
command in :mod:`~crnndenoise.cli` drives the full pipeline.
"""

from .errors import (
    CheckpointError,
    CheckpointMismatchError,
    ConfigError,
    DimensionError,
    NumericsError,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ConfigError",
    "DimensionError",
    "NumericsError",
    "CheckpointError",
    "CheckpointMismatchError",
]
