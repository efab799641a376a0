"""RGB-thermal salient object detection with signed-distance and direction-field supervision.

Subpackages by concern: :mod:`tensor` and :mod:`kernels` (reverse-mode numpy
engine), :mod:`geometry` (exact distance maps and direction fields),
:mod:`losses`, :mod:`net`, :mod:`metrics`, :mod:`train` and :mod:`cli`.
"""

__version__ = "0.1.0"

from .geometry import DirectionField, SignedDistanceMap, direction_field, signed_distance_map  # noqa: E402
from .losses import LossWeights, loss_df, loss_ds, loss_prl, loss_sdm  # noqa: E402
from .net import NetConfig, PRLNet  # noqa: E402
from .tensor import Tensor  # noqa: E402

__all__ = [
    "__version__",
    "DirectionField",
    "LossWeights",
    "NetConfig",
    "PRLNet",
    "SignedDistanceMap",
    "Tensor",
    "direction_field",
    "loss_df",
    "loss_ds",
    "loss_prl",
    "loss_sdm",
    "signed_distance_map",
]
