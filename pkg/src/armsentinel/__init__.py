"""cGAN arm-segmentation safety stack: autodiff core, networks, training,
data pipeline, evaluation, latency guard and safety interlock."""

__version__ = "0.1.0"

from .tensor import Tensor  # noqa: F401
