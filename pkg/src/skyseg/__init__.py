"""Multi-task aerial-image segmentation on a small numpy autodiff engine."""
from .network import (FULL_PROFILE, REDUCED_PROFILE, TASK_BRANCHES, Adam, NetworkConfig, SkyScapesNet, build,
                      load_weights, parameter_count, save_weights)
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"
