"""Error-sensitivity modulated experience replay on a from-scratch MLP core."""

from .kernels import BACKEND
from .nn import NetworkSpec, ParamSet, init_params

__version__ = "0.1.0"
__all__ = ["BACKEND", "NetworkSpec", "ParamSet", "init_params"]
