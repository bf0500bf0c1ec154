from . import core as ops
from .core import Tape, Tensor, tensor
from .gradcheck import grad_check, relative_error
from .params import AdamW, ParamStore, read_metadata

__all__ = ["AdamW", "ParamStore", "Tape", "Tensor", "grad_check", "ops", "read_metadata",
           "relative_error", "tensor"]
