from .gradcheck import GradCheckReport, TensorCheck, grad_check
from .params import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    Param,
    ParameterStore,
    adam_step,
    resolve_groups,
)
from . import ops

__all__ = [
    "ADAM_BETA1",
    "ADAM_BETA2",
    "ADAM_EPS",
    "GradCheckReport",
    "Param",
    "ParameterStore",
    "TensorCheck",
    "adam_step",
    "grad_check",
    "ops",
    "resolve_groups",
]
