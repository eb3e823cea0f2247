from .engine import (ContractError, Node, NumericError, Tape,
                     backward_pass_count, grad_scalar_node,
                     reset_backward_pass_count)
from .params import LayoutEntry, ParamVector
from .arch import (ArchSpec, ForwardResult, JacobianBudgetError, forward,
                   grad_scalar, init_params, jacobian, weighted_output_grad)

__all__ = [
    "ContractError", "Node", "NumericError", "Tape",
    "backward_pass_count", "grad_scalar_node", "reset_backward_pass_count",
    "LayoutEntry", "ParamVector",
    "ArchSpec", "ForwardResult", "JacobianBudgetError", "forward",
    "grad_scalar", "init_params", "jacobian", "weighted_output_grad",
]
