"""
Reverse-mode gradients keyed by parameter name, and the finite-difference
check used to validate them.
"""

import copy

import torch
from torch.func import functional_call

from core.exceptions import BackwardWithoutForwardError

FD_STEP = 1e-4
FD_RTOL = 1e-3
FD_ATOL = 1e-6


def backward(loss: torch.Tensor, module: torch.nn.Module, inputs=(), retain_graph=False):
    """
    Gradients of a scalar loss for every parameter of ``module`` (and for any
    extra ``inputs``, keyed ``input.<i>``). Parameters the loss does not
    depend on get zeros.
    """
    if loss.grad_fn is None:
        raise BackwardWithoutForwardError("loss was not produced by a recorded forward pass")
    if loss.numel() != 1:
        raise BackwardWithoutForwardError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")

    named = [(name, p) for name, p in module.named_parameters() if p.requires_grad]
    targets = [p for _, p in named] + list(inputs)
    grads = torch.autograd.grad(loss, targets, allow_unused=True, retain_graph=retain_graph)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(targets, grads)]

    result = {name: g for (name, _), g in zip(named, grads)}
    for index, g in enumerate(grads[len(named):]):
        result[f"input.{index}"] = g
    return result


def gradient_check(module: torch.nn.Module, loss_fn, eps=FD_STEP, rtol=FD_RTOL, atol=FD_ATOL):
    """
    Compare reverse-mode gradients with central finite differences on every
    parameter of a float64 copy of ``module``; the module itself is left as is.

    ``loss_fn(forward)`` must return a scalar, where ``forward(*args)`` runs
    the module's forward pass with the parameters under test. Raises
    ``torch.autograd.GradcheckError`` on disagreement.
    """
    module = copy.deepcopy(module).double()
    names = [name for name, _ in module.named_parameters()]
    values = tuple(p.detach().clone().requires_grad_(True) for _, p in module.named_parameters())

    def evaluate(*current):
        state = dict(zip(names, current))

        def forward(*args, **kwargs):
            return functional_call(module, state, args, kwargs)

        return loss_fn(forward)

    return torch.autograd.gradcheck(evaluate, values, eps=eps, rtol=rtol, atol=atol)
