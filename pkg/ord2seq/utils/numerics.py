"""
Numerics layer: float64 tensor ops on torch with shape checks, the backward
entry point, Adam, and finite-difference gradient checking.

torch.autograd records a fresh tape on every forward pass; nothing here caches
graphs. Broadcasting is limited to what the model needs: identical shapes, a
trailing vector (bias or per-category mask), or a scalar.
"""

import logging
import random
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from torch.func import functional_call

from utils.errors import MissingGradientError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = torch.float64

ADAM_LR = 1e-4
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch; return a torch generator for data shuffling."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def to_tensor(x, dtype=DTYPE) -> torch.Tensor:
    if torch.is_tensor(x):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


# --------------------------------------------------------------------------
# Shape-checked ops
# --------------------------------------------------------------------------
def _check_elementwise(op: str, a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape == b.shape or a.dim() == 0 or b.dim() == 0:
        return
    # trailing-vector or trailing-block broadcast (bias rows, masks over a batch)
    if b.dim() < a.dim() and a.shape[a.dim() - b.dim():] == b.shape:
        return
    if a.dim() < b.dim() and b.shape[b.dim() - a.dim():] == a.shape:
        return
    raise ShapeError(op, a.shape, b.shape)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.dim() > 2 and b.dim() > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    return torch.matmul(a, b)


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_elementwise("add", a, b)
    return a + b


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_elementwise("mul", a, b)
    return a * b


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def mean(x: torch.Tensor, dim: Optional[int] = None) -> torch.Tensor:
    return x.mean() if dim is None else x.mean(dim=dim)


def log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x)


def transpose(x: torch.Tensor, dim0: int = -2, dim1: int = -1) -> torch.Tensor:
    return x.transpose(dim0, dim1)


def reshape(x: torch.Tensor, shape: Sequence[int]) -> torch.Tensor:
    shape = tuple(shape)
    known = int(np.prod([s for s in shape if s != -1])) if shape else 1
    if -1 in shape:
        ok = known > 0 and x.numel() % known == 0
    else:
        ok = known == x.numel()
    if not ok:
        raise ShapeError("reshape", x.shape, shape)
    return x.reshape(shape)


# --------------------------------------------------------------------------
# Reverse mode
# --------------------------------------------------------------------------
def backward(loss: torch.Tensor, params: Optional[Iterable[torch.Tensor]] = None) -> List[torch.Tensor]:
    """
    Run the backward pass from a scalar loss.

    Parameters the loss does not reach (or a constant loss) get zero gradients
    rather than None, so every listed parameter has a populated grad afterwards.
    """
    if loss.dim() != 0:
        raise ShapeError("backward", loss.shape, ())
    params = list(params) if params is not None else []
    if loss.requires_grad:
        loss.backward()
    grads = []
    for p in params:
        if p.grad is None:
            p.grad = torch.zeros_like(p)
        grads.append(p.grad)
    return grads


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------
def make_adam(
    params: Iterable[torch.Tensor],
    lr: float = ADAM_LR,
    betas: Tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=betas, eps=eps, weight_decay=0.0)


def adam_step(optimizer: torch.optim.Optimizer) -> None:
    """Bias-corrected Adam update. Every trainable parameter must carry a grad."""
    for group in optimizer.param_groups:
        for p in group["params"]:
            if p.requires_grad and p.grad is None:
                raise MissingGradientError(
                    f"parameter of shape {tuple(p.shape)} has no gradient; call backward() first"
                )
    optimizer.step()


def adam_step_count(optimizer: torch.optim.Optimizer) -> int:
    steps = [int(st["step"]) for st in optimizer.state.values() if "step" in st]
    return max(steps, default=0)


# --------------------------------------------------------------------------
# Finite-difference oracle
# --------------------------------------------------------------------------
def finite_difference_check(
    fn: Callable[..., torch.Tensor],
    inputs: Tuple[torch.Tensor, ...],
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    fast_mode: bool = False,
) -> bool:
    """Compare analytic gradients of fn against central differences."""
    return torch.autograd.gradcheck(
        fn, inputs, eps=eps, atol=atol, rtol=rtol, fast_mode=fast_mode, raise_exception=False
    )


class _LossAdapter(nn.Module):
    def __init__(self, model: nn.Module, loss_fn: Callable[[nn.Module], torch.Tensor]):
        super().__init__()
        self.model = model
        self.loss_fn = loss_fn

    def forward(self) -> torch.Tensor:
        return self.loss_fn(self.model)


def module_gradcheck(
    model: nn.Module,
    loss_fn: Callable[[nn.Module], torch.Tensor],
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    fast_mode: bool = True,
) -> bool:
    """
    Finite-difference check of a scalar loss against every trainable parameter.

    The parameters are fed to gradcheck as inputs through functional_call, so the
    module itself is left untouched.
    """
    adapter = _LossAdapter(model, loss_fn)
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    names = [f"model.{n}" for n, _ in named]
    inputs = tuple(p.detach().clone().requires_grad_(True) for _, p in named)

    def fn(*tensors):
        return functional_call(adapter, dict(zip(names, tensors)), ())

    return finite_difference_check(fn, inputs, eps=eps, rtol=rtol, atol=atol, fast_mode=fast_mode)
