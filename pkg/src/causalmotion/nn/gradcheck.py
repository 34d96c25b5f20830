"""Gradient verification against central finite differences.

The analytic gradients produced by the autodiff engine are the thing under
test; the finite-difference side never touches the backward pass, so the two
routes stay independent.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ConfigError, NumericalError
from .params import ParamTree, collect_grads
from .tensor import Tensor


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: ParamTree,
    eps: float = 1e-5,
    floor: float = 1e-5,
    return_details: bool = False,
):
    """Max over named parameters of the relative error between the analytic
    gradient and a central finite difference, both in double precision.

    Per parameter array P the error is ||a_P - n_P|| / max(||a_P||, ||n_P||,
    floor). `loss_fn` must be a deterministic scalar function of the bound
    parameter tensors.
    """
    if not (0.0 < eps <= 1e-2):
        raise ConfigError(f"grad_check eps must be in (0, 1e-2], got {eps}")

    work = params.astype(np.float64)
    leaves = work.bind(requires_grad=True)
    out = loss_fn(leaves)
    if out.data.shape != ():
        raise ConfigError("grad_check expects a scalar loss")
    if not np.isfinite(out.data):
        raise NumericalError("non-finite loss at the base point", path="<loss>")
    out.backward()
    analytic = collect_grads(leaves)

    details: dict[str, float] = {}
    worst = 0.0
    for path in work.paths():
        arr = work[path]
        flat = arr.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn(work.bind()).data)
            flat[i] = orig - eps
            f_minus = float(loss_fn(work.bind()).data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError("non-finite loss during finite differencing", path=path)
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[path].reshape(-1)
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite analytic gradient", path=path)
        denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(numeric)), floor)
        rel = float(np.linalg.norm(a - numeric)) / denom
        details[path] = rel
        worst = max(worst, rel)
    return (worst, details) if return_details else worst
