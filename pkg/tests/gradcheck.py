"""Finite-difference gradient checking against autograd, in float64."""

from __future__ import annotations

import numpy as np
import torch


def fd_check(
    build_loss,
    tensors: dict[str, torch.Tensor],
    coords_per_tensor: int = 5,
    h: float = 1e-6,
    tol: float = 1e-4,
    seed: int = 0,
) -> float:
    """Compare autograd gradients of build_loss() against central finite
    differences on sampled coordinates of each tensor.

    Tensors must be float64 leaves with requires_grad.  Passes iff
    |analytic - numeric| <= tol * max(1, |analytic|, |numeric|) everywhere;
    returns the worst relative error seen.
    """
    params = list(tensors.values())
    for t in params:
        assert t.dtype == torch.float64, "gradient checks must run in float64"
        assert t.requires_grad
    loss = build_loss()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, tensor, grad in zip(tensors.keys(), params, grads):
        flat = tensor.detach().reshape(-1)
        n = flat.numel()
        count = min(coords_per_tensor, n)
        picks = rng.choice(n, size=count, replace=False)
        for flat_idx in picks:
            orig = float(flat[flat_idx])
            flat[flat_idx] = orig + h
            up = float(build_loss().detach())
            flat[flat_idx] = orig - h
            down = float(build_loss().detach())
            flat[flat_idx] = orig
            numeric = (up - down) / (2 * h)
            analytic = 0.0 if grad is None else float(grad.reshape(-1)[flat_idx])
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
            assert err <= tol, (
                f"{name}[{flat_idx}]: analytic {analytic:.10g} vs numeric "
                f"{numeric:.10g} (rel err {err:.3g} > {tol})"
            )
    return worst


def model_param_tensors(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {name: p for name, p in module.named_parameters()}
