"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]
    n_elements: int


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return 0.0
    return abs(analytic - numeric) / scale


def finite_difference_check(loss_fn, named_params, step: float = 1e-5,
                            floor: float = 1e-6,
                            max_per_param: int | None = None) -> GradCheckReport:
    """Compare d(loss)/d(param) against central finite differences.

    loss_fn must recompute the loss from the parameters' current values
    on every call (a full forward pass). Parameters are perturbed in
    place element by element; use float64 parameters for trustworthy
    results. With max_per_param set, only that many evenly spaced
    elements of each tensor are checked (every tensor still covered),
    which bounds the quadratic cost on larger models.
    """
    named_params = list(named_params)
    params = [p for _, p in named_params]
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for p in params]

    per_param: dict[str, float] = {}
    worst = ("", 0.0)
    n_elements = 0
    with torch.no_grad():
        for (name, p), grad in zip(named_params, analytic):
            flat = p.view(-1)
            grad_flat = grad.view(-1)
            worst_here = 0.0
            if max_per_param is None or flat.numel() <= max_per_param:
                indices = range(flat.numel())
            else:
                indices = torch.linspace(0, flat.numel() - 1, max_per_param).long().tolist()
            for i in indices:
                orig = flat[i].item()
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
                numeric = (up - down) / (2.0 * step)
                err = relative_error(float(grad_flat[i]), numeric, floor)
                worst_here = max(worst_here, err)
                n_elements += 1
            per_param[name] = worst_here
            if worst_here > worst[1]:
                worst = (name, worst_here)
    return GradCheckReport(max_rel_error=worst[1], worst_param=worst[0],
                           per_param=per_param, n_elements=n_elements)
