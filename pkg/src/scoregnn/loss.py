"""Masked per-task cross-entropy and the uncertainty-weighted multi-task total."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def task_ce(logits: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over mask-true rows; exactly 0 when none are valid.

    Mask-false rows are never read, so their logits cannot influence the value
    or its gradient.
    """
    mask = mask.bool()
    if not bool(mask.any()):
        return logits[:0].sum()  # exact 0, still attached to the graph
    chosen = labels[mask]
    if bool((chosen < 0).any()) or bool((chosen >= logits.shape[1]).any()):
        raise ValueError(f"label index outside [0, {logits.shape[1]}) under a true mask")
    return F.cross_entropy(logits[mask], chosen)


def total_loss(task_losses, log_sigma2: torch.Tensor) -> torch.Tensor:
    """mean_t [ L_t / (2 sigma_t^2) + log(1 + sigma_t^2) ] with sigma_t^2 = exp(s_t)."""
    losses = torch.stack(list(task_losses)) if not torch.is_tensor(task_losses) else task_losses
    if losses.numel() == 0:
        raise ValueError("need at least one task")
    weighted = 0.5 * losses * torch.exp(-log_sigma2) + F.softplus(log_sigma2)
    return weighted.mean()


class UncertaintyWeighting(nn.Module):
    """Learnable log-variances s_t, one per task, initialised at 0 (sigma^2 = 1)."""

    def __init__(self, n_tasks: int):
        super().__init__()
        self.log_sigma2 = nn.Parameter(torch.zeros(n_tasks))

    @property
    def sigma2(self) -> torch.Tensor:
        return torch.exp(self.log_sigma2)

    def forward(self, task_losses) -> torch.Tensor:
        return total_loss(task_losses, self.log_sigma2)
