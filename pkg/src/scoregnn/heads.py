"""Per-task classifiers and cross-task logit fusion."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .ingest import TaskSchema


class TaskHeads(nn.Module):
    """One two-layer perceptron per task, keyed by task name."""

    def __init__(self, schema: TaskSchema, in_dim: int = 128, hidden: int = 256, dropout: float = 0.0):
        super().__init__()
        self.names = schema.names
        self.dropout = dropout
        self.clf = nn.ModuleDict({
            t.name: nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Dropout(dropout),
                                  nn.Linear(hidden, t.n_classes))
            for t in schema
        })

    def forward(self, h: torch.Tensor) -> dict:
        return {name: self.clf[name](h) for name in self.names}


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError("attention dim must be divisible by the head count")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor):
        """``x`` is (batch, tokens, dim); returns output and (batch, heads, tokens, tokens) weights."""
        b, t, _ = x.shape

        def split(y):
            return y.view(b, t, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = F.softmax(scores, dim=-1)
        y = (weights @ v).transpose(1, 2).reshape(b, t, -1)
        return self.out(y), weights


class LogitFusion(nn.Module):
    """Project each task's logits to a shared width, let tasks attend to each
    other per note, then map each refined row back to its task's classes."""

    def __init__(self, schema: TaskSchema, dim: int = 128, heads: int = 4):
        super().__init__()
        self.names = schema.names
        self.proj = nn.ModuleDict({t.name: nn.Linear(t.n_classes, dim) for t in schema})
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm = nn.LayerNorm(dim)
        self.fusion = nn.ModuleDict({t.name: nn.Linear(dim, t.n_classes) for t in schema})

    def forward(self, z: dict, return_attention: bool = False):
        missing = [n for n in self.names if n not in z]
        if missing:
            raise KeyError(f"missing logits for tasks: {', '.join(missing)}")
        p = torch.stack([self.proj[n](z[n]) for n in self.names], dim=1)
        a, weights = self.attn(p)
        refined = self.norm(p + a)
        fused = {n: self.fusion[n](refined[:, i]) for i, n in enumerate(self.names)}
        return (fused, weights) if return_attention else fused


def predict_classes(logits, level: str = "note", onset_group=None) -> np.ndarray:
    """Argmax per note, or of the mean logits over each onset group.

    Ties go to the lower class index.
    """
    logits = logits.detach().cpu().numpy() if torch.is_tensor(logits) else np.asarray(logits, dtype=float)
    if level == "note":
        return np.argmax(logits, axis=1)
    if level != "onset":
        raise ValueError(f"unsupported level {level!r}")
    group = np.asarray(onset_group)
    _, inverse = np.unique(group, return_inverse=True)
    sums = np.zeros((inverse.max() + 1, logits.shape[1]))
    np.add.at(sums, inverse, logits)
    means = sums / np.bincount(inverse)[:, None]
    return np.argmax(means, axis=1)[inverse]
