"""Task modules consuming the shared feature embedding."""
from __future__ import annotations

import hashlib

import torch
from torch import nn

from .encoder import ModelConfig
from .fusion import BaseModel

DETECT, SPANS = "detect", "spans"
PROB_EPS = 1e-7
STAGE_FOR_TASK = {DETECT: "stage1", SPANS: "stage2"}


class ClassificationHead(nn.Module):
    task = DETECT

    def __init__(self, feature_dim: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.linear = nn.Linear(feature_dim, 1)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.shape[-1] != self.feature_dim:
            raise ValueError(f"expected feature width {self.feature_dim}, got {f.shape[-1]}")
        # float32 sigmoid rounds to exactly 0 or 1 for |logit| > ~17
        return torch.sigmoid(self.linear(f).squeeze(-1)).clamp(PROB_EPS, 1 - PROB_EPS)


class SpanHead(nn.Module):
    task = SPANS

    def __init__(self, feature_dim: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.linear = nn.Linear(feature_dim, 4)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.shape[-1] != self.feature_dim:
            raise ValueError(f"expected feature width {self.feature_dim}, got {f.shape[-1]}")
        return torch.relu(self.linear(f))


HEADS = {DETECT: ClassificationHead, SPANS: SpanHead}


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    """Truncated normal weights, zero biases, unit norm gains."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.Embedding)):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
            if getattr(m, "bias", None) is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.LayerNorm, nn.BatchNorm2d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class CounterfactualModel(nn.Module):
    def __init__(self, cfg: ModelConfig, task: str = DETECT):
        super().__init__()
        self.cfg = cfg
        self.base = BaseModel(cfg)
        self.head = HEADS[task](cfg.feature_dim)
        init_weights(self)

    @property
    def task(self) -> str:
        return self.head.task

    def replace_head(self, task: str) -> None:
        """Attach a freshly initialised head; base parameters are untouched."""
        head = HEADS[task](self.cfg.feature_dim)
        init_weights(head)
        self.head = head.to(next(self.base.parameters()).dtype)

    def forward(self, ids, true_len):
        return self.head(self.base(ids, true_len))


def classify(probs: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    return (probs >= threshold).long()


def base_digest(model: CounterfactualModel) -> str:
    """SHA-256 over the base parameters and buffers in name order."""
    h = hashlib.sha256()
    for name, t in sorted(model.base.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
