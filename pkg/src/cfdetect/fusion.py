"""Shared base feature extractor: pooled embeddings + convolved attention."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import Encoder, ModelConfig, last3_concat

LN_EPS = 1e-5


def pool(emb: torch.Tensor, true_len) -> torch.Tensor:
    """Mean over the first ``true_len`` rows of ``emb``.

    Accepts a single (T, W) matrix with an int length or a (B, T, W) batch
    with a length tensor.
    """
    single = emb.dim() == 2
    if single:
        emb = emb[None]
    true_len = torch.as_tensor(true_len, device=emb.device).reshape(-1)
    if (true_len < 1).any():
        raise ValueError("true_len must be >= 1")
    if (true_len > emb.shape[1]).any():
        raise ValueError(f"true_len exceeds the {emb.shape[1]} available rows")
    mask = (torch.arange(emb.shape[1], device=emb.device)[None, :] < true_len[:, None]).to(emb.dtype)
    out = (emb * mask[..., None]).sum(1) / true_len.to(emb.dtype)[:, None]
    return out[0] if single else out


class BatchNorm2dFallback(nn.BatchNorm2d):
    """BatchNorm that uses running statistics for single-sample batches."""

    def forward(self, x):
        if self.training and x.shape[0] == 1:
            return F.batch_norm(
                x, self.running_mean, self.running_var, self.weight, self.bias,
                False, 0.0, self.eps,
            )
        return super().forward(x)


def conv_block(cin: int, cout: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1),
        BatchNorm2dFallback(cout),
        nn.ReLU(),
        nn.Dropout(dropout),
    )


def linear_block(cin: int, cout: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(nn.Linear(cin, cout), nn.ReLU(), nn.Dropout(dropout))


def conv_out_size(size: int, blocks: int) -> int:
    for _ in range(blocks):
        size = (size - 1) // 2 + 1
    return size


class AttentionEmbedder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.size = cfg.max_len
        chans = (3 * cfg.num_heads, *cfg.conv_channels)
        self.convs = nn.Sequential(
            *(conv_block(a, b, cfg.dropout) for a, b in zip(chans, chans[1:]))
        )
        side = conv_out_size(cfg.max_len, len(cfg.conv_channels))
        self.proj = linear_block(chans[-1] * side * side, cfg.attention_embed_dim, cfg.dropout)

    def forward(self, att: torch.Tensor) -> torch.Tensor:
        if att.shape[-1] != att.shape[-2]:
            raise ValueError(f"attention token axes must be square, got {tuple(att.shape[-2:])}")
        if att.shape[-1] != self.size:
            raise ValueError(f"attention must be padded to {self.size}x{self.size}")
        return self.proj(self.convs(att).flatten(1))


class FusionBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.pooled_dim = 3 * cfg.model_dim
        self.attn_dim = cfg.attention_embed_dim
        self.norm = nn.LayerNorm(self.pooled_dim + self.attn_dim, eps=LN_EPS)
        self.proj = linear_block(self.pooled_dim + self.attn_dim, cfg.feature_dim, cfg.dropout)

    def forward(self, pooled: torch.Tensor, attn: torch.Tensor) -> torch.Tensor:
        if pooled.shape[-1] != self.pooled_dim or attn.shape[-1] != self.attn_dim:
            raise ValueError(
                f"expected widths {self.pooled_dim} + {self.attn_dim}, "
                f"got {pooled.shape[-1]} + {attn.shape[-1]}"
            )
        return self.proj(self.norm(torch.cat([pooled, attn], dim=-1)))


class BaseModel(nn.Module):
    """Encoder plus fusion; maps token ids to the shared feature embedding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.attention_embedder = AttentionEmbedder(cfg)
        self.fusion = FusionBlock(cfg)

    def forward(self, ids, true_len, return_encoder_output: bool = False):
        out = self.encoder(ids, true_len)
        emb, att = last3_concat(out)
        feats = self.fusion(pool(emb, out.true_len), self.attention_embedder(att))
        return (feats, out) if return_encoder_output else feats


def layer_norm(x: torch.Tensor, weight=None, bias=None, eps: float = LN_EPS) -> torch.Tensor:
    """Functional layer norm over the last axis, same rule as FusionBlock.norm."""
    return F.layer_norm(x, x.shape[-1:], weight, bias, eps)
