"""Small pre-norm transformer encoder that exposes every layer's attention."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import torch
from torch import nn


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 8192
    num_layers: int = 4
    num_heads: int = 4
    model_dim: int = 128
    ffn_dim: int = 256
    max_len: int = 64
    dropout: float = 0.1
    conv_channels: tuple[int, ...] = (16, 32)
    attention_embed_dim: int = 64
    feature_dim: int = 128

    def __post_init__(self):
        if self.num_layers < 3:
            raise ConfigError("num_layers must be >= 3 for the last-three-layer concatenation")
        if self.num_heads < 1 or self.model_dim % self.num_heads:
            raise ConfigError("model_dim must be divisible by num_heads")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover the reserved ids")
        if len(self.conv_channels) < 1:
            raise ConfigError("at least one conv block is required")
        for name in ("ffn_dim", "attention_embed_dim", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "conv_channels" in d:
            d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


class EncoderOutput(NamedTuple):
    embeddings: list[torch.Tensor]  # per layer, (B, T, d)
    attentions: list[torch.Tensor]  # per layer, (B, H, T, T)
    true_len: torch.Tensor  # (B,)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask, query_mask):
        B, T, D = x.shape
        q, k, v = self.qkv(x).view(B, T, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        # padded query rows are zeroed so they carry no mass downstream
        weights = torch.softmax(scores, dim=-1) * query_mask[:, None, :, None]
        ctx = self.drop(weights) @ v
        return self.out(ctx.transpose(1, 2).reshape(B, T, D)), weights


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.model_dim)
        self.attn = SelfAttention(cfg.model_dim, cfg.num_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.model_dim)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.model_dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.model_dim),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask, query_mask):
        h, weights = self.attn(self.norm1(x), key_mask, query_mask)
        x = x + self.drop(h)
        x = x + self.drop(self.ffn(self.norm2(x)))
        return x, weights


def padding_mask(true_len: torch.Tensor, length: int) -> torch.Tensor:
    return torch.arange(length, device=true_len.device)[None, :] < true_len[:, None]


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab_size, cfg.model_dim)
        self.pos = nn.Embedding(cfg.max_len, cfg.model_dim)
        self.drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))

    def forward(self, ids: torch.Tensor, true_len: torch.Tensor) -> EncoderOutput:
        if ids.dim() != 2 or ids.shape[1] != self.cfg.max_len:
            raise ValueError(f"ids must have shape (B, {self.cfg.max_len}), got {tuple(ids.shape)}")
        true_len = torch.as_tensor(true_len, device=ids.device).reshape(-1)
        if true_len.shape[0] != ids.shape[0]:
            raise ValueError("one true_len per sequence is required")
        if (true_len < 1).any() or (true_len > ids.shape[1]).any():
            raise ValueError("true_len must lie in [1, max_len]")
        mask = padding_mask(true_len, ids.shape[1])
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.drop(self.tok(ids) + self.pos(positions)[None])
        embeddings, attentions = [], []
        for layer in self.layers:
            x, weights = layer(x, mask, mask.to(x.dtype))
            embeddings.append(x)
            attentions.append(weights)
        return EncoderOutput(embeddings, attentions, true_len)


def encode(encoder: Encoder, ids, true_len, mode: str = "eval") -> EncoderOutput:
    """Run ``encoder`` on a single sequence or a batch in the given mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    for name, p in encoder.named_parameters():
        if not torch.isfinite(p).all():
            raise FloatingPointError(f"non-finite values in parameter {name}")
    ids = torch.as_tensor(ids)
    if ids.dim() == 1:
        ids = ids[None]
    encoder.train(mode == "train")
    return encoder(ids, torch.as_tensor(true_len).reshape(-1))


def last3_concat(out: EncoderOutput) -> tuple[torch.Tensor, torch.Tensor]:
    """Concatenate the final three layers: embeddings on features, attention on heads."""
    if len(out.embeddings) < 3:
        raise ConfigError("need at least three layers")
    emb = torch.cat(out.embeddings[-3:], dim=-1)
    att = torch.cat(out.attentions[-3:], dim=-3)
    return emb, att
