"""Losses, optimiser and the two-stage training protocol.

Stage 1 trains the base model with the classification head under binary
cross entropy. Stage 2 swaps in the span regressor and fine-tunes every
parameter under Smooth L1 on length-normalised span targets.
"""
from __future__ import annotations

import logging
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import torch

from .corpus import SpanQuad, Statement, Vocab, encode_ids, tokenize
from .encoder import ConfigError, ModelConfig
from .heads import DETECT, PROB_EPS, SPANS, CounterfactualModel, classify
from .metrics import binary_prf
from .spans import char_error, denormalize, normalize

log = logging.getLogger(__name__)

BCE_EPS = PROB_EPS
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    epochs: Optional[int] = None  # None -> 50 for stage 1, 100 for stage 2
    seed: int = 0
    patience: Optional[int] = None
    threshold: float = 0.5
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")

    def epochs_for(self, stage: str) -> int:
        if self.epochs is not None:
            return self.epochs
        return 50 if stage == "stage1" else 100

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


# -- losses -----------------------------------------------------------------

def _float(x) -> torch.Tensor:
    x = torch.as_tensor(x)
    return x if x.is_floating_point() else x.to(torch.get_default_dtype())


def bce_loss(p, y) -> torch.Tensor:
    p = _float(p).clamp(BCE_EPS, 1 - BCE_EPS)
    y = torch.as_tensor(y, dtype=p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def smooth_l1(pred, tgt) -> torch.Tensor:
    pred = _float(pred)
    x = pred - torch.as_tensor(tgt, dtype=pred.dtype)
    ax = x.abs()
    return torch.where(ax < 1, 0.5 * x * x, ax - 0.5).mean()


# -- optimiser --------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def decays(name: str, p: torch.Tensor) -> bool:
    """Weight decay applies to matrices and kernels, not to biases or gains."""
    return p.dim() > 1


@torch.no_grad()
def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> AdamState:
    """One in-place Adam update with decoupled weight decay."""
    b1, b2 = cfg.betas
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient for parameter {name}")
    state.step += 1
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if cfg.weight_decay and decays(name, p):
            p.mul_(1 - cfg.lr * cfg.weight_decay)
        m = state.exp_avg.setdefault(name, torch.zeros_like(p))
        v = state.exp_avg_sq.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps))
    return state


class AdamW:
    """Thin stateful wrapper around :func:`adam_step` for a module."""

    def __init__(self, module: torch.nn.Module, cfg: TrainConfig):
        self.module = module
        self.cfg = cfg
        self.state = AdamState()

    def step(self) -> None:
        params = dict(self.module.named_parameters())
        grads = {n: p.grad for n, p in params.items()}
        adam_step(params, grads, self.state, self.cfg)

    def zero_grad(self) -> None:
        self.module.zero_grad(set_to_none=True)


# -- checkpoints ------------------------------------------------------------

@dataclass
class Checkpoint:
    state_dict: dict
    model_config: ModelConfig
    train_config: TrainConfig
    stage: str
    vocab: list[str]
    history: list[dict] = field(default_factory=list)

    @property
    def task(self) -> str:
        return DETECT if self.stage == "stage1" else SPANS

    def build_model(self) -> CounterfactualModel:
        model = CounterfactualModel(self.model_config, self.task)
        try:
            model.load_state_dict(self.state_dict, strict=True)
        except RuntimeError as exc:
            raise CheckpointError(f"checkpoint does not match its configuration: {exc}") from None
        return model

    def save(self, path) -> None:
        payload = {
            "version": CHECKPOINT_VERSION,
            "stage": self.stage,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "vocab": list(self.vocab),
            "history": self.history,
            "state_dict": {k: v.detach().cpu() for k, v in self.state_dict.items()},
        }
        torch.save(payload, Path(path))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            payload = torch.load(Path(path), map_location="cpu", weights_only=True)
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise CheckpointError(f"{path}: unreadable checkpoint: {exc}") from None
        if payload.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
        if payload.get("stage") not in ("stage1", "stage2"):
            raise CheckpointError(f"{path}: bad stage tag {payload.get('stage')!r}")
        ckpt = cls(
            state_dict=payload["state_dict"],
            model_config=ModelConfig.from_dict(payload["model_config"]),
            train_config=TrainConfig.from_dict(payload["train_config"]),
            stage=payload["stage"],
            vocab=payload["vocab"],
            history=payload["history"],
        )
        ckpt.build_model()  # validates shapes and the head/stage pairing
        return ckpt


# -- batching and inference -------------------------------------------------

def encode_statements(statements: Sequence[Statement], vocab: Vocab, max_len: int):
    ids, lens = [], []
    for s in statements:
        row, n = encode_ids(tokenize(s.text), vocab, max_len)
        ids.append(row)
        lens.append(n)
    return torch.tensor(ids, dtype=torch.long), torch.tensor(lens, dtype=torch.long)


@torch.no_grad()
def predict_outputs(model, vocab: Vocab, statements, batch_size: int = 64) -> torch.Tensor:
    """Head outputs in eval mode: probabilities (N,) or normalised spans (N, 4)."""
    model.eval()
    ids, lens = encode_statements(statements, vocab, model.cfg.max_len)
    outs = [model(ids[i:i + batch_size], lens[i:i + batch_size])
            for i in range(0, len(statements), batch_size)]
    return torch.cat(outs)


def predict_spans(model, vocab: Vocab, statements, batch_size: int = 64) -> list[SpanQuad]:
    out = predict_outputs(model, vocab, statements, batch_size)
    return [denormalize(row.tolist(), s.length) for row, s in zip(out, statements)]


def _batches(n: int, batch_size: int, rng: random.Random):
    order = list(range(n))
    rng.shuffle(order)
    for i in range(0, n, batch_size):
        yield torch.tensor(order[i:i + batch_size])


def _fit(model, ids, lens, targets, loss_fn, evaluate, better, stage, tcfg, vocab, mcfg):
    """Shared epoch loop; returns the checkpoint of the best dev epoch."""
    opt = AdamW(model, tcfg)
    rng = random.Random(tcfg.seed)
    history, best, best_epoch = [], None, None
    for epoch in range(1, tcfg.epochs_for(stage) + 1):
        model.train()
        total, count = 0.0, 0
        for step, idx in enumerate(_batches(len(ids), tcfg.batch_size, rng)):
            loss = loss_fn(model(ids[idx], lens[idx]), targets[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"{stage}: non-finite loss {loss.item()} at epoch {epoch}, step {step}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        record = {"epoch": epoch, "train_loss": total / count, **evaluate(model)}
        history.append(record)
        log.info("%s epoch %d: %s", stage, epoch, record)
        if best is None or better(record, best):
            best, best_epoch = record, epoch
            state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        elif tcfg.patience is not None and epoch - best_epoch >= tcfg.patience:
            break
    return Checkpoint(state, mcfg, tcfg, stage, list(vocab.itos), history)


def train_stage1(train, dev, mcfg: ModelConfig, tcfg: TrainConfig,
                 vocab: Optional[Vocab] = None) -> Checkpoint:
    """Train base + classifier; keep the epoch with the best dev F1."""
    torch.manual_seed(tcfg.seed)
    if vocab is None:
        vocab = Vocab.build((s.text for s, _ in train), max_size=mcfg.vocab_size)
    if len(vocab) > mcfg.vocab_size:
        raise ConfigError(f"vocabulary of {len(vocab)} exceeds vocab_size {mcfg.vocab_size}")
    model = CounterfactualModel(mcfg, DETECT)
    ids, lens = encode_statements([s for s, _ in train], vocab, mcfg.max_len)
    y = torch.tensor([float(lab) for _, lab in train])
    dev_stmts, dev_y = [s for s, _ in dev], [lab for _, lab in dev]

    def evaluate(m):
        probs = predict_outputs(m, vocab, dev_stmts, tcfg.eval_batch_size)
        preds = classify(probs, tcfg.threshold).tolist()
        metrics = binary_prf(zip(preds, dev_y))
        return {"dev_loss": bce_loss(probs, dev_y).item(), "dev_f1": metrics.f1,
                "dev_precision": metrics.precision, "dev_recall": metrics.recall}

    return _fit(model, ids, lens, y, bce_loss, evaluate,
                lambda r, b: r["dev_f1"] > b["dev_f1"], "stage1", tcfg, vocab, mcfg)


def span_targets(records) -> torch.Tensor:
    return torch.tensor([normalize(q, s.length) for s, q in records])


def train_stage2(ckpt: Optional[Checkpoint], train, dev, mcfg: ModelConfig, tcfg: TrainConfig,
                 cold_start: bool = False, on_init=None) -> Checkpoint:
    """Fine-tune the stage-1 base with a fresh span regressor.

    ``on_init`` is called with the model right after the head swap, before
    any update; it is how callers observe the transferred parameters.
    """
    torch.manual_seed(tcfg.seed)
    if ckpt is None:
        if not cold_start:
            raise CheckpointError(
                "stage 2 fine-tunes a stage-1 checkpoint; pass one or request a cold start"
            )
        vocab = Vocab.build((s.text for s, _ in train), max_size=mcfg.vocab_size)
        model = CounterfactualModel(mcfg, SPANS)
    else:
        if ckpt.stage != "stage1":
            raise CheckpointError(f"stage 2 needs a stage1 checkpoint, got {ckpt.stage}")
        if ckpt.model_config != mcfg:
            raise CheckpointError(
                f"model config mismatch: checkpoint {ckpt.model_config}, requested {mcfg}"
            )
        vocab = Vocab(list(ckpt.vocab))
        model = ckpt.build_model()
        model.replace_head(SPANS)
    if on_init is not None:
        on_init(model)
    ids, lens = encode_statements([s for s, _ in train], vocab, mcfg.max_len)
    targets = span_targets(train)
    dev_stmts = [s for s, _ in dev]
    dev_targets = span_targets(dev)

    def evaluate(m):
        out = predict_outputs(m, vocab, dev_stmts, tcfg.eval_batch_size)
        decoded = [denormalize(row.tolist(), s.length) for row, s in zip(out, dev_stmts)]
        err = sum(char_error(p, q) for p, (_, q) in zip(decoded, dev)) / len(dev)
        return {"dev_loss": smooth_l1(out, dev_targets).item(), "dev_char_error": err}

    return _fit(model, ids, lens, targets, smooth_l1, evaluate,
                lambda r, b: r["dev_loss"] < b["dev_loss"], "stage2", tcfg, vocab, mcfg)


def first_epoch_reaching(history: list[dict], key: str, target: float, higher=True):
    for rec in history:
        if (rec[key] >= target) if higher else (rec[key] <= target):
            return rec["epoch"]
    return None
