import math

import pytest
import torch
from hypothesis import given, strategies as st

from cfdetect import synthetic
from cfdetect.heads import base_digest
from cfdetect.training import (
    AdamState, Checkpoint, CheckpointError, TrainConfig, TrainingDiverged, adam_step, bce_loss,
    smooth_l1, train_stage1, train_stage2,
)


def test_bce_values():
    assert bce_loss(0.5, 1).item() == pytest.approx(math.log(2), abs=1e-4)
    assert bce_loss(torch.tensor(1 - 1e-7, dtype=torch.float64), 1).item() == pytest.approx(0, abs=1e-6)
    assert bce_loss(torch.tensor(1e-7, dtype=torch.float64), 1).item() == pytest.approx(-math.log(1e-7), abs=1e-3)
    assert bce_loss(torch.tensor(0.0, dtype=torch.float64), 1).item() == pytest.approx(16.118, abs=1e-3)


def test_smooth_l1_values():
    z = torch.zeros(4, dtype=torch.float64)
    assert smooth_l1(z, z).item() == 0.0
    assert smooth_l1(torch.tensor([0.5, 0, 0, 0], dtype=torch.float64), z).item() == 0.03125
    assert smooth_l1(torch.tensor([0, 0, 2.0, 0], dtype=torch.float64), z).item() == 0.375


def test_smooth_l1_c1_at_one():
    for x0 in (1.0, -1.0):
        x = torch.tensor([x0 - 1e-9, x0 + 1e-9], dtype=torch.float64, requires_grad=True)
        vals = [smooth_l1(torch.stack([xi, *[torch.zeros((), dtype=torch.float64)] * 3]),
                          torch.zeros(4, dtype=torch.float64)) * 4 for xi in x]
        assert vals[0].item() == pytest.approx(0.5, abs=1e-8)
        assert vals[1].item() == pytest.approx(0.5, abs=1e-8)
        g = [torch.autograd.grad(v, x)[0][i].item() for i, v in enumerate(vals)]
        assert g[0] == pytest.approx(math.copysign(1, x0), abs=1e-8)
        assert g[1] == pytest.approx(math.copysign(1, x0), abs=1e-8)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4),
       st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_losses_nonnegative(a, b):
    a, b = torch.tensor(a, dtype=torch.float64), torch.tensor(b, dtype=torch.float64)
    assert smooth_l1(a, b).item() >= 0
    if torch.equal(a, b):
        assert smooth_l1(a, b).item() == 0
    elif (a - b).abs().max() > 1e-100:  # 0.5*d**2 underflows for subnormal d
        assert smooth_l1(a, b).item() > 0
    p = torch.sigmoid(a)
    assert bce_loss(p, (b > 0).double()).item() >= 0


def test_adam_examples():
    cfg = TrainConfig(lr=0.1, weight_decay=0.0)
    p = {"w": torch.tensor([1.0], dtype=torch.float64)}
    state = adam_step(p, {"w": torch.tensor([1.0], dtype=torch.float64)}, AdamState(), cfg)
    # m_hat = g, v_hat = g^2 on the first step
    assert p["w"].item() == pytest.approx(1.0 - 0.1 * 1.0 / (1.0 + 1e-8), abs=1e-12)
    assert state.exp_avg["w"].item() / (1 - 0.9) == pytest.approx(1.0)
    q = {"w": torch.tensor([3.0, -2.0])}
    adam_step(q, {"w": torch.zeros(2)}, AdamState(), cfg)
    assert q["w"].tolist() == [3.0, -2.0]


def test_adam_matches_torch_adamw():
    torch.manual_seed(0)
    w = torch.randn(5, 3, dtype=torch.float64)
    b = torch.randn(3, dtype=torch.float64)
    ref_w, ref_b = w.clone().requires_grad_(), b.clone().requires_grad_()
    cfg = TrainConfig(lr=0.01, weight_decay=0.1)
    opt = torch.optim.AdamW([{"params": [ref_w], "weight_decay": 0.1},
                             {"params": [ref_b], "weight_decay": 0.0}],
                            lr=0.01, betas=cfg.betas, eps=cfg.eps)
    params, state = {"w": w, "b": b}, AdamState()
    for step in range(20):
        gw, gb = torch.randn(5, 3, dtype=torch.float64), torch.randn(3, dtype=torch.float64)
        ref_w.grad, ref_b.grad = gw.clone(), gb.clone()
        opt.step()
        adam_step(params, {"w": gw, "b": gb}, state, cfg)
        torch.testing.assert_close(w, ref_w.detach(), atol=1e-12, rtol=0)
        torch.testing.assert_close(b, ref_b.detach(), atol=1e-12, rtol=0)


def test_adam_rejects_nonfinite():
    with pytest.raises(TrainingDiverged, match="layer.w"):
        adam_step({"layer.w": torch.zeros(2)}, {"layer.w": torch.tensor([1.0, math.inf])},
                  AdamState(), TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(betas=(0.9, 1.0))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert TrainConfig().epochs_for("stage1") == 50
    assert TrainConfig().epochs_for("stage2") == 100


@pytest.fixture(scope="module")
def stage1(request):
    from cfdetect.encoder import ModelConfig
    cfg = ModelConfig(vocab_size=64, num_layers=3, num_heads=2, model_dim=16, ffn_dim=32,
                      max_len=16, attention_embed_dim=8, feature_dim=16)
    data = synthetic.detection_corpus(8, seed=1)
    tcfg = TrainConfig(epochs=3, batch_size=4, seed=5, lr=1e-3)
    return cfg, data, tcfg, train_stage1(data, data, cfg, tcfg)


def test_stage1_checkpoint(stage1):
    cfg, data, tcfg, ckpt = stage1
    assert ckpt.stage == "stage1" and ckpt.task == "detect"
    assert "head.linear.weight" in ckpt.state_dict
    assert ckpt.state_dict["head.linear.weight"].shape == (1, 16)
    assert [r["epoch"] for r in ckpt.history] == [1, 2, 3]


def test_stage1_deterministic(stage1):
    cfg, data, tcfg, ckpt = stage1
    again = train_stage1(data, data, cfg, tcfg)
    assert [r["train_loss"] for r in again.history] == [r["train_loss"] for r in ckpt.history]


def test_checkpoint_round_trip(stage1, tmp_path):
    cfg, data, tcfg, ckpt = stage1
    ckpt.save(tmp_path / "c.ckpt")
    loaded = Checkpoint.load(tmp_path / "c.ckpt")
    assert loaded.model_config == cfg and loaded.train_config == tcfg
    assert loaded.vocab == ckpt.vocab and loaded.history == ckpt.history
    assert base_digest(loaded.build_model()) == base_digest(ckpt.build_model())


def test_checkpoint_rejects_bad_files(stage1, tmp_path):
    cfg, data, tcfg, ckpt = stage1
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "junk.ckpt")
    bad = Checkpoint(dict(ckpt.state_dict), cfg, tcfg, "stage2", ckpt.vocab, [])
    bad.save(tmp_path / "bad.ckpt")
    with pytest.raises(CheckpointError, match="does not match"):
        Checkpoint.load(tmp_path / "bad.ckpt")


def test_stage2_transfer(stage1):
    cfg, _, tcfg, ckpt = stage1
    spans = synthetic.span_corpus(4, seed=2)
    seen = {}
    out = train_stage2(ckpt, spans, spans, cfg, tcfg,
                       on_init=lambda m: seen.setdefault("digest", base_digest(m)))
    assert seen["digest"] == base_digest(ckpt.build_model())
    assert out.stage == "stage2" and out.state_dict["head.linear.weight"].shape == (4, 16)
    assert all("dev_char_error" in r for r in out.history)


def test_stage2_guards(stage1):
    cfg, _, tcfg, ckpt = stage1
    spans = synthetic.span_corpus(4, seed=2)
    with pytest.raises(CheckpointError, match="stage-1"):
        train_stage2(None, spans, spans, cfg, tcfg)
    from dataclasses import replace
    with pytest.raises(CheckpointError, match="mismatch"):
        train_stage2(ckpt, spans, spans, replace(cfg, feature_dim=8), tcfg)
    cold = train_stage2(None, spans, spans, cfg, replace(tcfg, epochs=1), cold_start=True)
    assert cold.stage == "stage2"
    with pytest.raises(CheckpointError, match="stage1"):
        train_stage2(cold, spans, spans, cfg, tcfg)


def test_divergence_aborts(stage1):
    cfg, data, tcfg, _ = stage1
    from dataclasses import replace
    with pytest.raises(TrainingDiverged):
        train_stage1(data, data, cfg, replace(tcfg, lr=1e30, epochs=2))
