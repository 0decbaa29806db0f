"""Tests for the waveform-masking models and checkpoints."""

import numpy as np
import pytest

from voicelink.nn.losses import denoise_loss, sep_loss, t_neg_snr_loss
from voicelink.nn.models import (DivergenceError, Model, NetConfig, backward,
                                 forward, forward_denoise, forward_separate,
                                 load_checkpoint,
                                 mixture_consistency_projection,
                                 save_checkpoint)

SMALL = NetConfig(n_heads=3, n_filters=8, filter_len=8, stride=4, hidden=8,
                  n_blocks=2, block_kernel=3)


def test_config_rejects_single_head():
    with pytest.raises(ValueError):
        NetConfig(n_heads=1)


def test_config_rejects_unknown_frontend():
    with pytest.raises(ValueError):
        NetConfig(frontend="mel")


def test_zero_in_zero_out():
    model = Model.init(SMALL, 0)
    outs, _ = forward(model, np.zeros(200))
    for o in outs:
        assert np.allclose(o, 0.0, atol=1e-12)


def test_mixture_consistency_every_forward():
    model = Model.init(SMALL, 1)
    rng = np.random.default_rng(0)
    for n in (37, 100, 1000):
        x = rng.standard_normal(n) * 0.3
        outs, _ = forward(model, x)
        assert len(outs) == SMALL.n_heads
        assert all(len(o) == n for o in outs)
        assert np.max(np.abs(np.sum(outs, axis=0) - x)) <= 1e-6 * np.max(np.abs(x))


def test_consistency_projection_numpy():
    rng = np.random.default_rng(1)
    outs = [rng.standard_normal(50) for _ in range(4)]
    x = rng.standard_normal(50)
    proj = mixture_consistency_projection(outs, x)
    assert np.allclose(np.sum(proj, axis=0), x, atol=1e-12)


def test_forward_denoise_requires_two_heads():
    model = Model.init(SMALL, 2)
    with pytest.raises(ValueError):
        forward_denoise(model, np.zeros(100))


def test_forward_denoise_pair_sums_to_input():
    cfg = NetConfig(n_heads=2, n_filters=8, filter_len=8, stride=4, hidden=8,
                    n_blocks=2)
    model = Model.init(cfg, 3)
    x = np.random.default_rng(2).standard_normal(300) * 0.2
    (speech, noise), _ = forward_denoise(model, x)
    assert np.max(np.abs(speech + noise - x)) <= 1e-6 * np.max(np.abs(x))


def test_forward_separate_head_count():
    model = Model.init(SMALL, 4)
    outs, _ = forward_separate(model, np.random.default_rng(3).standard_normal(128))
    assert len(outs) == 3


def test_forward_rejects_2d():
    model = Model.init(SMALL, 0)
    with pytest.raises(ValueError):
        forward(model, np.zeros((2, 100)))


def test_nonfinite_params_raise():
    model = Model.init(SMALL, 0)
    model.params["head_b"] = model.params["head_b"] + np.nan
    with np.errstate(invalid="ignore"), pytest.raises(DivergenceError):
        forward(model, np.ones(100))


def test_stft_frontend_consistency():
    cfg = NetConfig(n_heads=2, hidden=8, n_blocks=1, frontend="stft",
                    stft_nfft=64, stft_hop=16)
    model = Model.init(cfg, 5)
    x = np.random.default_rng(4).standard_normal(400) * 0.3
    outs, _ = forward(model, x)
    assert np.max(np.abs(np.sum(outs, axis=0) - x)) <= 1e-6 * np.max(np.abs(x))


def test_backward_fills_all_params():
    model = Model.init(SMALL, 6)
    x = np.random.default_rng(5).standard_normal(200) * 0.3
    _, cache = forward(model, x, requires_grad=True)
    loss = t_neg_snr_loss(cache.outputs[0], 0.5 * x)
    grads = backward(loss, cache)
    assert set(grads) == set(model.params)
    for k, g in grads.items():
        assert g.shape == model.params[k].shape
        assert np.all(np.isfinite(g))


def test_param_count_stable():
    model = Model.init(NetConfig(), 0)
    assert model.n_params() == 57984


def test_copy_is_deep():
    model = Model.init(SMALL, 7)
    clone = model.copy()
    clone.params["head_b"][0] = 99.0
    assert model.params["head_b"][0] != 99.0


def test_checkpoint_round_trip(tmp_path):
    model = Model.init(SMALL, 8)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.cfg == model.cfg
    for k in model.params:
        # float32 storage: round trip through single precision.
        assert np.allclose(back.params[k], model.params[k], atol=1e-6)


def test_checkpoint_rejects_corruption(tmp_path):
    model = Model.init(SMALL, 9)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 50)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_sep_loss_picks_best_assignment():
    rng = np.random.default_rng(6)
    refs = [rng.standard_normal(100), rng.standard_normal(100)]
    from voicelink.nn.tensor import Tensor
    outs = [Tensor(refs[1] + 0.01 * rng.standard_normal(100)),
            Tensor(refs[0] + 0.01 * rng.standard_normal(100)),
            Tensor(0.001 * rng.standard_normal(100))]
    loss = sep_loss(outs, refs)
    # Crossed assignment is near the cap for both pairs.
    assert float(loss.data) < -40.0


def test_denoise_loss_fixed_pairing():
    rng = np.random.default_rng(7)
    from voicelink.nn.tensor import Tensor
    c, n = rng.standard_normal(80), rng.standard_normal(80)
    pairs = [(Tensor(c), Tensor(n))]
    loss = denoise_loss(pairs, [(c, n)])
    assert float(loss.data) == pytest.approx(-50.0)
