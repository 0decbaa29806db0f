"""Tests for the self-supervised training procedures."""

import itertools

import numpy as np
import pytest

from voicelink.audio import AudioClip
from voicelink.nn.losses import t_neg_snr_loss
from voicelink.nn.models import Model, NetConfig
from voicelink.nn.optim import AdamState
from voicelink.nn.tensor import Tensor
from voicelink import train as T

SMALL = NetConfig(n_heads=4, n_filters=8, filter_len=8, stride=4, hidden=8,
                  n_blocks=2, block_kernel=3)
DEN = NetConfig(n_heads=2, n_filters=8, filter_len=8, stride=4, hidden=8,
                n_blocks=2, block_kernel=3)


def _pair(cfg=SMALL, lam=0.99, ema_every=1):
    return T.MainTargetPair(main=Model.init(cfg, 1), target=Model.init(cfg, 2),
                            lam=lam, ema_every=ema_every)


def test_pair_requires_same_topology():
    with pytest.raises(ValueError):
        T.MainTargetPair(main=Model.init(SMALL, 0), target=Model.init(DEN, 0))


def test_pair_rejects_bad_lambda():
    with pytest.raises(ValueError):
        _pair(lam=1.5)


def test_make_mom_sums_and_pads():
    a = AudioClip(np.ones(10), 16000)
    b = AudioClip(np.ones(6), 16000)
    mom = T.make_mom(a, b)
    assert np.allclose(mom.samples[:6], 2.0)
    assert np.allclose(mom.samples[6:], 1.0)


def test_make_mom_rate_mismatch():
    with pytest.raises(ValueError):
        T.make_mom(AudioClip(np.ones(4), 16000), AudioClip(np.ones(4), 8000))


def test_remix_weights_in_range():
    rng = np.random.default_rng(0)
    a, b = np.ones(10), np.ones(10)
    for _ in range(50):
        out, (wa, wb) = T.remix_selected(a, b, rng)
        assert 0.5 <= wa <= 1.0 and 0.5 <= wb <= 1.0
        assert np.allclose(out, wa + wb)


def test_ema_identity_and_copy():
    main = {"w": np.array([2.0, 4.0])}
    target = {"w": np.array([10.0, 8.0])}
    assert np.array_equal(T.ema_update(main, target, 1.0)["w"], main["w"])
    assert np.array_equal(T.ema_update(main, target, 0.0)["w"], target["w"])


def test_ema_midpoint_exact():
    out = T.ema_update({"w": np.array([2.0])}, {"w": np.array([4.0])}, 0.5)
    assert out["w"][0] == 3.0


def test_ema_rejects_mismatched_sets():
    with pytest.raises(ValueError):
        T.ema_update({"a": np.zeros(2)}, {"b": np.zeros(2)}, 0.5)


def test_derangement_no_fixed_points():
    rng = np.random.default_rng(1)
    for n in (2, 3, 4, 7):
        for _ in range(20):
            p = T.sample_derangement(n, rng)
            assert sorted(p) == list(range(n))
            assert not np.any(p == np.arange(n))


def test_derangement_singleton_identity():
    assert T.sample_derangement(1, np.random.default_rng(0))[0] == 0


def test_derangement_covers_all_for_n3():
    # All 2 derangements of size 3 appear over repeated draws.
    rng = np.random.default_rng(2)
    seen = {tuple(T.sample_derangement(3, rng)) for _ in range(100)}
    assert seen == {(1, 2, 0), (2, 0, 1)}


def test_remix_batch_conservation():
    rng = np.random.default_rng(3)
    speech = [rng.standard_normal(20) for _ in range(4)]
    noise = [rng.standard_normal(20) for _ in range(4)]
    p = T.sample_derangement(4, rng)
    remixes = T.denoise_remix_batch(speech, noise, p)
    # Exact per-item construction implies exact batch-sum conservation.
    for i, s in enumerate(remixes):
        assert np.array_equal(s, speech[i] + noise[p[i]])
    total = sum(np.sum(s) for s in speech) + sum(np.sum(n) for n in noise)
    assert np.sum(remixes) == pytest.approx(total, rel=1e-12)


def test_remix_batch_rejects_non_permutation():
    xs = [np.zeros(5)] * 3
    with pytest.raises(ValueError):
        T.denoise_remix_batch(xs, xs, np.array([0, 0, 1]))


def test_count_sources_threshold():
    mixture = np.ones(100)
    strong = 0.5 * np.ones(100)
    weak = 0.001 * np.ones(100)   # -60 dB relative
    n, active = T.count_sources([strong, weak, np.zeros(100)], mixture)
    assert n == 1
    assert active == [0]


def test_count_sources_zero_mixture():
    n, active = T.count_sources([np.ones(10)], np.zeros(10))
    assert n == 0 and active == []


def test_sep_loss_matches_exhaustive_search():
    # Oracle: brute-force enumeration over all injective assignments.
    rng = np.random.default_rng(4)
    for m in (2, 3, 4):
        for _ in range(25):
            outs_np = [rng.standard_normal(64) for _ in range(m)]
            refs = [rng.standard_normal(64), rng.standard_normal(64)]
            outs = [Tensor(o) for o in outs_np]
            loss = float(T.sep_loss(outs, refs).data)
            best = np.inf
            for j1, j2 in itertools.permutations(range(m), 2):
                val = float(t_neg_snr_loss(Tensor(outs_np[j1]), refs[0]).data)
                val += float(t_neg_snr_loss(Tensor(outs_np[j2]), refs[1]).data)
                for j in range(m):
                    if j not in (j1, j2):
                        val += 1e-3 * float(np.sum(outs_np[j] ** 2))
                best = min(best, val)
            assert loss == best


def test_sep_train_step_updates_target_only():
    pair = _pair(cfg=SMALL, ema_every=50)
    main_before = {k: v.copy() for k, v in pair.main.params.items()}
    target_before = {k: v.copy() for k, v in pair.target.params.items()}
    rng = np.random.default_rng(5)
    batch = [(rng.standard_normal(128) * 0.3, rng.standard_normal(128) * 0.3)]
    opt = AdamState(lr=1e-3)
    loss = T.sep_train_step(pair, batch, opt, rng)
    assert np.isfinite(loss)
    assert all(np.array_equal(pair.main.params[k], main_before[k])
               for k in main_before)
    assert any(not np.array_equal(pair.target.params[k], target_before[k])
               for k in target_before)


def test_denoise_train_step_ema_moves_main():
    pair = T.MainTargetPair(main=Model.init(DEN, 1), target=Model.init(DEN, 2),
                            lam=0.9, ema_every=1)
    main_before = {k: v.copy() for k, v in pair.main.params.items()}
    rng = np.random.default_rng(6)
    batch = [rng.standard_normal(128) * 0.3 for _ in range(2)]
    loss = T.denoise_train_step(pair, batch, AdamState(lr=1e-3), rng)
    assert np.isfinite(loss)
    assert any(not np.array_equal(pair.main.params[k], main_before[k])
               for k in main_before)


def test_train_separator_loss_curve_reproducible():
    rng = np.random.default_rng(7)
    pool = [rng.standard_normal(256) * 0.3 for _ in range(4)]
    curves = []
    for _ in range(2):
        pair = _pair(cfg=SMALL)
        losses = T.train_separator(pair, pool, steps=3, opt=AdamState(lr=1e-3),
                                   seed=11, batch_size=2, crop_len=128)
        curves.append(losses)
    assert curves[0] == curves[1]


def test_pretrain_zero_epochs_noop():
    model = Model.init(SMALL, 3)
    before = {k: v.copy() for k, v in model.params.items()}
    out = T.pretrain_separator(model, [np.ones(64)], [(np.ones(64), np.ones(64))],
                               epochs=0, seed=0)
    assert all(np.array_equal(out.params[k], before[k]) for k in before)


def test_pretrain_denoiser_tolerates_silent_noise_crop():
    # Sparse noise (e.g. clicks) can leave a training crop with no noise at
    # all; the zero-reference term must be skipped, not raised on.
    model = Model.init(DEN, 5)
    rng = np.random.default_rng(11)
    clean = rng.standard_normal(128) * 0.3
    nz = np.zeros(128)
    out = T.pretrain_denoiser(model, [clean + nz], [(clean, nz)], epochs=1,
                              seed=0, batch_size=1, crop_len=64)
    assert all(np.all(np.isfinite(v)) for v in out.params.values())


def test_feedback_cycle_pool_size_and_manifest():
    rng = np.random.default_rng(8)
    sep_pair = _pair(cfg=SMALL)
    den_pair = T.MainTargetPair(main=Model.init(DEN, 1), target=Model.init(DEN, 2))
    mixtures = [rng.standard_normal(256) * 0.3 for _ in range(3)]
    pool, manifest = T.feedback_cycle(sep_pair, den_pair, mixtures, seed=1)
    assert len(pool) == 3
    assert len(manifest) == 3
    for row in manifest:
        assert 0.5 <= float(row["w_a"]) <= 1.0


def test_residual_noise_power_clean_mixture():
    rng = np.random.default_rng(9)
    a, b = rng.standard_normal(200), rng.standard_normal(200)
    clean_mix = 0.7 * a + 1.3 * b
    assert T.residual_noise_power(clean_mix, [a, b]) < 1e-20
    noisy = clean_mix + rng.standard_normal(200)
    assert T.residual_noise_power(noisy, [a, b]) > 0.5


def test_noise_leak_power_tracks_noise_fraction():
    rng = np.random.default_rng(12)
    a, b = rng.standard_normal(400), rng.standard_normal(400)
    nz = rng.standard_normal(400)
    noisy = a + b + 0.5 * nz
    leak = T.noise_leak_power(noisy, [a, b], [nz])
    # 0.25 units of noise power relative to total mixture power.
    expected = np.mean((0.5 * nz) ** 2) / np.mean(noisy ** 2)
    assert leak == pytest.approx(expected, rel=1e-6)
    assert T.noise_leak_power(a + b, [a, b], [nz]) < 1e-10


def test_eval_denoise_improvement_sign():
    # A model cannot be scored better than perfect: passing the clean signal
    # as the noisy input gives zero or negative improvement bounded sanely.
    model = Model.init(DEN, 4)
    rng = np.random.default_rng(10)
    clean = [rng.standard_normal(256) * 0.3]
    noisy = [clean[0] + rng.standard_normal(256) * 0.3]
    imp = T.eval_denoise(model, noisy, clean)
    assert len(imp) == 1 and np.isfinite(imp[0])
