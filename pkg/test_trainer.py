import json
import math
import warnings

import numpy as np
import pytest
import torch

from maskvc.errors import (ConfigError, ConfigMismatchError, EmptyCorpusError, NonFiniteLossError,
                           NormalizationStateError, ShortUtteranceWarning, UtteranceTooShortError)
from maskvc.features import MelSpectrogram
from maskvc.masks import MaskPolicy
from maskvc.mockup import MockupCorpus, freeze_discriminators, unit_stats
from maskvc.objectives import LossBreakdown, LossWeights, full_objective, lsgan_g_loss
from maskvc.trainer import (LOG_NAME, CropSampler, TrainConfig, TrainState, build_optimizers, crop_frames,
                            generator_losses, resume_training, run_training, sample_masks, train_step)

LOSS_FIELDS = [name for name, _ in LossBreakdown().items()]


def micro_cfg(**changes):
    base = dict(preset='micro', crop_frames=16, iterations=10, checkpoint_every=5, log_every=1, prefetch=2)
    base.update(changes)
    return TrainConfig(**base).validate()


def micro_corpus(seed, n=4):
    return MockupCorpus(n, n_bins=8, frames=(16, 30), seed=seed)


def crops(seed=0, shape=(1, 8, 16)):
    rng = np.random.default_rng(seed)
    return rng.normal(size=shape), rng.normal(size=shape)


def read_log(path):
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.lr_g, cfg.lr_d, cfg.beta1, cfg.beta2) == (2e-4, 1e-4, 0.5, 0.999)
    assert (cfg.batch_size, cfg.crop_frames, cfg.iterations) == (1, 64, 500000)
    assert cfg.mask_policy == MaskPolicy('FIF', 'uniform', 50.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(crop_frames=62).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr_g=0.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(input_channels=1).validate()
    TrainConfig(input_channels=1, mask_policy=MaskPolicy.parse('FIF 0')).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({'learning_rate': 1.0})


def test_config_dict_round_trip_keeps_fingerprint():
    cfg = micro_cfg(mask_policy=MaskPolicy.parse('FIS 0-50'), weights=LossWeights(lambda_cyc=3.0))
    again = TrainConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.fingerprint() == cfg.fingerprint()
    assert TrainConfig.from_dict(dict(cfg.to_dict(), mask_policy='FIS 0-50')) == cfg


def test_fingerprint_ignores_run_length_only():
    cfg = micro_cfg()
    assert micro_cfg(iterations=99, log_every=7).fingerprint() == cfg.fingerprint()
    assert micro_cfg(lr_g=1e-3).fingerprint() != cfg.fingerprint()
    assert micro_cfg(seed=1).fingerprint() != cfg.fingerprint()


def test_crop_whole_when_lengths_match():
    mel = MelSpectrogram(values=np.random.default_rng(0).normal(size=(8, 64)), normalized=True)
    assert np.array_equal(crop_frames(mel, 64, np.random.default_rng(1)).values, mel.values)


def test_crop_start_is_uniform_over_support():
    values = np.tile(np.arange(100.0), (2, 1))
    mel = MelSpectrogram(values=values, normalized=True)
    rng = np.random.default_rng(2)
    starts = [int(crop_frames(mel, 64, rng).values[0, 0]) for _ in range(10000)]
    assert set(starts) == set(range(37))
    crop = crop_frames(mel, 64, np.random.default_rng(5))
    assert np.array_equal(crop.values, crop_frames(mel, 64, np.random.default_rng(5)).values)
    assert np.array_equal(np.diff(crop.values[0]), np.ones(63))


def test_crop_too_short():
    with pytest.raises(UtteranceTooShortError):
        crop_frames(MelSpectrogram(values=np.zeros((8, 10))), 16, np.random.default_rng(0))


def test_adam_matches_closed_form():
    cfg = TrainConfig()
    g_param = torch.nn.Parameter(torch.tensor([1.5], dtype=torch.float64))
    d_param = torch.nn.Parameter(torch.tensor([-0.5], dtype=torch.float64))
    g_module, d_module = torch.nn.Module(), torch.nn.Module()
    g_module.p, d_module.p = g_param, d_param
    opt_g, opt_d = build_optimizers([g_module], [d_module], cfg)

    p, m, v = 1.5, 0.0, 0.0
    for t in range(1, 21):
        opt_g.zero_grad()
        (g_param ** 2).sum().backward()
        opt_g.step()
        grad = 2 * p
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad ** 2
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        p = p - cfg.lr_g * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert float(g_param) == pytest.approx(p, abs=1e-10)
    assert opt_d.param_groups[0]['lr'] == cfg.lr_d
    assert float(d_param) == -0.5


def test_state_has_four_distinct_discriminators():
    state = TrainState.initialize(micro_cfg())
    nets = [state.d_x, state.d_y, state.d2_x, state.d2_y]
    assert len({id(n) for n in nets}) == 4
    ids = [id(p) for n in nets for p in n.parameters()]
    assert len(ids) == len(set(ids))
    assert state.describe()['converter_params'] > 0


def test_initialization_depends_on_seed_only():
    torch.manual_seed(123)
    a = TrainState.initialize(micro_cfg())
    torch.manual_seed(456)
    b = TrainState.initialize(micro_cfg())
    for (_, pa), (_, pb) in zip(a.g_xy.state_dict().items(), b.g_xy.state_dict().items()):
        assert torch.equal(pa, pb)


def test_train_step_is_deterministic():
    cfg = micro_cfg()
    state = TrainState.initialize(cfg)
    x, y = crops()
    _, first = train_step(state.clone(), x, y, cfg)
    _, second = train_step(state.clone(), x, y, cfg)
    assert first.to_record() == second.to_record()


def test_train_step_advances_and_stays_finite():
    cfg = micro_cfg()
    state = TrainState.initialize(cfg)
    x, y = crops(1)
    before = state.g_xy.output.weight.detach().clone()
    state, breakdown = train_step(state, x, y, cfg)
    assert state.iteration == 1
    assert all(math.isfinite(v) for v in breakdown.to_record().values())
    assert breakdown.id_xy > 0 and breakdown.cyc_xyx > 0
    assert not torch.equal(before, state.g_xy.output.weight)
    assert all(p.requires_grad for p in state.d_x.parameters())


def test_frozen_zero_discriminators_leave_pure_lsgan_terms():
    cfg = micro_cfg(weights=LossWeights(lambda_cyc=0.0, lambda_id=0.0), freeze_discriminators=True)
    state = freeze_discriminators(TrainState.initialize(cfg), bias=0.25)
    x, y = crops(2)
    state, breakdown = train_step(state, x, y, cfg)
    oracle = float(lsgan_g_loss(np.full((1, 1, 2), 0.25)))
    assert oracle == 0.5625
    for name in ('adv_xy', 'adv_yx', 'adv2_xyx', 'adv2_yxy'):
        assert getattr(breakdown, name) == pytest.approx(oracle, abs=1e-7)
    assert breakdown.total_g == pytest.approx(4 * oracle, abs=1e-6)
    # frozen: discriminator weights untouched
    assert float(state.d_x.output.bias[0]) == 0.25


def test_identity_terms_vanish_after_cutoff():
    cfg = micro_cfg()
    state = TrainState.initialize(cfg)
    state.iteration = 10000
    x, y = crops(3)
    state, breakdown = train_step(state, x, y, cfg)
    assert breakdown.id_xy == 0.0 and breakdown.id_yx == 0.0
    assert state.iteration == 10001


def test_masks_are_fresh_every_iteration():
    cfg = micro_cfg(crop_frames=64, mask_policy=MaskPolicy.parse('FIF 0-50'))
    seen = set()
    for iteration in range(1000):
        _, _, traces = sample_masks(cfg, (1, 8, 64), iteration)
        seen.add((traces[0]['zero_frames'], traces[0].get('start')))
    assert len(seen) > 200
    a, b, _ = sample_masks(cfg, (1, 8, 64), 17)
    assert not np.array_equal(a, b)


def test_single_channel_mode_trains_unmasked():
    cfg = micro_cfg(input_channels=1, mask_policy=MaskPolicy.parse('FIF 0'))
    m_x, m_y, traces = sample_masks(cfg, (1, 8, 16), 0)
    assert np.all(m_x == 1) and np.all(m_y == 1) and traces == []
    state, breakdown = train_step(TrainState.initialize(cfg), *crops(4), cfg)
    assert math.isfinite(breakdown.total_g)


def test_gradient_check_on_micro_network():
    cfg = micro_cfg(dtype='float64')
    state = TrainState.initialize(cfg)
    x, y = (torch.as_tensor(v) for v in crops(5))
    m_x, m_y, _ = sample_masks(cfg, tuple(x.shape), 0)
    m_x, m_y = torch.as_tensor(m_x), torch.as_tensor(m_y)

    def g_total():
        terms = generator_losses(state, x, y, m_x, m_y, cfg.weights, 0)
        return full_objective(LossBreakdown(**terms), cfg.weights, 0)[0]

    params = list(state.g_xy.parameters()) + list(state.g_yx.parameters())
    analytic = torch.autograd.grad(g_total(), params)
    step = 1e-4
    a_all, n_all = [], []
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            flat = p.view(-1)
            for i in range(flat.numel()):
                keep = float(flat[i])
                flat[i] = keep + step
                up = float(g_total())
                flat[i] = keep - step
                down = float(g_total())
                flat[i] = keep
                n_all.append((up - down) / (2 * step))
                a_all.append(float(grad.view(-1)[i]))
    a_all, n_all = np.array(a_all), np.array(n_all)
    assert np.linalg.norm(a_all - n_all) / np.linalg.norm(n_all) < 1e-3


def test_crop_sampler_skips_short_utterances():
    cfg = micro_cfg()
    corpus = micro_corpus(0) + [MelSpectrogram(values=np.zeros((8, 10)), normalized=True)]
    with pytest.warns(ShortUtteranceWarning):
        sampler = CropSampler(corpus, micro_corpus(1), cfg)
    assert len(sampler.x) == 4
    x, y = sampler(0)
    assert x.shape == (1, 8, 16) and y.shape == (1, 8, 16)
    assert np.array_equal(sampler(7)[0], sampler(7)[0])


def test_crop_sampler_rejects_bad_corpora():
    cfg = micro_cfg()
    with pytest.raises(EmptyCorpusError):
        CropSampler([], micro_corpus(1), cfg)
    with pytest.raises(EmptyCorpusError), warnings.catch_warnings():
        warnings.simplefilter('ignore', ShortUtteranceWarning)
        CropSampler([MelSpectrogram(values=np.zeros((8, 10)), normalized=True)], micro_corpus(1), cfg)
    with pytest.raises(NormalizationStateError):
        CropSampler(MockupCorpus(2, n_bins=8, frames=(16, 20), normalized=False), micro_corpus(1), cfg)


def test_run_training_writes_checkpoints_and_log(tmp_path):
    cfg = micro_cfg()
    final = run_training(cfg, micro_corpus(0), micro_corpus(1), tmp_path, unit_stats(8, 'X'), unit_stats(8, 'Y'))
    assert final == tmp_path / 'final.pt'
    assert (tmp_path / 'ckpt_00000005.pt').is_file() and (tmp_path / 'ckpt_00000010.pt').is_file()
    records = read_log(tmp_path / LOG_NAME)
    assert [r['iteration'] for r in records] == list(range(1, 11))
    for r in records:
        assert 'wall_time' in r
        assert all(math.isfinite(r[name]) for name in LOSS_FIELDS)


def test_resume_continues_bit_identically(tmp_path):
    cfg = micro_cfg()
    corpus_x, corpus_y = micro_corpus(0), micro_corpus(1)
    run_training(cfg, corpus_x, corpus_y, tmp_path / 'straight', unit_stats(8), unit_stats(8))
    resume_training(tmp_path / 'straight' / 'ckpt_00000005.pt', cfg, corpus_x, corpus_y, tmp_path / 'resumed')
    straight = {r['iteration']: r for r in read_log(tmp_path / 'straight' / LOG_NAME)}
    resumed = read_log(tmp_path / 'resumed' / LOG_NAME)
    assert [r['iteration'] for r in resumed] == [6, 7, 8, 9, 10]
    for r in resumed:
        assert [r[k] for k in LOSS_FIELDS] == [straight[r['iteration']][k] for k in LOSS_FIELDS]


def test_resume_with_other_config_is_refused(tmp_path):
    cfg = micro_cfg(iterations=5)
    run_training(cfg, micro_corpus(0), micro_corpus(1), tmp_path)
    with pytest.raises(ConfigMismatchError):
        resume_training(tmp_path / 'final.pt', micro_cfg(lr_g=1e-3), micro_corpus(0), micro_corpus(1), tmp_path / 'b')
    resume_training(tmp_path / 'final.pt', micro_cfg(lr_g=1e-3, iterations=6), micro_corpus(0), micro_corpus(1),
                    tmp_path / 'c', force=True)


def test_non_finite_loss_dumps_diagnostics(tmp_path):
    cfg = micro_cfg()
    state = TrainState.initialize(cfg)
    with torch.no_grad():
        state.g_xy.output.bias.fill_(float('nan'))
    with pytest.raises(NonFiniteLossError) as info:
        train_step(state, *crops(6), cfg, dump_dir=tmp_path)
    with open(info.value.dump_path, 'r', encoding='utf-8') as f:
        dump = json.load(f)
    assert dump['iteration'] == 0
    assert dump['term'] == info.value.term


@pytest.mark.slow
def test_self_mapping_losses_collapse(tmp_path):
    corpus = MockupCorpus(10, n_bins=80, frames=(64, 128), seed=0)
    cfg = TrainConfig(preset='desk', iterations=2000, checkpoint_every=2000, log_every=10, seed=0)
    run_training(cfg, corpus, corpus, tmp_path)
    records = {r['iteration']: r for r in read_log(tmp_path / LOG_NAME)}
    start, end = records[10], records[2000]
    for name in ('id_xy', 'id_yx', 'cyc_xyx', 'cyc_yxy'):
        assert end[name] < 0.2 * start[name]
