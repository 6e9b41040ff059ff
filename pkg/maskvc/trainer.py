"""
Dual-direction masked CycleGAN training loop.

Each step samples a fresh mask per sample for both directions, updates the
four discriminators on d_total and then both converters on g_total. Crops
and masks for iteration ``i`` come from ``derive_rng(seed, i, stream)`` so a
run resumed from a checkpoint continues bit-identically.
"""
from __future__ import annotations

import copy
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from .errors import (ConfigError, EmptyCorpusError, NonFiniteError, NonFiniteLossError, NormalizationStateError,
                     ShapeMismatchError, ShortUtteranceWarning, UtteranceTooShortError)
from .features import MelSpectrogram, NormStats
from .masks import MaskPolicy, sample_mask
from .models import (Converter, Discriminator, MIN_CONVERTER_FRAMES, count_params, load_checkpoint,
                     resolve_preset, save_checkpoint, stats_to_payload)
from .objectives import (LossBreakdown, LossWeights, full_objective, identity_active, identity_loss,
                         lsgan_d_loss, lsgan_g_loss, masked_cycle_loss)
from .presets import TIME_DOWNSAMPLE
from .settings import config_fingerprint
from .util import Iterator, derive_rng, progress_enabled

logger = logging.getLogger(__name__)

CROP_STREAM = 0
MASK_STREAM = 1
LOG_NAME = 'train_log.jsonl'
FINAL_NAME = 'final.pt'

# run-length knobs that do not change what one iteration computes
_RUN_KEYS = ('iterations', 'checkpoint_every', 'log_every', 'prefetch')

CONVERTERS = ('g_xy', 'g_yx')
DISCRIMINATORS = ('d_x', 'd_y', 'd2_x', 'd2_y')


@dataclass
class TrainConfig:
    iterations: int = 500000
    lr_g: float = 2e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    crop_frames: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    mask_policy: MaskPolicy = field(default_factory=MaskPolicy)
    seed: int = 0
    checkpoint_every: int = 10000
    log_every: int = 100
    preset: str = 'full'
    input_channels: int = 2
    freeze_discriminators: bool = False
    prefetch: int = 4
    dtype: str = 'float32'

    def validate(self):
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.crop_frames < MIN_CONVERTER_FRAMES or self.crop_frames % TIME_DOWNSAMPLE:
            raise ConfigError("crop_frames must be a multiple of {0} and >= {1}, got {2}"
                              .format(TIME_DOWNSAMPLE, MIN_CONVERTER_FRAMES, self.crop_frames))
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every and log_every must be >= 1")
        if self.input_channels not in (1, 2):
            raise ConfigError("input_channels must be 1 or 2")
        if self.input_channels == 1 and self.mask_policy.x_percent > 0:
            raise ConfigError("single-channel converters train without masks; use mask policy 'FIF 0'")
        if self.dtype not in ('float32', 'float64'):
            raise ConfigError("dtype must be float32 or float64")
        resolve_preset(self.preset)
        return self

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == 'float64' else torch.float32

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data['weights'] = self.weights.to_dict()
        data['mask_policy'] = self.mask_policy.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError("unknown config keys: {0}".format(sorted(unknown)))
        if isinstance(data.get('weights'), dict):
            data['weights'] = LossWeights.from_dict(data['weights'])
        policy = data.get('mask_policy')
        if isinstance(policy, str):
            data['mask_policy'] = MaskPolicy.parse(policy)
        elif isinstance(policy, dict):
            data['mask_policy'] = MaskPolicy.from_dict(policy)
        return cls(**data).validate()

    def fingerprint(self):
        data = self.to_dict()
        for key in _RUN_KEYS:
            data.pop(key)
        data['mel_bins'] = resolve_preset(self.preset)['mel_bins']
        return config_fingerprint(data)


@dataclass
class TrainState:
    g_xy: Converter
    g_yx: Converter
    d_x: Discriminator
    d_y: Discriminator
    d2_x: Discriminator
    d2_y: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    iteration: int = 0
    last_masks: list = field(default_factory=list)

    @classmethod
    def initialize(cls, cfg):
        cfg.validate()
        # initial weights depend on the seed only, not on the caller's torch RNG
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            nets = {name: Converter(cfg.preset, input_channels=cfg.input_channels) for name in CONVERTERS}
            nets.update({name: Discriminator(cfg.preset) for name in DISCRIMINATORS})
        for net in nets.values():
            net.to(cfg.torch_dtype)
        opt_g, opt_d = build_optimizers([nets[n] for n in CONVERTERS], [nets[n] for n in DISCRIMINATORS], cfg)
        return cls(opt_g=opt_g, opt_d=opt_d, **nets)

    def networks(self):
        return {name: getattr(self, name) for name in CONVERTERS + DISCRIMINATORS}

    def clone(self):
        return copy.deepcopy(self)

    def describe(self):
        counts = {name: count_params(net) for name, net in self.networks().items()}
        return {'iteration': self.iteration, 'params': counts,
                'converter_params': counts['g_xy'], 'discriminator_params': counts['d_x']}

    def state_dict(self):
        return {'networks': {name: net.state_dict() for name, net in self.networks().items()},
                'opt_g': self.opt_g.state_dict(), 'opt_d': self.opt_d.state_dict(),
                'iteration': self.iteration}

    def load_state_dict(self, state):
        for name, net in self.networks().items():
            net.load_state_dict(state['networks'][name])
        self.opt_g.load_state_dict(state['opt_g'])
        self.opt_d.load_state_dict(state['opt_d'])
        self.iteration = int(state['iteration'])
        return self


def build_optimizers(converters, discriminators, cfg):
    """One Adam over both converters, one over all four discriminators."""
    betas = (cfg.beta1, cfg.beta2)
    g_params = [p for net in converters for p in net.parameters()]
    d_params = [p for net in discriminators for p in net.parameters()]
    return torch.optim.Adam(g_params, lr=cfg.lr_g, betas=betas), torch.optim.Adam(d_params, lr=cfg.lr_d, betas=betas)


def crop_frames(mel, n, rng):
    if mel.n_frames < n:
        raise UtteranceTooShortError("utterance has {0} frames, crop needs {1}".format(mel.n_frames, n))
    start = int(rng.integers(0, mel.n_frames - n, endpoint=True))
    return mel.with_values(mel.values[:, start:start + n])


class CropSampler(object):
    """Draws one random x and one random y utterance per sample, independently."""

    def __init__(self, corpus_x, corpus_y, cfg):
        self.cfg = cfg
        self.x = self._eligible(corpus_x, 'X')
        self.y = self._eligible(corpus_y, 'Y')
        if self.x[0].n_bins != self.y[0].n_bins:
            raise ShapeMismatchError("domains have {0} and {1} mel bins".format(self.x[0].n_bins, self.y[0].n_bins))

    def _eligible(self, corpus, name):
        corpus = list(corpus)
        if not corpus:
            raise EmptyCorpusError("corpus {0} is empty".format(name))
        if not all(mel.normalized for mel in corpus):
            raise NormalizationStateError("corpus {0} must be normalized before training".format(name))
        kept = [mel for mel in corpus if mel.n_frames >= self.cfg.crop_frames]
        skipped = len(corpus) - len(kept)
        if skipped:
            msg = "skipping {0} of {1} utterances in corpus {2} shorter than {3} frames".format(
                skipped, len(corpus), name, self.cfg.crop_frames)
            logger.warning(msg)
            warnings.warn(msg, ShortUtteranceWarning)
        if not kept:
            raise EmptyCorpusError("no utterance in corpus {0} is at least {1} frames long"
                                   .format(name, self.cfg.crop_frames))
        return kept

    def __call__(self, iteration):
        rng = derive_rng(self.cfg.seed, iteration, CROP_STREAM)
        xs, ys = [], []
        for _ in range(self.cfg.batch_size):
            xs.append(crop_frames(self.x[int(rng.integers(len(self.x)))], self.cfg.crop_frames, rng).values)
            ys.append(crop_frames(self.y[int(rng.integers(len(self.y)))], self.cfg.crop_frames, rng).values)
        return np.stack(xs), np.stack(ys)


def _as_batch(values, dtype):
    if isinstance(values, MelSpectrogram):
        if not values.normalized:
            raise NormalizationStateError("training crops must be normalized")
        values = values.values
    t = torch.as_tensor(np.asarray(values) if not torch.is_tensor(values) else values, dtype=dtype)
    if t.dim() == 2:
        t = t.unsqueeze(0)
    if t.dim() != 3:
        raise ShapeMismatchError("expected (bins, frames) or (batch, bins, frames), got {0}".format(tuple(t.shape)))
    return t


def sample_masks(cfg, shape, iteration):
    """Mask tensors for the x and y batches of one iteration, plus their traces."""
    batch, n_bins, n_frames = shape
    rng = derive_rng(cfg.seed, iteration, MASK_STREAM)
    if cfg.input_channels == 1:
        ones = np.ones((batch, n_bins, n_frames))
        return ones, ones.copy(), []
    drawn = [sample_mask(cfg.mask_policy, (n_bins, n_frames), rng) for _ in range(2 * batch)]
    m_x = np.stack([m.values for m in drawn[:batch]])
    m_y = np.stack([m.values for m in drawn[batch:]])
    traces = [{k: v for k, v in m.seed_trace.items() if k != 'rng_state'} for m in drawn]
    return m_x, m_y, traces


def _set_requires_grad(nets, flag):
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def discriminator_losses(state, x, y, m_x, m_y):
    ones = torch.ones_like(x)
    with torch.no_grad():
        y_fake = state.g_xy(x * m_x, m_x)
        x_cyc = state.g_yx(y_fake, ones)
        x_fake = state.g_yx(y * m_y, m_y)
        y_cyc = state.g_xy(x_fake, ones)
    return {
        'd_y': lsgan_d_loss(state.d_y(y), state.d_y(y_fake)),
        'd_x': lsgan_d_loss(state.d_x(x), state.d_x(x_fake)),
        'd2_x': lsgan_d_loss(state.d2_x(x), state.d2_x(x_cyc)),
        'd2_y': lsgan_d_loss(state.d2_y(y), state.d2_y(y_cyc)),
    }


def generator_losses(state, x, y, m_x, m_y, weights, iteration):
    """Converter-side terms of both directions; the mask only touches the first hop."""
    ones = torch.ones_like(x)
    y_fake = state.g_xy(x * m_x, m_x)
    x_cyc = state.g_yx(y_fake, ones)
    x_fake = state.g_yx(y * m_y, m_y)
    y_cyc = state.g_xy(x_fake, ones)
    terms = {
        'adv_xy': lsgan_g_loss(state.d_y(y_fake)),
        'adv_yx': lsgan_g_loss(state.d_x(x_fake)),
        'cyc_xyx': masked_cycle_loss(x, x_cyc),
        'cyc_yxy': masked_cycle_loss(y, y_cyc),
        'adv2_xyx': lsgan_g_loss(state.d2_x(x_cyc)),
        'adv2_yxy': lsgan_g_loss(state.d2_y(y_cyc)),
    }
    if identity_active(weights, iteration):
        terms['id_xy'] = identity_loss(state.g_xy(y, ones), y)
        terms['id_yx'] = identity_loss(state.g_yx(x, ones), x)
    return terms


def _dump(dump_dir, iteration, err):
    if dump_dir is None:
        return None
    path = Path(dump_dir) / 'nonfinite_{0:08d}.json'.format(iteration)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {'iteration': iteration, 'term': err.term,
              'values': {k: (v if np.isfinite(v) else repr(v)) for k, v in err.values.items()}}
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(record, f, indent=2)
    return str(path)


def train_step(state, x_crop, y_crop, cfg, dump_dir=None):
    """One D-then-G update; returns (state, detached LossBreakdown)."""
    dtype = cfg.torch_dtype
    x = _as_batch(x_crop, dtype)
    y = _as_batch(y_crop, dtype)
    if x.shape != y.shape:
        raise ShapeMismatchError("x crop {0} and y crop {1} differ".format(tuple(x.shape), tuple(y.shape)))
    iteration = state.iteration
    m_x, m_y, traces = sample_masks(cfg, tuple(x.shape), iteration)
    m_x = torch.as_tensor(m_x, dtype=dtype)
    m_y = torch.as_tensor(m_y, dtype=dtype)
    discriminators = [getattr(state, n) for n in DISCRIMINATORS]

    try:
        _set_requires_grad(discriminators, True)
        d_terms = discriminator_losses(state, x, y, m_x, m_y)
        detached = LossBreakdown(**{k: v.detach() for k, v in d_terms.items()})
        _, d_total = full_objective(detached, cfg.weights, iteration)
        if not cfg.freeze_discriminators:
            state.opt_d.zero_grad(set_to_none=True)
            sum(d_terms.values()).backward()
            state.opt_d.step()

        _set_requires_grad(discriminators, False)
        g_terms = generator_losses(state, x, y, m_x, m_y, cfg.weights, iteration)
        breakdown = LossBreakdown(**g_terms)
        g_total, _ = full_objective(breakdown, cfg.weights, iteration)
        state.opt_g.zero_grad(set_to_none=True)
        g_total.backward()
        state.opt_g.step()
    except NonFiniteError as e:
        if not isinstance(e, NonFiniteLossError):
            e = NonFiniteLossError(str(e))
        path = _dump(dump_dir, iteration, e)
        logger.error("iteration %d: non-finite loss term %s", iteration, e.term)
        raise NonFiniteLossError(e.term, values=e.values, dump_path=path)
    finally:
        _set_requires_grad(discriminators, True)

    result = LossBreakdown(**{k: float(v) for k, v in g_terms.items()},
                           **{k: float(v) for k, v in d_terms.items()},
                           total_g=float(g_total), total_d=float(d_total))
    state.iteration = iteration + 1
    state.last_masks = traces
    return state, result


def checkpoint_payload(state, cfg, stats_x=None, stats_y=None):
    payload = state.state_dict()
    payload.update({
        'config': cfg.to_dict(),
        'config_hash': cfg.fingerprint(),
        'rng': {'seed': cfg.seed, 'next_iteration': state.iteration},
        'stats_x': stats_to_payload(stats_x),
        'stats_y': stats_to_payload(stats_y),
        'mel_bins': resolve_preset(cfg.preset)['mel_bins'],
    })
    return payload


def state_from_checkpoint(payload, cfg):
    return TrainState.initialize(cfg).load_state_dict(payload)


def stats_from_payload(data):
    if data is None:
        return None
    return NormStats(mean=data['mean'], std=data['std'], corpus_id=data.get('corpus_id', ''))


def _log_record(iteration, breakdown, traces):
    record = {'iteration': iteration, 'wall_time': time.time()}
    record.update(breakdown.to_record())
    if traces:
        record['mask_size_percent'] = traces[0].get('size_percent')
        record['mask_start'] = traces[0].get('start')
    return record


def run_training(cfg, corpus_x, corpus_y, out_dir, stats_x=None, stats_y=None, state=None):
    """Train to ``cfg.iterations`` and return the path of the final checkpoint."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sampler = CropSampler(corpus_x, corpus_y, cfg)
    if state is None:
        state = TrainState.initialize(cfg)
    start = state.iteration
    logger.info("training %s preset, policy %s, iterations %d..%d, converter params %d",
                cfg.preset, cfg.mask_policy.label, start, cfg.iterations, count_params(state.g_xy))

    batches = Iterator(sampler, start, cfg.iterations, maxsize=cfg.prefetch)
    bar = tqdm(total=cfg.iterations, initial=start, desc='train', disable=not progress_enabled())
    try:
        with open(out_dir / LOG_NAME, 'a', encoding='utf-8') as log:
            for iteration, (x, y) in batches:
                state, breakdown = train_step(state, x, y, cfg, dump_dir=out_dir)
                done = state.iteration
                if done % cfg.log_every == 0 or done == cfg.iterations:
                    log.write(json.dumps(_log_record(done, breakdown, state.last_masks)) + '\n')
                    log.flush()
                    bar.set_postfix(g='{0:.3f}'.format(breakdown.total_g), d='{0:.3f}'.format(breakdown.total_d))
                if done % cfg.checkpoint_every == 0:
                    save_checkpoint(out_dir / 'ckpt_{0:08d}.pt'.format(done),
                                    checkpoint_payload(state, cfg, stats_x, stats_y))
                bar.update(1)
    finally:
        batches.stop()
        bar.close()
    return save_checkpoint(out_dir / FINAL_NAME, checkpoint_payload(state, cfg, stats_x, stats_y))


def resume_training(checkpoint, cfg, corpus_x, corpus_y, out_dir, force=False):
    payload = load_checkpoint(checkpoint, expected_fingerprint=cfg.fingerprint(), force=force)
    state = state_from_checkpoint(payload, cfg)
    logger.info("resuming from %s at iteration %d", checkpoint, state.iteration)
    return run_training(cfg, corpus_x, corpus_y, out_dir,
                        stats_x=stats_from_payload(payload.get('stats_x')),
                        stats_y=stats_from_payload(payload.get('stats_y')), state=state)


def describe_checkpoint(payload):
    cfg = TrainConfig.from_dict(payload['config'])
    state = state_from_checkpoint(payload, cfg)
    info = state.describe()
    info.update({'preset': cfg.preset, 'mask_policy': cfg.mask_policy.label,
                 'input_channels': cfg.input_channels, 'mel_bins': payload.get('mel_bins'),
                 'config_hash': payload.get('config_hash', '')[:16],
                 'format_version': payload.get('format_version'),
                 'has_stats': payload.get('stats_x') is not None and payload.get('stats_y') is not None})
    return info
