"""
Converter and discriminator networks.

Converter (2-1-2D CNN): gated 2D input conv, two stride-2 downsampling blocks,
reshape to 1D over time, residual 1D blocks, reshape back, two pixel-shuffle
upsampling blocks and a linear 2D output conv. ``input_channels=2`` feeds the
mask alongside the masked mel; ``input_channels=1`` is the plain CycleGAN-VC2
converter. Discriminator: 2D PatchGAN with gated conv blocks.
"""
from __future__ import annotations

import logging
import pickle
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointFileError, ConfigError, ConfigMismatchError, NonFiniteError, ShapeMismatchError
from .features import MelSpectrogram
from .presets import FREQ_DOWNSAMPLE, PRESETS, TIME_DOWNSAMPLE

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
NORM_EPS = 1e-5
DISCRIMINATOR_STRIDE = 8
MIN_CONVERTER_FRAMES = 2 * TIME_DOWNSAMPLE


def resolve_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError("unknown preset {0!r}; expected one of {1}".format(name, sorted(PRESETS)))


class GLU(nn.Module):
    def forward(self, x):
        return F.glu(x, dim=1)


class DownsampleBlock2d(nn.Module):
    def __init__(self, in_channels, out_channels):
        super(DownsampleBlock2d, self).__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_channels, 2 * out_channels, kernel_size=5, stride=2, padding=2),
            nn.InstanceNorm2d(2 * out_channels, eps=NORM_EPS, affine=True),
            GLU(),
        )

    def forward(self, x):
        return self.block(x)


class ResidualBlock1d(nn.Module):
    def __init__(self, channels, hidden):
        super(ResidualBlock1d, self).__init__()
        self.block = nn.Sequential(
            nn.Conv1d(channels, 2 * hidden, kernel_size=3, padding=1),
            nn.InstanceNorm1d(2 * hidden, eps=NORM_EPS, affine=True),
            GLU(),
            nn.Conv1d(hidden, channels, kernel_size=3, padding=1),
            nn.InstanceNorm1d(channels, eps=NORM_EPS, affine=True),
        )

    def forward(self, x):
        return x + self.block(x)


class UpsampleBlock2d(nn.Module):
    def __init__(self, in_channels, out_channels):
        super(UpsampleBlock2d, self).__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_channels, 8 * out_channels, kernel_size=3, padding=1),
            nn.PixelShuffle(2),
            nn.InstanceNorm2d(2 * out_channels, eps=NORM_EPS, affine=True),
            GLU(),
        )

    def forward(self, x):
        return self.block(x)


class Converter(nn.Module):
    def __init__(self, preset='desk', input_channels=2, check_finite=False):
        super(Converter, self).__init__()
        if input_channels not in (1, 2):
            raise ConfigError("input_channels must be 1 (V2 mode) or 2 (mask mode)")
        spec = resolve_preset(preset)
        widths = spec['converter']
        self.preset = preset
        self.input_channels = input_channels
        self.mel_bins = spec['mel_bins']
        self.check_finite = check_finite
        if self.mel_bins % FREQ_DOWNSAMPLE:
            raise ConfigError("mel_bins must be divisible by {0}".format(FREQ_DOWNSAMPLE))
        c1, c2 = widths['first'], widths['down']
        r, rh = widths['residual'], widths['residual_hidden']
        u1, u2 = widths['up']
        flat = c2 * (self.mel_bins // FREQ_DOWNSAMPLE)
        self.down_channels = c2

        self.first = nn.Sequential(
            nn.Conv2d(input_channels, 2 * c1, kernel_size=(5, 15), padding=(2, 7)),
            GLU(),
        )
        self.down = nn.Sequential(DownsampleBlock2d(c1, c2), DownsampleBlock2d(c2, c2))
        self.to_1d = nn.Sequential(
            nn.Conv1d(flat, r, kernel_size=1),
            nn.InstanceNorm1d(r, eps=NORM_EPS, affine=True),
        )
        self.residual = nn.Sequential(*[ResidualBlock1d(r, rh) for _ in range(widths['residual_blocks'])])
        self.to_2d = nn.Sequential(
            nn.Conv1d(r, flat, kernel_size=1),
            nn.InstanceNorm1d(flat, eps=NORM_EPS, affine=True),
        )
        self.up = nn.Sequential(UpsampleBlock2d(c2, u1), UpsampleBlock2d(u1, u2))
        self.output = nn.Conv2d(u2, 1, kernel_size=(5, 15), padding=(2, 7))

    @staticmethod
    def _check(h, index, name, check):
        if check and not torch.isfinite(h).all():
            raise NonFiniteError("non-finite activation after layer {0} ({1})".format(index, name))
        return h

    def forward(self, x_hat, mask=None, check_finite=None):
        """x_hat, mask: (B, F, T) -> (B, F, T). ``check_finite`` overrides the module flag for this call."""
        check = self.check_finite if check_finite is None else bool(check_finite)
        if x_hat.dim() != 3:
            raise ShapeMismatchError("expected (batch, bins, frames), got {0}".format(tuple(x_hat.shape)))
        batch, n_bins, n_frames = x_hat.shape
        if n_bins != self.mel_bins:
            raise ShapeMismatchError("converter expects {0} bins, got {1}".format(self.mel_bins, n_bins))
        if n_frames % TIME_DOWNSAMPLE:
            raise ShapeMismatchError("frame count {0} is not a multiple of {1}".format(n_frames, TIME_DOWNSAMPLE))
        h = x_hat.unsqueeze(1)
        if self.input_channels == 2:
            if mask is None or mask.shape != x_hat.shape:
                raise ShapeMismatchError("mask mode needs a mask shaped like x_hat {0}".format(tuple(x_hat.shape)))
            h = torch.cat([h, mask.unsqueeze(1).to(h.dtype)], dim=1)

        h = self._check(self.first(h), 0, 'first', check)
        h = self._check(self.down(h), 1, 'down', check)
        frames = h.shape[-1]
        h = self._check(self.to_1d(h.reshape(batch, -1, frames)), 2, 'to_1d', check)
        h = self._check(self.residual(h), 3, 'residual', check)
        h = self._check(self.to_2d(h), 4, 'to_2d', check)
        h = h.reshape(batch, self.down_channels, -1, frames)
        h = self._check(self.up(h), 5, 'up', check)
        h = self._check(self.output(h), 6, 'output', check)
        return h.squeeze(1)


class Discriminator(nn.Module):
    def __init__(self, preset='desk', instance_norm=True):
        super(Discriminator, self).__init__()
        d1, d2, d3, d4 = resolve_preset(preset)['discriminator']
        self.preset = preset
        self.first = nn.Sequential(nn.Conv2d(1, 2 * d1, kernel_size=3, padding=1), GLU())
        blocks = []
        for cin, cout in ((d1, d2), (d2, d3), (d3, d4)):
            layers = [nn.Conv2d(cin, 2 * cout, kernel_size=3, stride=2, padding=1)]
            if instance_norm:
                layers.append(nn.InstanceNorm2d(2 * cout, eps=NORM_EPS, affine=True))
            layers.append(GLU())
            blocks.append(nn.Sequential(*layers))
        self.blocks = nn.Sequential(*blocks)
        self.output = nn.Conv2d(d4, 1, kernel_size=(1, 3), padding=(0, 1))

    def forward(self, y):
        """y: (B, F, T) -> patch scores (B, H, W)."""
        if y.dim() != 3:
            raise ShapeMismatchError("expected (batch, bins, frames), got {0}".format(tuple(y.shape)))
        if y.shape[1] < DISCRIMINATOR_STRIDE or y.shape[2] < DISCRIMINATOR_STRIDE:
            raise ShapeMismatchError("input {0}x{1} is smaller than one {2}x{2} patch stride"
                                     .format(y.shape[1], y.shape[2], DISCRIMINATOR_STRIDE))
        h = self.first(y.unsqueeze(1))
        return self.output(self.blocks(h)).squeeze(1)


def patch_grid_shape(n_bins, n_frames):
    """Three stride-2, pad-1, kernel-3 stages: each halves a side, rounding up."""
    def side(n):
        for _ in range(3):
            n = (n + 1) // 2
        return n
    return side(n_bins), side(n_frames)


def count_params(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def strip_mask_channel(converter):
    """V2-mode copy of a mask-mode converter, keeping only the x-hat input weights."""
    if converter.input_channels != 2:
        raise ConfigError("converter is already single-channel")
    v2 = Converter(converter.preset, input_channels=1, check_finite=converter.check_finite)
    v2 = v2.to(next(converter.parameters()).dtype)
    state = {k: v.clone() for k, v in converter.state_dict().items()}
    state['first.0.weight'] = state['first.0.weight'][:, :1]
    v2.load_state_dict(state)
    return v2


def converter_forward(converter, x_hat, m, domain_tag=''):
    """MaskedMel + Mask -> converted (normalized) MelSpectrogram."""
    if x_hat.values.shape != m.values.shape:
        raise ShapeMismatchError("masked mel is {0} but mask is {1}".format(x_hat.values.shape, m.values.shape))
    dtype = next(converter.parameters()).dtype
    x = torch.as_tensor(x_hat.values, dtype=dtype).unsqueeze(0)
    mask = torch.as_tensor(m.values, dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        out = converter(x, mask, check_finite=True)
    return MelSpectrogram(values=out.squeeze(0).cpu().double().numpy(), domain_tag=domain_tag, normalized=True)


def discriminator_forward(discriminator, y):
    dtype = next(discriminator.parameters()).dtype
    with torch.no_grad():
        scores = discriminator(torch.as_tensor(y.values, dtype=dtype).unsqueeze(0))
    return scores.squeeze(0).cpu().double().numpy()


def save_checkpoint(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(payload, format_version=CHECKPOINT_FORMAT_VERSION)
    tmp = path.with_name(path.name + '.tmp')
    torch.save(payload, tmp)
    tmp.replace(path)
    logger.info("checkpoint written: %s (iteration %s)", path, payload.get('iteration'))
    return path


def load_checkpoint(path, expected_fingerprint=None, force=False):
    try:
        payload = torch.load(str(path), map_location='cpu', weights_only=False)
    except (pickle.UnpicklingError, RuntimeError, EOFError, ValueError, AttributeError) as e:
        raise CheckpointFileError("unreadable checkpoint {0}: {1}".format(path, e))
    if not isinstance(payload, dict):
        raise CheckpointFileError("checkpoint {0} does not hold a payload dict".format(path))
    version = payload.get('format_version')
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigMismatchError("checkpoint {0} has format version {1}, expected {2}"
                                  .format(path, version, CHECKPOINT_FORMAT_VERSION))
    found = payload.get('config_hash')
    if expected_fingerprint is not None and found != expected_fingerprint:
        if not force:
            raise ConfigMismatchError("checkpoint {0} was written under a different config (hash {1}...)"
                                      .format(path, str(found)[:12]))
        logger.warning("loading %s despite config hash mismatch (forced)", path)
    return payload


def stats_to_payload(stats):
    if stats is None:
        return None
    return {'mean': np.asarray(stats.mean).tolist(), 'std': np.asarray(stats.std).tolist(),
            'corpus_id': stats.corpus_id}
