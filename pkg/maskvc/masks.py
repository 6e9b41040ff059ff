from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .util import round_half_up

FAMILIES = ('FIF', 'FIF_NS', 'FIS', 'FIP')
SIZE_MODES = ('constant', 'uniform')

_LABEL = re.compile(r'^\s*(FIF_NS|FIF|FIS|FIP)\s+(?:(0)\s*-\s*)?(\d+(?:\.\d+)?)\s*%?\s*$')


@dataclass(frozen=True)
class MaskPolicy:
    family: str = 'FIF'
    size_mode: str = 'uniform'
    x_percent: float = 50.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError("unknown mask family {0!r}; expected one of {1}".format(self.family, FAMILIES))
        if self.size_mode not in SIZE_MODES:
            raise ConfigError("unknown size mode {0!r}; expected one of {1}".format(self.size_mode, SIZE_MODES))
        if not 0.0 <= float(self.x_percent) <= 100.0:
            raise ConfigError("x_percent must lie in [0, 100], got {0}".format(self.x_percent))

    @classmethod
    def parse(cls, label):
        """'FIF 25' is a constant 25% mask, 'FIF 0-50' a size drawn from [0, 50]%."""
        match = _LABEL.match(label)
        if not match:
            raise ConfigError("cannot parse mask policy {0!r}".format(label))
        family, lower, upper = match.groups()
        return cls(family=family, size_mode='uniform' if lower is not None else 'constant', x_percent=float(upper))

    @property
    def label(self):
        x = '{0:g}'.format(self.x_percent)
        if self.size_mode == 'uniform':
            return '{0} 0-{1}'.format(self.family, x)
        return '{0} {1}'.format(self.family, x)

    def to_dict(self):
        return {'family': self.family, 'size_mode': self.size_mode, 'x_percent': float(self.x_percent)}

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {'family', 'size_mode', 'x_percent'}
        if unknown:
            raise ConfigError("unknown mask_policy keys: {0}".format(sorted(unknown)))
        return cls(**data)


ALL_ONES_POLICY = MaskPolicy('FIF', 'constant', 0.0)


@dataclass
class Mask:
    values: np.ndarray
    policy: MaskPolicy = ALL_ONES_POLICY
    seed_trace: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class MaskedMel:
    values: np.ndarray
    source_mask: Mask

    @property
    def shape(self):
        return self.values.shape


def _check_dims(dims):
    n_bins, n_frames = (int(d) for d in dims)
    if n_bins < 1 or n_frames < 1:
        raise ShapeMismatchError("mask dims must be >= 1, got {0}x{1}".format(n_bins, n_frames))
    return n_bins, n_frames


def sample_mask(policy, dims, rng):
    n_bins, n_frames = _check_dims(dims)
    trace = {'rng_state': rng.bit_generator.state}
    if policy.size_mode == 'constant':
        size = float(policy.x_percent)
    else:
        size = float(rng.uniform(0.0, policy.x_percent))
    trace['size_percent'] = size

    values = np.ones((n_bins, n_frames), dtype=np.float64)
    if policy.family in ('FIF', 'FIF_NS'):
        k = min(round_half_up(n_frames * size / 100.0), n_frames)
        trace['zero_frames'] = k
        if k > 0 and policy.family == 'FIF':
            start = int(rng.integers(0, n_frames - k, endpoint=True))
            values[:, start:start + k] = 0.0
            trace['start'] = start
        elif k > 0:
            frames = np.sort(rng.choice(n_frames, size=k, replace=False))
            values[:, frames] = 0.0
            trace['frames'] = frames.tolist()
    elif policy.family == 'FIS':
        k = min(round_half_up(n_bins * size / 100.0), n_bins)
        trace['zero_bins'] = k
        if k > 0:
            start = int(rng.integers(0, n_bins - k, endpoint=True))
            values[start:start + k, :] = 0.0
            trace['start'] = start
    else:
        dropped = rng.random((n_bins, n_frames)) < size / 100.0
        values[dropped] = 0.0
        trace['zero_cells'] = int(dropped.sum())
    return Mask(values=values, policy=policy, seed_trace=trace)


def sample_mask_batch(policy, dims, rng, n):
    return [sample_mask(policy, dims, rng) for _ in range(n)]


def all_ones_mask(dims):
    n_bins, n_frames = _check_dims(dims)
    return Mask(values=np.ones((n_bins, n_frames), dtype=np.float64), policy=ALL_ONES_POLICY,
                seed_trace={'size_percent': 0.0})


def apply_mask(x, m):
    """x * m elementwise; accepts a MelSpectrogram, MaskedMel or plain array."""
    values = np.asarray(getattr(x, 'values', x), dtype=np.float64)
    if values.shape != m.values.shape:
        raise ShapeMismatchError("mel is {0} but mask is {1}".format(values.shape, m.values.shape))
    return MaskedMel(values=values * m.values, source_mask=m)


def masked_fraction(m):
    return float(1.0 - m.values.mean())
