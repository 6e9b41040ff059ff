from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, NonFiniteError, NonFiniteLossError, ShapeMismatchError

Scalar = Union[float, torch.Tensor]

# Least-squares targets.
REAL = 1.0
FAKE = 0.0


@dataclass
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_id: float = 5.0
    id_active_until: int = 10000

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.lambda_id < 0 or self.id_active_until < 0:
            raise ConfigError("loss weights must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError("unknown weights keys: {0}".format(sorted(unknown)))
        return cls(**data)


@dataclass
class LossBreakdown:
    adv_xy: Scalar = 0.0
    adv_yx: Scalar = 0.0
    cyc_xyx: Scalar = 0.0
    cyc_yxy: Scalar = 0.0
    id_xy: Scalar = 0.0
    id_yx: Scalar = 0.0
    adv2_xyx: Scalar = 0.0
    adv2_yxy: Scalar = 0.0
    total_g: Scalar = 0.0
    total_d: Scalar = 0.0
    d_x: Scalar = 0.0
    d_y: Scalar = 0.0
    d2_x: Scalar = 0.0
    d2_y: Scalar = 0.0

    def detached(self):
        return LossBreakdown(**{k: float(v) for k, v in self.items()})

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def to_record(self):
        return {k: float(v) for k, v in self.items()}

    def swapped(self):
        """Same breakdown with the X and Y roles exchanged."""
        return LossBreakdown(adv_xy=self.adv_yx, adv_yx=self.adv_xy, cyc_xyx=self.cyc_yxy, cyc_yxy=self.cyc_xyx,
                             id_xy=self.id_yx, id_yx=self.id_xy, adv2_xyx=self.adv2_yxy, adv2_yxy=self.adv2_xyx,
                             total_g=self.total_g, total_d=self.total_d,
                             d_x=self.d_y, d_y=self.d_x, d2_x=self.d2_y, d2_y=self.d2_x)


def _tensor(values):
    if torch.is_tensor(values):
        return values
    return torch.as_tensor(np.asarray(getattr(values, 'values', values), dtype=np.float64))


def _finite(t, what):
    if not bool(torch.isfinite(t).all()):
        raise NonFiniteError("non-finite {0}".format(what))
    return t


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatchError("shapes differ: {0} vs {1}".format(tuple(a.shape), tuple(b.shape)))


def lsgan_d_loss(scores_real, scores_fake):
    real = _finite(_tensor(scores_real), 'real scores')
    fake = _finite(_tensor(scores_fake), 'fake scores')
    return torch.mean((real - REAL) ** 2) + torch.mean((fake - FAKE) ** 2)


def lsgan_g_loss(scores_fake):
    fake = _finite(_tensor(scores_fake), 'fake scores')
    return torch.mean((fake - REAL) ** 2)


def masked_cycle_loss(x, x2):
    """Mean absolute error between x and its cyclic reconstruction x''."""
    a, b = _tensor(x), _tensor(x2)
    _same_shape(a, b)
    return torch.mean(torch.abs(a - b))


# With an all-ones mask the masked cycle loss is the plain one.
cycle_loss = masked_cycle_loss


def identity_loss(y_mapped, y):
    a, b = _tensor(y_mapped), _tensor(y)
    _same_shape(a, b)
    return torch.mean(torch.abs(a - b))


def second_adv_losses(scores_real, scores_recon):
    """(D' loss, generator loss) for the cyclically reconstructed feature."""
    return lsgan_d_loss(scores_real, scores_recon), lsgan_g_loss(scores_recon)


def nonsaturating_d_loss(logits_real, logits_fake):
    # reference form for tests; training uses the least-squares losses
    real = _finite(_tensor(logits_real), 'real logits')
    fake = _finite(_tensor(logits_fake), 'fake logits')
    return (F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
            + F.binary_cross_entropy_with_logits(fake, torch.zeros_like(fake)))


def nonsaturating_g_loss(logits_fake):
    fake = _finite(_tensor(logits_fake), 'fake logits')
    return F.binary_cross_entropy_with_logits(fake, torch.ones_like(fake))


def identity_active(weights, iteration):
    return iteration < weights.id_active_until


def _check_terms(breakdown):
    for name, value in breakdown.items():
        if not math.isfinite(float(value)):
            raise NonFiniteLossError(name, values=breakdown.to_record())


def full_objective(breakdown, weights, iteration):
    """(g_total, d_total); converters minimise g_total, discriminators d_total."""
    _check_terms(breakdown)
    b = breakdown
    g_total = (b.adv_xy + b.adv_yx
               + weights.lambda_cyc * (b.cyc_xyx + b.cyc_yxy)
               + b.adv2_xyx + b.adv2_yxy)
    if identity_active(weights, iteration):
        g_total = g_total + weights.lambda_id * (b.id_xy + b.id_yx)
    d_total = b.d_x + b.d_y + b.d2_x + b.d2_y
    return g_total, d_total
