import numpy as np
import torch

from .features import MelSpectrogram, NormStats, StftConfig, save_features
from .util import derive_rng


def random_mel(n_bins, n_frames, seed=0, normalized=True, domain_tag=''):
    values = derive_rng(seed).standard_normal((n_bins, n_frames))
    return MelSpectrogram(values=values, domain_tag=domain_tag, normalized=normalized)


def harmonic_mel(n_bins, n_frames, seed=0, spacing=6.0, normalized=True, domain_tag=''):
    """Slowly drifting ridges, so frames are predictable from their neighbours."""
    rng = derive_rng(seed, 1)
    t = np.arange(n_frames)
    drift = 1.5 * np.sin(2 * np.pi * t / rng.uniform(20, 60) + rng.uniform(0, 2 * np.pi))
    bins = np.arange(n_bins)[:, None]
    ridges = np.cos(2 * np.pi * (bins + drift[None, :]) / spacing)
    values = ridges + 0.05 * rng.standard_normal((n_bins, n_frames))
    if not normalized:
        values = values - 6.0
    return MelSpectrogram(values=values, domain_tag=domain_tag, normalized=normalized)


class MockupCorpus(list):

    def __init__(self, n_utterances, n_bins=80, frames=(64, 96), seed=0, kind='harmonic', domain_tag='',
                 normalized=True, spacing=6.0):
        super().__init__()
        rng = derive_rng(seed)
        make = harmonic_mel if kind == 'harmonic' else random_mel
        extra = {'spacing': spacing} if kind == 'harmonic' else {}
        for i in range(n_utterances):
            n_frames = int(rng.integers(frames[0], frames[1], endpoint=True))
            self.append(make(n_bins, n_frames, seed=seed * 1000 + i, normalized=normalized,
                             domain_tag=domain_tag, **extra))

    def write(self, directory, cfg=None):
        cfg = cfg or StftConfig(mel_bins=self[0].n_bins)
        return [save_features(mel, '{0}/utt_{1:04d}.mel'.format(directory, i), cfg) for i, mel in enumerate(self)]


def unit_stats(n_bins, corpus_id=''):
    return NormStats(mean=np.zeros(n_bins), std=np.ones(n_bins), corpus_id=corpus_id)


def freeze_discriminator(discriminator, bias=0.25):
    """All weights zero and a constant output bias: every patch scores ``bias``."""
    with torch.no_grad():
        for p in discriminator.parameters():
            p.zero_()
        discriminator.output.bias.fill_(bias)
    return discriminator


def freeze_discriminators(state, bias=0.25):
    for name in ('d_x', 'd_y', 'd2_x', 'd2_y'):
        freeze_discriminator(getattr(state, name), bias)
    return state
