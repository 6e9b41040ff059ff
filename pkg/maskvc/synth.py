"""
Synthetic two-domain corpora of harmonic stacks.

Every utterance is a "sentence" (f0 contour shape, duration, loudness
envelope) drawn from its sentence seed and rendered with a domain's voice
(f0 range, harmonic count, formant centers). Training sentences are disjoint
between domains; the eval split renders the same sentences in both.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from .errors import ConfigError
from .features import Waveform, save_waveform
from .util import derive_rng, progress_enabled

logger = logging.getLogger(__name__)

CONTOURS = ('sine', 'glide', 'flat')
MANIFEST_NAME = 'manifest.csv'
MANIFEST_FIELDS = ('file', 'domain', 'split', 'sentence_seed', 'f0_mean_hz', 'f0_min_hz', 'f0_max_hz', 'duration_s')
PEAK_LEVEL = 0.5


@dataclass(frozen=True)
class VoiceParams:
    f0_low_hz: float = 100.0
    f0_high_hz: float = 140.0
    harmonics: int = 30
    formants_hz: tuple = (500.0, 1500.0, 2500.0)
    formant_width_hz: float = 120.0
    formant_gain: float = 2.0
    contour: str = 'sine'

    def shifted(self, f0_ratio=2.0, formant_shift=1.1):
        """Same voice an f0 ratio higher, formants scaled, harmonics cut to stay below 8 kHz."""
        harmonics = max(1, min(self.harmonics, int(8000.0 // (self.f0_high_hz * f0_ratio))))
        return VoiceParams(self.f0_low_hz * f0_ratio, self.f0_high_hz * f0_ratio, harmonics,
                           tuple(f * formant_shift for f in self.formants_hz), self.formant_width_hz,
                           self.formant_gain, self.contour)


@dataclass
class SynthSpec:
    n_utterances: int = 10
    n_eval: int = 0
    duration_s: tuple = (1.0, 2.0)
    domain_a: VoiceParams = field(default_factory=VoiceParams)
    domain_b: VoiceParams = field(default_factory=lambda: VoiceParams().shifted())
    noise_floor: float = 1e-3
    seed: int = 0
    sample_rate_hz: int = 22050

    def validate(self):
        if self.n_utterances < 1 or self.n_eval < 0:
            raise ConfigError("need n_utterances >= 1 and n_eval >= 0")
        lo, hi = self.duration_s
        if not 0 < lo <= hi:
            raise ConfigError("duration range must satisfy 0 < low <= high, got {0}".format(self.duration_s))
        if self.domain_a == self.domain_b:
            raise ConfigError("domains A and B must differ in at least one voice parameter")
        if self.noise_floor < 0:
            raise ConfigError("noise_floor must be >= 0")
        nyquist = self.sample_rate_hz / 2.0
        for name, voice in (('A', self.domain_a), ('B', self.domain_b)):
            if voice.contour not in CONTOURS:
                raise ConfigError("domain {0}: unknown contour {1!r}".format(name, voice.contour))
            if not 0 < voice.f0_low_hz <= voice.f0_high_hz:
                raise ConfigError("domain {0}: need 0 < f0_low <= f0_high".format(name))
            if voice.harmonics < 1 or voice.harmonics * voice.f0_high_hz >= nyquist:
                raise ConfigError("domain {0}: {1} harmonics of {2} Hz reach Nyquist ({3} Hz)"
                                  .format(name, voice.harmonics, voice.f0_high_hz, nyquist))
            if any(not 0 < f < nyquist for f in voice.formants_hz):
                raise ConfigError("domain {0}: formant centers must lie in (0, {1}) Hz".format(name, nyquist))
        return self

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Sentence:
    seed: int
    duration_s: float
    shape: np.ndarray
    envelope: np.ndarray


def draw_sentence(spec, sentence_seed, contour):
    rng = derive_rng(spec.seed, sentence_seed)
    duration = float(rng.uniform(*spec.duration_s))
    n = int(round(duration * spec.sample_rate_hz))
    t = np.arange(n) / spec.sample_rate_hz
    if contour == 'sine':
        rate, phase = rng.uniform(0.5, 2.0), rng.uniform(0, 2 * np.pi)
        shape = 0.5 + 0.5 * np.sin(2 * np.pi * rate * t + phase)
    elif contour == 'glide':
        shape = np.linspace(*rng.uniform(0.0, 1.0, size=2), num=n)
    else:
        shape = np.full(n, 0.5)
    # slow loudness wobble with 20 ms fades
    wobble = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * t + rng.uniform(0, 2 * np.pi))
    fade = min(n // 2, int(0.02 * spec.sample_rate_hz))
    envelope = wobble
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, fade))
        envelope[:fade] *= ramp
        envelope[n - fade:] *= ramp[::-1]
    return Sentence(seed=sentence_seed, duration_s=n / spec.sample_rate_hz, shape=shape, envelope=envelope)


def formant_gain(voice, freqs):
    gain = np.ones_like(freqs)
    for center in voice.formants_hz:
        gain += voice.formant_gain * np.exp(-0.5 * ((freqs - center) / voice.formant_width_hz) ** 2)
    return gain


def render(spec, voice, sentence, noise_seed):
    """Harmonic stack with 1/k tilt and formant emphasis; returns (Waveform, f0 track)."""
    sr = spec.sample_rate_hz
    f0 = voice.f0_low_hz + (voice.f0_high_hz - voice.f0_low_hz) * sentence.shape
    phase = 2 * np.pi * np.cumsum(f0) / sr
    samples = np.zeros_like(f0)
    for k in range(1, voice.harmonics + 1):
        samples += (formant_gain(voice, k * f0) / k) * np.sin(k * phase)
    samples *= sentence.envelope
    samples *= PEAK_LEVEL / max(np.max(np.abs(samples)), 1e-12)
    if spec.noise_floor:
        samples += spec.noise_floor * derive_rng(spec.seed, noise_seed, 1).standard_normal(samples.size)
    return Waveform(samples=np.clip(samples, -1.0, 1.0), sample_rate_hz=sr), f0


def _jobs(spec):
    n = spec.n_utterances
    for i in range(n):
        yield 'A', 'train', i, 'A/train/a_{0:04d}.wav'.format(i)
        yield 'B', 'train', n + i, 'B/train/b_{0:04d}.wav'.format(i)
    for i in range(spec.n_eval):
        for domain in ('A', 'B'):
            yield domain, 'eval', 2 * n + i, '{0}/eval/eval_{1:04d}.wav'.format(domain, i)


def generate(spec, out_dir):
    """Write WAVs and manifest.csv under ``out_dir``; returns the manifest rows."""
    spec.validate()
    out_dir = Path(out_dir)
    rows = []
    jobs = list(_jobs(spec))
    for index, (domain, split, sentence_seed, rel) in enumerate(tqdm(jobs, desc='synth',
                                                                        disable=not progress_enabled())):
        voice = spec.domain_a if domain == 'A' else spec.domain_b
        sentence = draw_sentence(spec, sentence_seed, voice.contour)
        wav, f0 = render(spec, voice, sentence, noise_seed=index)
        save_waveform(wav, out_dir / rel)
        rows.append({'file': rel, 'domain': domain, 'split': split, 'sentence_seed': sentence_seed,
                     'f0_mean_hz': float(np.mean(f0)), 'f0_min_hz': float(np.min(f0)),
                     'f0_max_hz': float(np.max(f0)), 'duration_s': sentence.duration_s})
    with open(out_dir / MANIFEST_NAME, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    logger.info("synthesized %d files into %s", len(rows), out_dir)
    return rows


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path, 'r', newline='', encoding='utf-8') as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        row['sentence_seed'] = int(row['sentence_seed'])
        for key in ('f0_mean_hz', 'f0_min_hz', 'f0_max_hz', 'duration_s'):
            row[key] = float(row[key])
    return rows
