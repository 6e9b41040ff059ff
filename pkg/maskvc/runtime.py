"""Test-time conversion: all-ones mask, full-utterance single pass."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from .errors import (ConfigError, ConfigMismatchError, EmptyCorpusError, MaskVCError, NormalizationStateError,
                     ShapeMismatchError, WaveformTooShortError)
from .features import (FEATURE_SUFFIX, denormalize, griffin_lim_audition, list_feature_files, load_features,
                       normalize, save_features, save_waveform)
from .masks import all_ones_mask, apply_mask
from .models import MIN_CONVERTER_FRAMES, Converter, converter_forward, load_checkpoint
from .presets import TIME_DOWNSAMPLE
from .trainer import TrainConfig, stats_from_payload
from .util import progress_enabled

logger = logging.getLogger(__name__)

DIRECTIONS = ('xy', 'yx')
REPORT_NAME = 'report.csv'
REPORT_FIELDS = ('file', 'status', 'frames', 'message')


def pad_frames(values, multiple=TIME_DOWNSAMPLE):
    """Reflect-pad the time axis up to a multiple; returns (padded, original length)."""
    n_frames = values.shape[1]
    extra = (-n_frames) % multiple
    if extra:
        values = np.pad(values, ((0, 0), (0, extra)), mode='reflect')
    return values, n_frames


class ConversionEngine(object):
    """Both converters of a checkpoint plus the per-domain statistics."""

    def __init__(self, payload):
        self.cfg = TrainConfig.from_dict(payload['config'])
        self.stats = {'x': stats_from_payload(payload.get('stats_x')),
                      'y': stats_from_payload(payload.get('stats_y'))}
        self.iteration = int(payload.get('iteration', 0))
        self.converters = {}
        for direction, name in (('xy', 'g_xy'), ('yx', 'g_yx')):
            net = Converter(self.cfg.preset, input_channels=self.cfg.input_channels).to(self.cfg.torch_dtype)
            net.load_state_dict(payload['networks'][name])
            net.eval()
            self.converters[direction] = net

    @classmethod
    def load(cls, path, expected_fingerprint=None, force=False):
        return cls(load_checkpoint(path, expected_fingerprint=expected_fingerprint, force=force))

    @property
    def mel_bins(self):
        return self.converters['xy'].mel_bins

    def _direction(self, direction):
        if direction not in DIRECTIONS:
            raise ConfigError("direction must be one of {0}, got {1!r}".format(DIRECTIONS, direction))
        source, target = direction[0], direction[1]
        return self.converters[direction], source, target

    def _require_stats(self, domain):
        stats = self.stats[domain]
        if stats is None:
            raise ConfigMismatchError("checkpoint carries no normalization statistics for domain {0}".format(domain))
        return stats

    def convert_normalized(self, mel, direction, mask=None):
        """Normalized in, normalized out; length preserved."""
        net, _, target = self._direction(direction)
        if not mel.normalized:
            raise NormalizationStateError("convert expects a mel normalized with the source-domain stats")
        if mel.n_bins != self.mel_bins:
            raise ShapeMismatchError("checkpoint converts {0}-bin mels, got {1}".format(self.mel_bins, mel.n_bins))
        if mel.n_frames < MIN_CONVERTER_FRAMES:
            raise WaveformTooShortError("{0} frames is below the minimum receptive length of {1}"
                                        .format(mel.n_frames, MIN_CONVERTER_FRAMES))
        values, n_frames = pad_frames(mel.values)
        if mask is None:
            mask = all_ones_mask(values.shape)
        out = converter_forward(net, apply_mask(values, mask), mask, domain_tag=target.upper())
        return out.with_values(out.values[:, :n_frames], stats_id=mel.stats_id)

    def convert(self, mel, direction):
        _, source, target = self._direction(direction)
        src_stats = self._require_stats(source)
        tgt_stats = self._require_stats(target)
        if mel.stats_id and src_stats.corpus_id and mel.stats_id != src_stats.corpus_id:
            raise ConfigMismatchError("mel was normalized with {0!r}, checkpoint source stats are {1!r}"
                                      .format(mel.stats_id, src_stats.corpus_id))
        out = self.convert_normalized(mel, direction)
        return denormalize(out.with_values(out.values, stats_id=tgt_stats.corpus_id), tgt_stats)

    def reconstruct(self, mel, mask, direction='xy'):
        """Masked cycle x -> G(x*m, m) -> G'(., 1): normalized reconstruction of ``mel``."""
        if mask.values.shape != mel.shape:
            raise ShapeMismatchError("mask {0} does not match mel {1}".format(mask.values.shape, mel.shape))
        back = direction[::-1]
        if mel.n_frames % TIME_DOWNSAMPLE:
            raise ShapeMismatchError("reconstruction needs a frame count divisible by {0}".format(TIME_DOWNSAMPLE))
        forward = self.convert_normalized(mel, direction, mask=mask)
        return self.convert_normalized(forward, back)


def convert(checkpoint, mel, direction):
    engine = checkpoint if isinstance(checkpoint, ConversionEngine) else ConversionEngine.load(checkpoint)
    with torch.no_grad():
        return engine.convert(mel, direction)


@dataclass
class ConversionReport:
    rows: list = field(default_factory=list)

    @property
    def failed(self):
        return [row for row in self.rows if row['status'] != 'ok']

    def write_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=REPORT_FIELDS)
            writer.writeheader()
            writer.writerows(self.rows)
        return Path(path)


def _convert_file(engine, path, out_dir, direction, wav, seed):
    try:
        mel, stft = load_features(path)
        _, source, _ = engine._direction(direction)
        if not mel.normalized:
            mel = normalize(mel, engine._require_stats(source))
        converted = engine.convert(mel, direction)
        save_features(converted, Path(out_dir) / path.name, stft)
        if wav:
            audio = griffin_lim_audition(converted, stft, seed=seed)
            save_waveform(audio, Path(out_dir) / (path.stem + '.wav'))
        return {'file': path.name, 'status': 'ok', 'frames': converted.n_frames, 'message': ''}
    except MaskVCError as e:
        logger.warning("conversion of %s failed: %s", path.name, e)
        return {'file': path.name, 'status': 'error', 'frames': 0,
                'message': '{0}: {1}'.format(type(e).__name__, e)}


def convert_corpus(checkpoint, dir_in, dir_out, direction, wav=False, jobs=1, seed=0):
    """Convert every feature file in ``dir_in``; one report row per file, failures flagged."""
    engine = checkpoint if isinstance(checkpoint, ConversionEngine) else ConversionEngine.load(checkpoint)
    engine._direction(direction)
    files = list_feature_files(dir_in)
    if not files:
        raise EmptyCorpusError("no {0} files in {1}".format(FEATURE_SUFFIX, dir_in))
    out_dir = Path(dir_out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(path):
        with torch.no_grad():
            return _convert_file(engine, path, out_dir, direction, wav, seed)

    with ThreadPoolExecutor(max_workers=max(1, int(jobs))) as pool:
        rows = list(tqdm(pool.map(work, files), total=len(files), desc='convert', disable=not progress_enabled()))
    report = ConversionReport(rows=rows)
    report.write_csv(out_dir / REPORT_NAME)
    logger.info("converted %d/%d files (%s) into %s", len(rows) - len(report.failed), len(rows), direction, out_dir)
    return report
