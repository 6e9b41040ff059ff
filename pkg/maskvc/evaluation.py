"""
Objective metrics and the ablation harness.

Mel-cepstra here are the orthonormal DCT-II of our log-mel frames, not a
WORLD analysis, so absolute MCD values are only comparable between variants
of the same run, never with full-scale published numbers.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import librosa
import numpy as np
import scipy.fft

from .errors import (ConfigError, EmptyCorpusError, InvalidValuesError, MaskVCError, NormalizationStateError,
                     ShapeMismatchError)
from .features import list_feature_files, load_features
from .masks import MaskPolicy, sample_mask
from .models import count_params
from .presets import ABLATION_MATRICES, PUBLISHED_REFERENCE_MCD, TIME_DOWNSAMPLE
from .registry import AblationRegistry
from .runtime import ConversionEngine
from .settings import load_json_config
from .trainer import run_training
from .util import derive_rng

logger = logging.getLogger(__name__)

MCD_CONSTANT = 10.0 * math.sqrt(2.0) / math.log(10.0)
DEFAULT_ORDER = 35
CSV_FIELDS = ('variant', 'pair', 'mcd_db', 'param_count', 'seed')
EVAL_POLICY = MaskPolicy('FIF', 'constant', 25.0)
ALIGNMENT = 'dtw, symmetric steps (1,0),(0,1),(1,1), no band constraint, euclidean over c1..'
CEPSTRUM = 'orthonormal DCT-II of the log-mel frame, c0 excluded from distances'


@dataclass
class MelCepstrum:
    """C x T coefficients; row 0 is c0 and never enters a distance."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ShapeMismatchError("mel-cepstrum must be C x T with T >= 1, got {0}".format(self.values.shape))
        if not np.all(np.isfinite(self.values)):
            raise InvalidValuesError("mel-cepstrum contains non-finite values")

    @property
    def order(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]


@dataclass
class Alignment:
    path: np.ndarray
    cost: float

    def __len__(self):
        return len(self.path)


def mel_cepstrum(mel, order=DEFAULT_ORDER):
    if mel.normalized:
        raise NormalizationStateError("mel-cepstra are taken from denormalized log-mels")
    if order < 1 or order > mel.n_bins:
        raise ConfigError("cepstral order must lie in [1, {0}], got {1}".format(mel.n_bins, order))
    coefficients = scipy.fft.dct(mel.values, type=2, norm='ortho', axis=0)
    return MelCepstrum(values=coefficients[:order])


def inverse_mel_cepstrum(cep):
    return scipy.fft.idct(cep.values, type=2, norm='ortho', axis=0)


def dtw_align(a, b):
    """Monotone continuous path from (0, 0) to (Ta-1, Tb-1); cost sums frame distances."""
    if a.order != b.order:
        raise ShapeMismatchError("orders differ: {0} vs {1}".format(a.order, b.order))
    cost, path = librosa.sequence.dtw(X=a.values[1:], Y=b.values[1:], metric='euclidean', backtrack=True)
    return Alignment(path=np.asarray(path[::-1], dtype=np.int64), cost=float(cost[-1, -1]))


def mcd(converted, target, alignment=None):
    if alignment is None:
        alignment = dtw_align(converted, target)
    path = np.asarray(getattr(alignment, 'path', alignment))
    if path.size == 0:
        raise ShapeMismatchError("empty alignment path")
    diff = converted.values[1:, path[:, 0]] - target.values[1:, path[:, 1]]
    return float(MCD_CONSTANT * np.mean(np.sqrt(np.sum(diff ** 2, axis=0))))


def mel_mcd(converted, target, order=DEFAULT_ORDER):
    return mcd(mel_cepstrum(converted, order), mel_cepstrum(target, order))


def masked_frame_l1(engine, corpus, policy=EVAL_POLICY, seed=0, direction='xy'):
    """Mean |x - x''| over masked cells of a held-out normalized corpus."""
    errors = []
    for index, mel in enumerate(corpus):
        usable = mel.n_frames - mel.n_frames % TIME_DOWNSAMPLE
        if usable < TIME_DOWNSAMPLE * 2:
            continue
        mel = mel.with_values(mel.values[:, :usable])
        mask = sample_mask(policy, mel.shape, derive_rng(seed, index))
        hidden = mask.values == 0
        if not hidden.any():
            continue
        recon = engine.reconstruct(mel, mask, direction)
        errors.append(np.abs(mel.values - recon.values)[hidden])
    if not errors:
        raise EmptyCorpusError("no utterance in the held-out corpus had masked frames")
    return float(np.mean(np.concatenate(errors)))


def evaluate_pairs(converted_dir, target_dir, order=DEFAULT_ORDER):
    """MCD per converted feature file against the same-named target file."""
    targets = {p.name: p for p in list_feature_files(target_dir)}
    rows = []
    for path in list_feature_files(converted_dir):
        if path.name not in targets:
            logger.warning("no target for %s", path.name)
            continue
        converted, _ = load_features(path)
        target, _ = load_features(targets[path.name])
        a, b = mel_cepstrum(converted, order), mel_cepstrum(target, order)
        alignment = dtw_align(a, b)
        rows.append({'file': path.name, 'mcd_db': mcd(a, b, alignment), 'path_length': len(alignment)})
    if not rows:
        raise EmptyCorpusError("no converted file in {0} has a counterpart in {1}".format(converted_dir, target_dir))
    return rows


@dataclass(frozen=True)
class AblationVariant:
    label: str
    policy: MaskPolicy
    input_channels: int = 2

    def apply(self, cfg, seed):
        return replace(cfg, mask_policy=self.policy, input_channels=self.input_channels, seed=seed).validate()


def ablation_matrix(name):
    try:
        rows = ABLATION_MATRICES[name]
    except KeyError:
        raise ConfigError("unknown ablation matrix {0!r}; expected one of {1}".format(name, sorted(ABLATION_MATRICES)))
    return [AblationVariant(label, MaskPolicy.parse(policy), channels) for label, policy, channels in rows]


def load_matrix(source):
    """A built-in matrix name, or a JSON config naming one or listing variants."""
    if source in ABLATION_MATRICES:
        return ablation_matrix(source), {}
    data = load_json_config(source)
    variants = data.pop('variants', None)
    matrix = data.pop('matrix', None)
    if variants is None and matrix is None:
        raise ConfigError("matrix config {0} needs 'matrix' or 'variants'".format(source))
    if variants is None:
        return ablation_matrix(matrix), data
    parsed = []
    for row in variants:
        unknown = set(row) - {'label', 'policy', 'input_channels'}
        if unknown:
            raise ConfigError("unknown variant keys: {0}".format(sorted(unknown)))
        policy = MaskPolicy.parse(row['policy'])
        parsed.append(AblationVariant(row.get('label', policy.label), policy, int(row.get('input_channels', 2))))
    return parsed, data


@dataclass
class AblationPair:
    """Training corpora (normalized) and a parallel held-out split for one speaker pair."""
    name: str
    train_x: list
    train_y: list
    eval_x: list
    eval_y: list
    stats_x: object
    stats_y: object


@dataclass
class AblationRow:
    variant: str
    pair: str
    seed: int
    mcd_db: float = float('nan')
    param_count: int = 0
    masked_l1: float = float('nan')
    status: str = 'ok'
    message: str = ''

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=lambda: {'alignment': ALIGNMENT, 'cepstrum': CEPSTRUM,
                                                    'kdsd': 'absent'})

    def cell(self, variant, pair, seed):
        for row in self.rows:
            if (row.variant, row.pair, row.seed) == (variant, pair, seed):
                return row
        return None

    def median(self, variant, metric='mcd_db', pair=None):
        values = [getattr(r, metric) for r in self.rows
                  if r.variant == variant and r.status == 'ok' and (pair is None or r.pair == pair)]
        return float(np.median(values)) if values else float('nan')

    def write_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(CSV_FIELDS)
            for r in self.rows:
                writer.writerow([r.variant, r.pair, '{0:.6f}'.format(r.mcd_db), r.param_count, r.seed])
        return Path(path)

    def write_metadata(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({'metadata': self.metadata, 'cells': [r.to_dict() for r in self.rows]}, f, indent=2)
        return Path(path)

    def render(self):
        """Text table: one line per variant, MCD per pair, #param, full-scale reference."""
        pairs = sorted({r.pair for r in self.rows})
        variants = list(dict.fromkeys(r.variant for r in self.rows))
        header = ['variant'] + ['MCD {0}'.format(p) for p in pairs] + ['#param', 'reference SF-TF']
        lines = [header]
        for variant in variants:
            line = [variant]
            for pair in pairs:
                cells = [r for r in self.rows if r.variant == variant and r.pair == pair]
                if cells and all(r.status != 'ok' for r in cells):
                    line.append('FAILED')
                else:
                    line.append('{0:.2f}'.format(self.median(variant, pair=pair)))
            params = [r.param_count for r in self.rows if r.variant == variant and r.param_count]
            line.append('{0:.1f}k'.format(params[0] / 1e3) if params else '-')
            ref = PUBLISHED_REFERENCE_MCD.get((variant, 'SF-TF'))
            line.append('({0:.2f})'.format(ref) if ref is not None else '-')
            lines.append(line)
        widths = [max(len(str(row[i])) for row in lines) for i in range(len(header))]
        text = ['  '.join(str(c).ljust(w) for c, w in zip(row, widths)) for row in lines]
        text.append('reference values are full-scale published MCDs; not comparable with this run')
        text.append('alignment: {0}'.format(self.metadata['alignment']))
        return '\n'.join(text)


def _run_cell(variant, pair, seed, base_cfg, cell_dir):
    cfg = variant.apply(base_cfg, seed)
    checkpoint = run_training(cfg, pair.train_x, pair.train_y, cell_dir, pair.stats_x, pair.stats_y)
    engine = ConversionEngine.load(checkpoint)
    order = min(DEFAULT_ORDER, engine.mel_bins)
    scores = [mel_mcd(engine.convert(src, 'xy'), tgt, order) for src, tgt in zip(pair.eval_x, pair.eval_y)]
    if not scores:
        raise EmptyCorpusError("pair {0} has no held-out utterances".format(pair.name))
    row = AblationRow(variant=variant.label, pair=pair.name, seed=seed, mcd_db=float(np.mean(scores)),
                      param_count=count_params(engine.converters['xy']))
    row.masked_l1 = masked_frame_l1(engine, pair.eval_x, seed=seed)
    return row, cfg.fingerprint()


def run_ablation(variants, pairs, base_cfg, seeds, out_dir, registry=None):
    """Train and score every (variant, pair, seed) cell; failed cells are flagged, not fatal."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    registry = registry if registry is not None else AblationRegistry(out_dir / 'cells.db')
    report = AblationReport()
    for variant in variants:
        for pair in pairs:
            for seed in seeds:
                cfg = variant.apply(base_cfg, seed)
                key = AblationRegistry.cell_key(variant.label, pair.name, seed, cfg.fingerprint(), cfg.iterations)
                stored = registry.get_cell(key)
                if stored is not None and stored['status'] == 'ok':
                    logger.info("cell %s / %s / seed %d already done, skipping", variant.label, pair.name, seed)
                    report.rows.append(AblationRow(**{k: stored[k] for k in AblationRow.__dataclass_fields__}))
                    continue
                cell_dir = out_dir / AblationRegistry.cell_dirname(variant.label, pair.name, seed)
                try:
                    row, _ = _run_cell(variant, pair, seed, base_cfg, cell_dir)
                except (MaskVCError, RuntimeError) as e:
                    logger.error("cell %s / %s / seed %d failed: %s", variant.label, pair.name, seed, e)
                    row = AblationRow(variant=variant.label, pair=pair.name, seed=seed, status='failed',
                                      message='{0}: {1}'.format(type(e).__name__, e))
                registry.add_cell(key, row.to_dict())
                report.rows.append(row)
    report.write_csv(out_dir / 'ablation.csv')
    report.write_metadata(out_dir / 'ablation_meta.json')
    return report
