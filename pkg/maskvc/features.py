"""
Log mel-spectrogram front end.

Waveforms are framed with a centred (reflect-padded) Hann STFT, projected onto a
Slaney-normalised mel filterbank as power, clamped at ``log_floor`` and
log-compressed. Each domain gets its own per-bin normalisation statistics.

Feature files are raw little-endian float32 in bin-major order with a
``<name>.hdr`` key=value sidecar.
"""
from __future__ import annotations

import functools
import logging
import warnings
import zipfile
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import librosa
import numpy as np
import soundfile as sf

from .errors import (AudioFileMissingError, EmptyCorpusError, FeatureFileError, InvalidValuesError,
                     NonMonoInputError, NormalizationStateError, SampleRateError, ShapeMismatchError,
                     UnsupportedEncodingError, WaveformTooShortError, ZeroVarianceWarning, ConfigError)
from .util import from_float32_bytes, to_float32_bytes

logger = logging.getLogger(__name__)

FEATURE_FORMAT_VERSION = 1
FEATURE_SUFFIX = '.mel'
HEADER_SUFFIX = '.hdr'
SUPPORTED_SUBTYPES = ('PCM_16', 'FLOAT')
STD_FLOOR = 1e-8


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 22050

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise WaveformTooShortError("empty waveform")
        if self.sample_rate_hz <= 0:
            raise SampleRateError("sample rate must be positive, got {0}".format(self.sample_rate_hz))
        if not np.all(np.isfinite(self.samples)):
            raise InvalidValuesError("waveform contains non-finite samples")
        if np.max(np.abs(self.samples)) > 1.0:
            raise InvalidValuesError("waveform amplitudes must lie in [-1, 1]")

    @property
    def duration_s(self):
        return self.samples.size / float(self.sample_rate_hz)


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 1024
    hop_length: int = 256
    mel_bins: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 11025.0
    log_floor: float = 1e-5
    sample_rate_hz: int = 22050

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.hop_length < 1 or self.hop_length > self.window_length:
            raise ConfigError("hop_length must be in [1, window_length]")
        if self.mel_bins < 1:
            raise ConfigError("mel_bins must be >= 1")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2.0:
            raise ConfigError("need 0 <= fmin_hz < fmax_hz <= sample_rate/2, got {0}, {1}"
                              .format(self.fmin_hz, self.fmax_hz))
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    def to_header(self):
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_header(cls, header):
        return cls(window_length=int(header['window_length']),
                   hop_length=int(header['hop_length']),
                   mel_bins=int(header['mel_bins']),
                   fmin_hz=float(header['fmin_hz']),
                   fmax_hz=float(header['fmax_hz']),
                   log_floor=float(header['log_floor']),
                   sample_rate_hz=int(header['sample_rate_hz']))

    def frame_count(self, n_samples):
        pad = self.window_length // 2
        return 1 + (n_samples + 2 * pad - self.window_length) // self.hop_length


@dataclass
class MelSpectrogram:
    values: np.ndarray
    domain_tag: str = ''
    normalized: bool = False
    stats_id: str = ''

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatchError("mel-spectrogram must be F x T, got shape {0}".format(self.values.shape))
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ShapeMismatchError("mel-spectrogram needs F >= 1 and T >= 1, got {0}".format(self.values.shape))
        if not np.all(np.isfinite(self.values)):
            raise InvalidValuesError("mel-spectrogram contains non-finite values")

    @property
    def n_bins(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values, **changes):
        return replace(self, values=values, **changes)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    corpus_id: str = ''

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape:
            raise ShapeMismatchError("mean and std shapes differ: {0} vs {1}".format(self.mean.shape, self.std.shape))
        if not np.all(self.std > 0):
            raise InvalidValuesError("std must be strictly positive")

    def _column(self, values, n_bins):
        if values.size not in (1, n_bins):
            raise ShapeMismatchError("stats have {0} bins, mel has {1}".format(values.size, n_bins))
        return values.reshape(-1, 1)


class MomentAccumulator(object):
    """Per-bin running count / mean / M2, mergeable in any order."""

    def __init__(self, n_bins):
        self.count = 0
        self.mean = np.zeros(n_bins, dtype=np.float64)
        self.m2 = np.zeros(n_bins, dtype=np.float64)

    def update(self, mel):
        values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel, dtype=np.float64)
        if values.shape[0] != self.mean.size:
            raise ShapeMismatchError("expected {0} bins, got {1}".format(self.mean.size, values.shape[0]))
        batch = MomentAccumulator(self.mean.size)
        batch.count = values.shape[1]
        batch.mean = values.mean(axis=1)
        batch.m2 = ((values - batch.mean[:, None]) ** 2).sum(axis=1)
        merged = self.merge(batch)
        self.count, self.mean, self.m2 = merged.count, merged.mean, merged.m2
        return self

    def merge(self, other):
        out = MomentAccumulator(self.mean.size)
        n = self.count + other.count
        if n == 0:
            return out
        delta = other.mean - self.mean
        out.count = n
        out.mean = (self.count * self.mean + other.count * other.mean) / n
        out.m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / n)
        return out

    def variance(self):
        if self.count == 0:
            raise EmptyCorpusError("no frames accumulated")
        return self.m2 / self.count


@functools.lru_cache(maxsize=8)
def _filterbank(cfg):
    fb = librosa.filters.mel(sr=cfg.sample_rate_hz, n_fft=cfg.window_length, n_mels=cfg.mel_bins,
                             fmin=cfg.fmin_hz, fmax=cfg.fmax_hz, htk=False, norm='slaney', dtype=np.float64)
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg):
    """F x (window_length/2 + 1) power-to-mel projection (read-only)."""
    return _filterbank(cfg)


def mel_band_edges(cfg):
    """Lower edge, centre and upper edge of each mel band in Hz."""
    freqs = librosa.mel_frequencies(n_mels=cfg.mel_bins + 2, fmin=cfg.fmin_hz, fmax=cfg.fmax_hz, htk=False)
    return freqs[:-2], freqs[1:-1], freqs[2:]


def load_waveform(path, resample=False, target_rate_hz=22050):
    path = Path(path)
    if not path.is_file():
        raise AudioFileMissingError("audio file not found: {0}".format(path))
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise UnsupportedEncodingError("unreadable audio file {0}: {1}".format(path, e))
    if info.format != 'WAV' or info.subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedEncodingError("unsupported encoding {0}/{1} in {2}; expected WAV {3}"
                                       .format(info.format, info.subtype, path, '|'.join(SUPPORTED_SUBTYPES)))
    if info.channels != 1:
        raise NonMonoInputError("non-mono input: {0} has {1} channels".format(path, info.channels))
    samples, rate = sf.read(str(path), dtype='float64', always_2d=False)
    if rate != target_rate_hz:
        if not resample:
            raise SampleRateError("{0} is sampled at {1} Hz, expected {2} Hz (enable resampling to convert)"
                                  .format(path, rate, target_rate_hz))
        logger.debug("resampling %s from %d Hz to %d Hz", path, rate, target_rate_hz)
        samples = librosa.resample(samples, orig_sr=rate, target_sr=target_rate_hz)
        rate = target_rate_hz
    # float WAVs may overshoot full scale
    samples = np.clip(samples, -1.0, 1.0)
    return Waveform(samples=samples, sample_rate_hz=int(rate))


def save_waveform(wav, path, subtype='PCM_16'):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), wav.samples, wav.sample_rate_hz, subtype=subtype)
    return Path(path)


def power_spectrogram(wav, cfg):
    stft = librosa.stft(wav.samples, n_fft=cfg.window_length, hop_length=cfg.hop_length,
                        win_length=cfg.window_length, window='hann', center=True, pad_mode='reflect')
    return np.abs(stft) ** 2


def mel_spectrogram(wav, cfg=StftConfig(), domain_tag=''):
    if wav.sample_rate_hz != cfg.sample_rate_hz:
        raise SampleRateError("waveform is {0} Hz, config expects {1} Hz".format(wav.sample_rate_hz, cfg.sample_rate_hz))
    if wav.samples.size < cfg.window_length:
        raise WaveformTooShortError("waveform has {0} samples, shorter than one window ({1})"
                                    .format(wav.samples.size, cfg.window_length))
    energies = mel_filterbank(cfg) @ power_spectrogram(wav, cfg)
    values = np.log(np.maximum(energies, cfg.log_floor))
    return MelSpectrogram(values=values, domain_tag=domain_tag, normalized=False)


def compute_norm_stats(corpus, corpus_id='', std_floor=STD_FLOOR):
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpusError("cannot compute statistics of an empty corpus")
    acc = None
    for mel in corpus:
        if mel.normalized:
            raise NormalizationStateError("statistics must be computed on unnormalized features")
        if acc is None:
            acc = MomentAccumulator(mel.n_bins)
        acc.update(mel)
    std = np.sqrt(acc.variance())
    flat = std < std_floor
    if np.any(flat):
        bins = np.flatnonzero(flat).tolist()
        msg = "zero-variance mel bins {0} in corpus '{1}'; std clamped to {2}".format(bins, corpus_id, std_floor)
        logger.warning(msg)
        warnings.warn(msg, ZeroVarianceWarning)
        std = np.where(flat, std_floor, std)
    return NormStats(mean=acc.mean, std=std, corpus_id=corpus_id)


def normalize(mel, stats):
    if mel.normalized:
        raise NormalizationStateError("double normalization: mel is already normalized")
    mean = stats._column(stats.mean, mel.n_bins)
    std = stats._column(stats.std, mel.n_bins)
    return mel.with_values((mel.values - mean) / std, normalized=True, stats_id=stats.corpus_id)


def denormalize(mel, stats):
    if not mel.normalized:
        raise NormalizationStateError("mel is not normalized")
    mean = stats._column(stats.mean, mel.n_bins)
    std = stats._column(stats.std, mel.n_bins)
    return mel.with_values(mel.values * std + mean, normalized=False, stats_id='')


def save_norm_stats(stats, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        np.savez(f, mean=stats.mean, std=stats.std, corpus_id=np.array(stats.corpus_id))
    return path


def load_norm_stats(path):
    try:
        with np.load(str(path)) as data:
            return NormStats(mean=data['mean'], std=data['std'], corpus_id=str(data['corpus_id']))
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, OSError, EOFError, zipfile.BadZipFile) as e:
        raise FeatureFileError("corrupt normalization stats {0}: {1}".format(path, e))


def griffin_lim_audition(mel, cfg=StftConfig(), iterations=32, seed=0):
    """Audition-quality waveform from a denormalized log-mel (not a vocoder)."""
    if mel.normalized:
        raise NormalizationStateError("griffin_lim_audition needs a denormalized mel")
    if mel.n_bins != cfg.mel_bins:
        raise ShapeMismatchError("mel has {0} bins, config has {1}".format(mel.n_bins, cfg.mel_bins))
    # energies at the floor came from silence
    power = np.maximum(np.exp(mel.values) - cfg.log_floor, 0.0)
    magnitude = librosa.feature.inverse.mel_to_stft(power, sr=cfg.sample_rate_hz, n_fft=cfg.window_length,
                                                    power=2.0, fmin=cfg.fmin_hz, fmax=cfg.fmax_hz,
                                                    htk=False, norm='slaney')
    samples = librosa.griffinlim(magnitude, n_iter=int(iterations), hop_length=cfg.hop_length,
                                 win_length=cfg.window_length, window='hann', center=True,
                                 init='random', random_state=int(seed))
    return Waveform(samples=np.clip(samples, -1.0, 1.0), sample_rate_hz=cfg.sample_rate_hz)


def header_path(path):
    return Path(str(path) + HEADER_SUFFIX)


def save_features(mel, path, cfg=StftConfig()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'format_version': str(FEATURE_FORMAT_VERSION),
        'bins': str(mel.n_bins),
        'frames': str(mel.n_frames),
        'domain': mel.domain_tag,
        'normalized': '1' if mel.normalized else '0',
        'stats_id': mel.stats_id,
    }
    header.update(cfg.to_header())
    with open(path, 'wb') as f:
        f.write(to_float32_bytes(mel.values))
    with open(header_path(path), 'w', encoding='utf-8') as f:
        for key, value in header.items():
            f.write("{0}={1}\n".format(key, value))
    return path


def read_feature_header(path):
    hdr = header_path(path)
    if not hdr.is_file():
        raise FeatureFileError("missing header {0}".format(hdr))
    header = {}
    with open(hdr, 'r', encoding='utf-8') as f:
        for line in f:
            line = line.rstrip('\n')
            if not line:
                continue
            if '=' not in line:
                raise FeatureFileError("malformed header line in {0}: {1!r}".format(hdr, line))
            key, value = line.split('=', 1)
            header[key] = value
    version = int(header.get('format_version', -1))
    if version != FEATURE_FORMAT_VERSION:
        raise FeatureFileError("unsupported feature format version {0} in {1}".format(version, hdr))
    return header


def load_features(path):
    path = Path(path)
    header = read_feature_header(path)
    try:
        shape = (int(header['bins']), int(header['frames']))
        with open(path, 'rb') as f:
            values = from_float32_bytes(f.read(), shape)
        mel = MelSpectrogram(values=values, domain_tag=header.get('domain', ''),
                             normalized=header.get('normalized') == '1', stats_id=header.get('stats_id', ''))
    except (KeyError, ValueError, OSError) as e:
        raise FeatureFileError("corrupt feature file {0}: {1}".format(path, e))
    return mel, StftConfig.from_header(header)


def list_feature_files(directory):
    return sorted(Path(directory).glob('*' + FEATURE_SUFFIX))


def load_corpus(directory):
    files = list_feature_files(directory)
    if not files:
        raise EmptyCorpusError("no {0} files in {1}".format(FEATURE_SUFFIX, directory))
    return [load_features(p)[0] for p in files]


def featurize_directory(in_dir, out_dir, cfg=StftConfig(), domain_tag='', resample=False):
    wavs = sorted(Path(in_dir).glob('*.wav'))
    if not wavs:
        raise EmptyCorpusError("no .wav files in {0}".format(in_dir))
    written = []
    for wav_path in wavs:
        wav = load_waveform(wav_path, resample=resample, target_rate_hz=cfg.sample_rate_hz)
        mel = mel_spectrogram(wav, cfg, domain_tag=domain_tag)
        written.append(save_features(mel, Path(out_dir) / (wav_path.stem + FEATURE_SUFFIX), cfg))
        logger.debug("featurized %s -> %d frames", wav_path.name, mel.n_frames)
    logger.info("featurized %d files from %s", len(written), in_dir)
    return written
