"""
Command-line entry point: ``python -m maskvc <subcommand>``.

Errors end the process with one line ``error: <ClassName>: <message>`` on
stderr; exit code 2 for usage errors, 1 for everything else.
"""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import click
import torch

from .errors import ConfigError, MaskVCError
from .evaluation import AblationPair, evaluate_pairs, load_matrix, run_ablation
from .features import (StftConfig, compute_norm_stats, featurize_directory, load_corpus, load_norm_stats,
                       normalize, save_norm_stats)
from .models import load_checkpoint
from .plotting import plot_training_log
from .runtime import DIRECTIONS, convert_corpus
from .settings import env_default, load_environment, load_json_config, save_json_config
from .synth import SynthSpec, VoiceParams, generate
from .trainer import TrainConfig, describe_checkpoint, resume_training, run_training, stats_from_payload

logger = logging.getLogger(__name__)

# run-config keys that point at data rather than configure training
DATA_KEYS = ('x_dir', 'y_dir', 'out_dir', 'stats_x', 'stats_y')
TRAIN_KEYS = frozenset(f.name for f in fields(TrainConfig))


def _seed(seed):
    return int(seed if seed is not None else env_default('MASKVC_SEED'))


def _preset(preset):
    return preset or env_default('MASKVC_PRESET')


def _load_domain(directory, stats_path, corpus_id):
    corpus = load_corpus(directory)
    stats = load_norm_stats(stats_path) if stats_path else compute_norm_stats(corpus, corpus_id=corpus_id)
    return [normalize(mel, stats) for mel in corpus], stats


@click.group()
@click.option('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR (default $MASKVC_LOG_LEVEL).')
@click.option('--env-file', default=None, type=click.Path(dir_okay=False), help='.env file with MASKVC_* defaults.')
def cli(log_level, env_file):
    """Masked cycle-consistent voice conversion on log mel-spectrograms."""
    env = load_environment(env_file)
    logging.basicConfig(level=(log_level or env['MASKVC_LOG_LEVEL']).upper(),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s', stream=sys.stderr)
    threads = int(env['MASKVC_THREADS'])
    if threads > 0:
        torch.set_num_threads(threads)


@cli.command()
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--utterances', default=10, show_default=True, help='Training utterances per domain.')
@click.option('--eval', 'n_eval', default=5, show_default=True, help='Parallel held-out utterances per domain.')
@click.option('--min-duration', default=1.0, show_default=True)
@click.option('--max-duration', default=2.0, show_default=True)
@click.option('--f0-ratio', default=2.0, show_default=True, help='Domain B f0 over domain A f0.')
@click.option('--formant-shift', default=1.1, show_default=True)
@click.option('--seed', type=int, default=None)
def synth(out_dir, utterances, n_eval, min_duration, max_duration, f0_ratio, formant_shift, seed):
    """Write a synthetic two-domain WAV corpus and its manifest."""
    voice = VoiceParams()
    spec = SynthSpec(n_utterances=utterances, n_eval=n_eval, duration_s=(min_duration, max_duration),
                     domain_a=voice, domain_b=voice.shifted(f0_ratio, formant_shift), seed=_seed(seed))
    rows = generate(spec, out_dir)
    click.echo(str(Path(out_dir) / 'manifest.csv'))
    logger.info("%d files", len(rows))


@cli.command()
@click.option('--in', 'in_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--domain', default='', help='Domain tag stored in each feature header.')
@click.option('--resample', is_flag=True, help='Resample other rates instead of rejecting them.')
@click.option('--mel-bins', default=80, show_default=True)
def featurize(in_dir, out_dir, domain, resample, mel_bins):
    """WAV directory -> log-mel feature files."""
    written = featurize_directory(in_dir, out_dir, StftConfig(mel_bins=mel_bins), domain_tag=domain,
                                  resample=resample)
    click.echo('{0} files'.format(len(written)))


@cli.command()
@click.option('--in', 'in_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False))
@click.option('--corpus-id', default='', help='Identifier stamped into normalized features.')
def stats(in_dir, out_path, corpus_id):
    """Per-bin normalization statistics of a feature directory."""
    result = compute_norm_stats(load_corpus(in_dir), corpus_id=corpus_id or Path(in_dir).name)
    click.echo(str(save_norm_stats(result, out_path)))


@cli.command()
@click.option('--config', 'config_path', default=None, type=click.Path(dir_okay=False),
              help='JSON run config (schema_version 1).')
@click.option('--x', 'x_dir', default=None, type=click.Path(file_okay=False), help='Domain X feature directory.')
@click.option('--y', 'y_dir', default=None, type=click.Path(file_okay=False), help='Domain Y feature directory.')
@click.option('--stats-x', default=None, type=click.Path(dir_okay=False))
@click.option('--stats-y', default=None, type=click.Path(dir_okay=False))
@click.option('--out', 'out_dir', default=None, type=click.Path(file_okay=False))
@click.option('--iterations', type=int, default=None)
@click.option('--preset', type=click.Choice(['full', 'desk', 'micro']), default=None)
@click.option('--policy', default=None, help="Mask policy label, e.g. 'FIF 0-50'.")
@click.option('--checkpoint-every', type=int, default=None)
@click.option('--log-every', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--resume', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--force', is_flag=True, help='Resume despite a config fingerprint mismatch.')
def train(config_path, x_dir, y_dir, stats_x, stats_y, out_dir, iterations, preset, policy, checkpoint_every,
          log_every, seed, resume, force):
    """Train both converters and all four discriminators."""
    data = load_json_config(config_path) if config_path else {}
    paths = {key: data.pop(key, None) for key in DATA_KEYS}
    flags = {'x_dir': x_dir, 'y_dir': y_dir, 'out_dir': out_dir, 'stats_x': stats_x, 'stats_y': stats_y}
    paths.update({k: v for k, v in flags.items() if v is not None})
    overrides = {'iterations': iterations, 'preset': preset, 'mask_policy': policy,
                 'checkpoint_every': checkpoint_every, 'log_every': log_every, 'seed': seed}
    data.update({k: v for k, v in overrides.items() if v is not None})
    data.setdefault('seed', _seed(None))
    data.setdefault('preset', _preset(None))
    cfg = TrainConfig.from_dict(data)
    for key in ('x_dir', 'y_dir', 'out_dir'):
        if not paths[key]:
            raise ConfigError("missing {0} (flag or config key)".format(key))

    if resume:
        payload = load_checkpoint(resume, expected_fingerprint=cfg.fingerprint(), force=force)
        stored_x, stored_y = stats_from_payload(payload.get('stats_x')), stats_from_payload(payload.get('stats_y'))
        corpus_x = [normalize(m, stored_x) for m in load_corpus(paths['x_dir'])]
        corpus_y = [normalize(m, stored_y) for m in load_corpus(paths['y_dir'])]
    else:
        corpus_x, stored_x = _load_domain(paths['x_dir'], paths['stats_x'], 'X')
        corpus_y, stored_y = _load_domain(paths['y_dir'], paths['stats_y'], 'Y')
    out = Path(paths['out_dir'])
    out.mkdir(parents=True, exist_ok=True)
    save_json_config(dict(cfg.to_dict(), **{k: v for k, v in paths.items() if v}), out / 'run_config.json')
    logger.info("effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    if resume:
        final = resume_training(resume, cfg, corpus_x, corpus_y, out, force=force)
    else:
        final = run_training(cfg, corpus_x, corpus_y, out, stats_x=stored_x, stats_y=stored_y)
    click.echo(str(final))


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--direction', required=True, type=click.Choice(DIRECTIONS))
@click.option('--in', 'in_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--wav', is_flag=True, help='Also write Griffin-Lim audition WAVs.')
@click.option('--jobs', default=1, show_default=True)
@click.option('--seed', type=int, default=None, help='Griffin-Lim phase initialisation seed.')
def convert(checkpoint, direction, in_dir, out_dir, wav, jobs, seed):
    """Convert a feature directory with the all-ones mask."""
    report = convert_corpus(checkpoint, in_dir, out_dir, direction, wav=wav, jobs=jobs, seed=_seed(seed))
    click.echo('{0} ok, {1} failed'.format(len(report.rows) - len(report.failed), len(report.failed)))


@cli.command()
@click.option('--converted', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--target', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--order', default=35, show_default=True)
def evaluate(converted, target, order):
    """MCD of converted features against same-named target features (CSV on stdout)."""
    click.echo('file,mcd_db')
    for row in evaluate_pairs(converted, target, order=order):
        click.echo('{0},{1:.4f}'.format(row['file'], row['mcd_db']))


@cli.command()
@click.option('--matrix', 'matrix_source', required=True,
              help='mask_size, mask_type, mask_channel, or a JSON matrix config.')
@click.option('--x', 'x_dir', default=None, type=click.Path(file_okay=False))
@click.option('--y', 'y_dir', default=None, type=click.Path(file_okay=False))
@click.option('--eval-x', default=None, type=click.Path(file_okay=False), help='Held-out source features.')
@click.option('--eval-y', default=None, type=click.Path(file_okay=False), help='Parallel held-out targets.')
@click.option('--pair', default=None, help='Pair label in the report.')
@click.option('--out', 'out_dir', default=None, type=click.Path(file_okay=False))
@click.option('--seeds', default=None, help='Comma-separated seeds.')
@click.option('--iterations', type=int, default=None)
@click.option('--preset', type=click.Choice(['full', 'desk', 'micro']), default=None)
def ablate(matrix_source, x_dir, y_dir, eval_x, eval_y, pair, out_dir, seeds, iterations, preset):
    """Train and score every variant of an ablation matrix (CSV on stdout)."""
    variants, data = load_matrix(matrix_source)
    flags = {'x_dir': x_dir, 'y_dir': y_dir, 'eval_x': eval_x, 'eval_y': eval_y, 'pair': pair,
             'out_dir': out_dir, 'seeds': seeds}
    for key, value in flags.items():
        if value is not None:
            data[key] = value
    seed_list = data.pop('seeds', None) or str(_seed(None))
    if isinstance(seed_list, str):
        seed_list = [int(s) for s in seed_list.split(',') if s.strip()]
    places = {key: data.pop(key, None) for key in ('x_dir', 'y_dir', 'eval_x', 'eval_y', 'out_dir')}
    missing = [key for key, value in places.items() if not value]
    if missing:
        raise ConfigError("missing {0} (flag or matrix config key)".format(', '.join(missing)))
    pair_name = data.pop('pair', None) or 'X-Y'
    base = dict(data.pop('train', {}))
    # training keys may also sit at the top level; the 'train' section wins
    for key in TRAIN_KEYS & set(data):
        base.setdefault(key, data.pop(key))
    if iterations is not None:
        base['iterations'] = iterations
    base['preset'] = preset or base.get('preset') or _preset(None)
    if data:
        raise ConfigError("unknown matrix config keys: {0}".format(sorted(data)))
    base_cfg = TrainConfig.from_dict(base)

    train_x, stats_x = _load_domain(places['x_dir'], None, 'X')
    train_y, stats_y = _load_domain(places['y_dir'], None, 'Y')
    held_x = [normalize(m, stats_x) for m in load_corpus(places['eval_x'])]
    held_y = load_corpus(places['eval_y'])
    corpora = [AblationPair(pair_name, train_x, train_y, held_x, held_y, stats_x, stats_y)]
    report = run_ablation(variants, corpora, base_cfg, seed_list, places['out_dir'])
    with open(Path(places['out_dir']) / 'ablation.csv', 'r', encoding='utf-8') as f:
        click.echo(f.read().rstrip('\n'))
    logger.info("\n%s", report.render())


@cli.command('inspect-checkpoint')
@click.argument('checkpoint', type=click.Path(exists=True, dir_okay=False))
def inspect_checkpoint(checkpoint):
    """Summarise a checkpoint as JSON."""
    click.echo(json.dumps(describe_checkpoint(load_checkpoint(checkpoint)), indent=2, sort_keys=True))


@cli.command('plot-log')
@click.argument('log', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False))
def plot_log(log, out_path):
    """Plot the loss terms of a training log."""
    click.echo(str(plot_training_log(log, out_path)))


def main(argv=None):
    try:
        cli.main(args=argv, prog_name='maskvc', standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.UsageError as e:
        click.echo('error: {0}: {1}'.format(type(e).__name__, e.format_message()), err=True)
        return 2
    except click.ClickException as e:
        click.echo('error: {0}: {1}'.format(type(e).__name__, e.format_message()), err=True)
        return 1
    except click.exceptions.Abort:
        click.echo('error: Abort: interrupted', err=True)
        return 1
    except (MaskVCError, OSError) as e:
        click.echo('error: {0}: {1}'.format(type(e).__name__, e), err=True)
        return 1
    return 0
