import json

import pytest

from maskvc.cli import main
from maskvc.settings import save_json_config

MICRO = ['--preset', 'micro']


@pytest.fixture(scope='module')
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp('cli')
    assert main(['synth', '--out', str(root / 'wav'), '--utterances', '3', '--eval', '2',
                 '--min-duration', '0.8', '--max-duration', '1.0', '--seed', '1']) == 0
    for src, dst in (('A/train', 'x'), ('B/train', 'y'), ('A/eval', 'ex'), ('B/eval', 'ey')):
        assert main(['featurize', '--in', str(root / 'wav' / src), '--out', str(root / 'feat' / dst),
                     '--mel-bins', '8']) == 0
    return root


@pytest.fixture(scope='module')
def trained(corpus):
    assert main(['stats', '--in', str(corpus / 'feat' / 'x'), '--out', str(corpus / 'stats_x.npz'),
                 '--corpus-id', 'X']) == 0
    code = main(['train', '--x', str(corpus / 'feat' / 'x'), '--y', str(corpus / 'feat' / 'y'),
                 '--stats-x', str(corpus / 'stats_x.npz'), '--out', str(corpus / 'run'), '--iterations', '4',
                 '--checkpoint-every', '2', '--log-every', '1', '--seed', '0'] + MICRO)
    assert code == 0
    return corpus / 'run'


def test_synth_and_featurize_layout(corpus):
    assert len(list((corpus / 'wav').rglob('*.wav'))) == 10
    assert (corpus / 'wav' / 'manifest.csv').is_file()
    assert len(list((corpus / 'feat' / 'x').glob('*.mel'))) == 3
    assert len(list((corpus / 'feat' / 'ey').glob('*.mel'))) == 2


def test_train_outputs(trained):
    assert (trained / 'final.pt').is_file()
    assert (trained / 'ckpt_00000002.pt').is_file() and (trained / 'ckpt_00000004.pt').is_file()
    with open(trained / 'run_config.json', 'r', encoding='utf-8') as f:
        run_config = json.load(f)
    assert run_config['schema_version'] == 1
    assert run_config['preset'] == 'micro' and run_config['iterations'] == 4
    with open(trained / 'train_log.jsonl', 'r', encoding='utf-8') as f:
        assert [json.loads(line)['iteration'] for line in f] == [1, 2, 3, 4]


def test_resume_from_checkpoint(trained, capsys):
    out = trained.parent / 'resumed'
    code = main(['train', '--x', str(trained.parent / 'feat' / 'x'), '--y', str(trained.parent / 'feat' / 'y'),
                 '--stats-x', str(trained.parent / 'stats_x.npz'), '--out', str(out), '--iterations', '6',
                 '--checkpoint-every', '2', '--log-every', '1', '--seed', '0',
                 '--resume', str(trained / 'ckpt_00000002.pt')] + MICRO)
    assert code == 0
    assert capsys.readouterr().out.strip().endswith('final.pt')
    with open(out / 'train_log.jsonl', 'r', encoding='utf-8') as f:
        assert [json.loads(line)['iteration'] for line in f] == [3, 4, 5, 6]


def test_resume_with_changed_config_fails(trained, capsys):
    code = main(['train', '--x', str(trained.parent / 'feat' / 'x'), '--y', str(trained.parent / 'feat' / 'y'),
                 '--out', str(trained.parent / 'other'), '--policy', 'FIS 0-50', '--seed', '0',
                 '--resume', str(trained / 'final.pt')] + MICRO)
    assert code == 1
    assert capsys.readouterr().err.startswith('error: ConfigMismatchError')


def test_convert_and_evaluate(trained, capsys):
    root = trained.parent
    assert main(['convert', '--checkpoint', str(trained / 'final.pt'), '--direction', 'xy',
                 '--in', str(root / 'feat' / 'ex'), '--out', str(root / 'conv')]) == 0
    assert capsys.readouterr().out.strip() == '2 ok, 0 failed'
    assert (root / 'conv' / 'report.csv').is_file()

    assert main(['evaluate', '--converted', str(root / 'conv'), '--target', str(root / 'feat' / 'ey'),
                 '--order', '8']) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == 'file,mcd_db'
    assert len(lines) == 3
    assert all(float(line.split(',')[1]) >= 0.0 for line in lines[1:])


def test_evaluate_against_itself_is_zero(corpus, capsys):
    feat = str(corpus / 'feat' / 'ey')
    assert main(['evaluate', '--converted', feat, '--target', feat, '--order', '8']) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [line.split(',')[1] for line in lines[1:]] == ['0.0000', '0.0000']


def test_inspect_checkpoint(trained, capsys):
    assert main(['inspect-checkpoint', str(trained / 'final.pt')]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info['iteration'] == 4 and info['preset'] == 'micro'
    assert info['mask_policy'] == 'FIF 0-50' and info['mel_bins'] == 8
    assert info['has_stats'] is True and info['format_version'] == 1


def test_plot_log(trained, capsys):
    out = trained.parent / 'losses.png'
    assert main(['plot-log', str(trained / 'train_log.jsonl'), '--out', str(out)]) == 0
    assert out.is_file() and out.stat().st_size > 0


def test_ablate_tiny_matrix(corpus, capsys):
    code = main(['ablate', '--matrix', 'mask_channel', '--x', str(corpus / 'feat' / 'x'), '--y', str(corpus / 'feat' / 'y'),
                 '--eval-x', str(corpus / 'feat' / 'ex'), '--eval-y', str(corpus / 'feat' / 'ey'),
                 '--out', str(corpus / 'ablation'), '--iterations', '2', '--seeds', '0', '--pair', 'A-B'] + MICRO)
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == 'variant,pair,mcd_db,param_count,seed'
    assert [line.split(',')[0] for line in lines[1:]] == ['Mask', 'V2']
    assert all(line.split(',')[1] == 'A-B' for line in lines[1:])


def test_ablate_matrix_config_with_top_level_training_keys(corpus, tmp_path, capsys):
    feat = corpus / 'feat'
    config = {'matrix': 'mask_channel', 'iterations': 2, 'preset': 'micro', 'seeds': '0',
              'x_dir': str(feat / 'x'), 'y_dir': str(feat / 'y'), 'eval_x': str(feat / 'ex'),
              'eval_y': str(feat / 'ey'), 'out_dir': str(tmp_path / 'ablation')}
    path = save_json_config(config, tmp_path / 'matrix.json')
    assert main(['ablate', '--matrix', str(path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == 'variant,pair,mcd_db,param_count,seed'
    assert len(lines) == 3

    unknown = save_json_config(dict(config, learning_rate=0.1), tmp_path / 'unknown.json')
    assert main(['ablate', '--matrix', str(unknown)]) == 1
    assert "unknown matrix config keys: ['learning_rate']" in capsys.readouterr().err


def test_usage_error_exits_2(capsys):
    assert main(['train', '--bogus']) == 2
    assert capsys.readouterr().err.startswith('error: ')
    assert main(['convert']) == 2


def test_missing_data_dir_exits_1(corpus, capsys):
    assert main(['train', '--x', str(corpus / 'feat' / 'x')] + MICRO) == 1
    assert capsys.readouterr().err.startswith('error: ConfigError: missing y_dir')


def test_bad_config_file_exits_1(tmp_path, capsys):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'schema_version': 7}), encoding='utf-8')
    assert main(['train', '--config', str(path)]) == 1
    assert 'ConfigError' in capsys.readouterr().err
    unknown = save_json_config({'learning_rate': 0.1}, tmp_path / 'unknown.json')
    assert main(['train', '--config', str(unknown)]) == 1


def test_empty_feature_dir_exits_1(tmp_path, capsys):
    (tmp_path / 'empty').mkdir()
    assert main(['stats', '--in', str(tmp_path / 'empty'), '--out', str(tmp_path / 's.npz')]) == 1
    assert capsys.readouterr().err.startswith('error: EmptyCorpusError')


def test_help_exits_0(capsys):
    assert main(['--help']) == 0
    assert 'featurize' in capsys.readouterr().out


def test_corrupt_stats_file_exits_1(corpus, tmp_path, capsys):
    garbage = tmp_path / 'stats.npz'
    garbage.write_bytes(b'\x80\x04not a stats archive')
    code = main(['train', '--x', str(corpus / 'feat' / 'x'), '--y', str(corpus / 'feat' / 'y'),
                 '--stats-x', str(garbage), '--out', str(tmp_path / 'run'), '--iterations', '2'] + MICRO)
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith('error: FeatureFileError')
    assert len(err.strip().splitlines()) == 1


def test_corrupt_checkpoint_exits_1(corpus, tmp_path, capsys):
    garbage = tmp_path / 'model.pt'
    garbage.write_bytes(b'definitely not a checkpoint')
    assert main(['inspect-checkpoint', str(garbage)]) == 1
    assert capsys.readouterr().err.startswith('error: CheckpointFileError')
    code = main(['convert', '--checkpoint', str(garbage), '--direction', 'xy',
                 '--in', str(corpus / 'feat' / 'ex'), '--out', str(tmp_path / 'conv')])
    assert code == 1
    assert capsys.readouterr().err.startswith('error: CheckpointFileError')
