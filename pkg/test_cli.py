import os

import pytest
from click.testing import CliRunner

from checkpoint import save_checkpoint
from cli import cli
from dataset import Manifest
from metrics import MetricsReport
from models import MVNet, model_manager

TINY_LINES = [
    'model.encoder_channels=4,4',
    'model.lstm_hidden=8',
    'model.tdnn_channels=16,16,16,16,8',
    'model.embedding_dim=8',
    'model.tdnn_divisor=1',
    'stft.win_length=64',
    'stft.hop_length=16',
    'stft.fft_size=64',
    'train.epochs=1',
    'train.batch_size=2',
    'train.crop_seconds=0.25',
    'train.steps_per_epoch=2',
]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def mixed(runner, tmp_path):
    corpus_dir, data_dir = tmp_path / 'corpus', tmp_path / 'data'
    result = runner.invoke(cli, ['synth', '--out', str(corpus_dir), '--speakers', '4', '--utts', '3',
                                 '--seconds', '0.5', '--seed', '3'])
    assert result.exit_code == 0, result.output
    result = runner.invoke(cli, ['mix', '--clean', str(corpus_dir / 'clean'), '--noise', str(corpus_dir / 'noise'),
                                 '--out', str(data_dir), '--seed', '3'])
    assert result.exit_code == 0, result.output
    return data_dir


def test_mix_writes_manifests_and_resolved_config(mixed):
    for split in ('train', 'valid', 'test'):
        manifest = Manifest.load(str(mixed / f"{split}.tsv"))
        assert all(os.path.exists(r.noisy_path) for r in manifest)
    resolved = (mixed / 'resolved_config.txt').read_text(encoding='utf-8')
    assert resolved.startswith('command=mix\n')
    assert 'mix.seed=3' in resolved


def test_evaluate_unprocessed_audio(runner, mixed, tmp_path):
    noisy_dir = os.path.dirname(Manifest.load(str(mixed / 'test.tsv')).rows[0].noisy_path)
    report = tmp_path / 'reports' / 'test.csv'
    result = runner.invoke(cli, ['evaluate', '--manifest', str(mixed / 'test.tsv'),
                                 '--enhanced', noisy_dir, '--report', str(report)])
    assert result.exit_code == 0, result.output
    assert 'SI-SNRi 0.00 dB' in result.output
    assert MetricsReport.from_csv(str(report)).means()['si_snri_db'] == 0.0
    assert (tmp_path / 'reports' / 'resolved_config.txt').exists()


def test_evaluate_needs_exactly_one_source(runner, mixed, tmp_path):
    result = runner.invoke(cli, ['evaluate', '--manifest', str(mixed / 'test.tsv'),
                                 '--report', str(tmp_path / 'r.csv')])
    assert result.exit_code == 2
    assert 'exactly one' in result.output


def test_enhance_directory_from_checkpoint(runner, mixed, tmp_path, tiny_cfg):
    ckpt = str(tmp_path / 'tiny.ckpt')
    save_checkpoint(ckpt, MVNet(tiny_cfg))
    noisy_dir = os.path.dirname(Manifest.load(str(mixed / 'test.tsv')).rows[0].noisy_path)
    out_dir = tmp_path / 'enhanced'
    try:
        result = runner.invoke(cli, ['enhance', '--ckpt', ckpt, '--in', noisy_dir, '--out', str(out_dir)])
    finally:
        model_manager.clear_cache(ckpt)
    assert result.exit_code == 0, result.output
    assert sorted(os.listdir(out_dir)) == sorted(os.listdir(noisy_dir) + ['resolved_config.txt'])


def test_bad_config_exits_with_input_status(runner, tmp_path):
    config = tmp_path / 'bad.cfg'
    config.write_text('model.no_such_key=1\n', encoding='utf-8')
    result = runner.invoke(cli, ['mix', '--clean', str(tmp_path), '--noise', str(tmp_path),
                                 '--out', str(tmp_path / 'out'), '--config', str(config)])
    assert result.exit_code == 2
    assert '❌' in result.output


def test_missing_input_exits_with_input_status(runner, tmp_path):
    result = runner.invoke(cli, ['mix', '--clean', str(tmp_path / 'absent'), '--noise', str(tmp_path),
                                 '--out', str(tmp_path / 'out')])
    assert result.exit_code == 2


@pytest.mark.slow
def test_train_from_config_file(runner, mixed, tmp_path):
    config = tmp_path / 'tiny.cfg'
    config.write_text('\n'.join(TINY_LINES) + '\n', encoding='utf-8')
    out = tmp_path / 'run'
    result = runner.invoke(cli, ['train', '--config', str(config), '--data', str(mixed), '--out', str(out)])
    assert result.exit_code == 0, result.output
    assert (out / 'best.ckpt').exists() and (out / 'last.ckpt').exists()
    assert 'model.lstm_hidden=8' in (out / 'resolved_config.txt').read_text(encoding='utf-8')


@pytest.mark.slow
def test_gradcheck_negative_control_fails(runner, tmp_path):
    result = runner.invoke(cli, ['gradcheck', '--corrupt', 'conv2d', '--out', str(tmp_path)])
    assert result.exit_code == 1
    assert '❌ FAIL' in (tmp_path / 'gradcheck.txt').read_text(encoding='utf-8')


def test_gradcheck_rejects_unknown_row(runner):
    result = runner.invoke(cli, ['gradcheck', '--corrupt', 'nonsense'])
    assert result.exit_code == 2


def test_ablate_writes_one_row_per_variant(runner, mixed, tmp_path):
    config = tmp_path / 'tiny.cfg'
    config.write_text('\n'.join(TINY_LINES) + '\n', encoding='utf-8')
    out = tmp_path / 'ablation'
    result = runner.invoke(cli, ['ablate', '--config', str(config), '--data', str(mixed), '--out', str(out),
                                 '--variants', 'dccrn,ma'])
    assert result.exit_code == 0, result.output
    rows = (out / 'comparison.csv').read_text(encoding='utf-8').splitlines()
    assert [r.split(',')[0] for r in rows] == ['arm', 'dccrn', 'ma']
    assert 'option.variants=dccrn,ma' in (out / 'resolved_config.txt').read_text(encoding='utf-8')


def test_ablate_rejects_unknown_variant(runner, mixed, tmp_path):
    result = runner.invoke(cli, ['ablate', '--data', str(mixed), '--out', str(tmp_path / 'a'),
                                 '--variants', 'dccrn,nope'])
    assert result.exit_code == 2
    assert 'nope' in result.output


def test_compare_losses_on_toy_preset(runner, mixed, tmp_path):
    config = tmp_path / 'tiny.cfg'
    config.write_text('\n'.join(TINY_LINES) + '\n', encoding='utf-8')
    out = tmp_path / 'compare'
    result = runner.invoke(cli, ['compare-losses', '--toy', '--config', str(config), '--data', str(mixed),
                                 '--out', str(out)])
    assert result.exit_code == 0, result.output
    resolved = (out / 'resolved_config.txt').read_text(encoding='utf-8')
    assert 'train.epochs=1' in resolved and 'stft.fft_size=64' in resolved
    assert (out / 'joint' / 'best.ckpt').exists() and (out / 'si_snr' / 'best.ckpt').exists()
