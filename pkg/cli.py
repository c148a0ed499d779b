"""
mvnet command line

Every command writes resolved_config.txt into its output directory before
doing any work. Exit status: 0 success, 1 validation failure, 2 input error.
"""
import functools
import os
import sys
from typing import Dict, Optional

import click

from config import Config, RunConfig, VARIANTS
from errors import InputError, MVNetError


def handle_errors(fn):
    """Turn MVNetError into a status line and its exit code"""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MVNetError as e:
            click.echo(f"❌ {e}", err=True)
            sys.exit(e.exit_code)
    return wrapper


def _load_run(config_path: Optional[str], seed: Optional[int] = None,
              variant: Optional[str] = None) -> RunConfig:
    run = RunConfig.from_file(config_path) if config_path else RunConfig()
    if seed is not None:
        run.set_seed(seed)
    if variant:
        run.set('model.variant', variant)
    run.validate()
    return run


def echo_config(out_dir: str, command: str, options: Dict[str, object], run: RunConfig = None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, 'resolved_config.txt')
    lines = [f"command={command}"] + [f"option.{k}={'' if v is None else v}" for k, v in options.items()]
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
        if run is not None:
            f.write(run.dump())
    return path


@click.group()
def cli():
    """MVNet speech enhancement: mix, train, enhance, evaluate"""


@cli.command()
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--speakers', default=4, show_default=True, type=int)
@click.option('--utts', default=5, show_default=True, type=int, help='Utterances per speaker')
@click.option('--seconds', default=2.0, show_default=True, type=float)
@handle_errors
def synth(out_dir, seed, speakers, utts, seconds):
    """Write a synthetic pseudo-speech corpus (clean/ and noise/)"""
    from dataset import make_synthetic_corpus

    echo_config(out_dir, 'synth', dict(seed=seed, speakers=speakers, utts=utts, seconds=seconds))
    make_synthetic_corpus(out_dir, speakers, utts, seconds, seed)


@cli.command()
@click.option('--clean', 'clean_dir', required=True, type=click.Path(file_okay=False))
@click.option('--noise', 'noise_dir', required=True, type=click.Path(file_okay=False))
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--config', 'config_path', type=click.Path(dir_okay=False))
@click.option('--seed', type=int)
@handle_errors
def mix(clean_dir, noise_dir, out_dir, config_path, seed):
    """Build train/valid/test manifests and write the noisy mixtures"""
    from dataset import SPLITS, build_manifest, mix_manifest

    run = _load_run(config_path, seed)
    echo_config(out_dir, 'mix', dict(clean=clean_dir, noise=noise_dir, config=config_path), run)
    manifests = build_manifest(clean_dir, noise_dir, run.mix, out_dir)
    offset = 0
    for split in SPLITS:
        mix_manifest(manifests[split], run.mix, offset=offset)
        offset += len(manifests[split])
    click.echo(f"✅ Mixed {offset} utterances into {out_dir}")


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False))
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--resume', type=click.Path(dir_okay=False), help='Continue from a checkpoint (last.ckpt)')
@click.option('--data', 'data_dir', type=click.Path(file_okay=False), help='Directory holding <split>.tsv')
@click.option('--variant', type=click.Choice(sorted(VARIANTS)))
@click.option('--seed', type=int)
@handle_errors
def train(config_path, out_dir, resume, data_dir, variant, seed):
    """Train MVNet; keeps best.ckpt (validation SI-SNRi) and last.ckpt"""
    from dataset import Manifest
    from training import Trainer

    run = _load_run(config_path, seed, variant)
    if data_dir:
        run.paths.data_dir = data_dir
    run.paths.out_dir = out_dir
    echo_config(out_dir, 'train', dict(config=config_path, resume=resume), run)
    trainer = Trainer(run, out_dir)
    trainer.fit(Manifest.load(run.paths.manifest('train')),
                Manifest.load(run.paths.manifest('valid')), resume=resume)


@cli.command()
@click.option('--ckpt', required=True, type=click.Path(dir_okay=False))
@click.option('--in', 'in_path', required=True, type=click.Path())
@click.option('--out', 'out_path', required=True, type=click.Path())
@click.option('--identity-mask', is_flag=True, help='Bypass the network with a unit mask (debug)')
@handle_errors
def enhance(ckpt, in_path, out_path, identity_mask):
    """Enhance one WAV file or every WAV in a directory"""
    from enhancement import EnhancementService

    out_dir = out_path if os.path.isdir(in_path) else (os.path.dirname(os.path.abspath(out_path)))
    service = EnhancementService.from_checkpoint(ckpt, identity_mask)
    run = RunConfig(model=service.model.cfg)
    echo_config(out_dir, 'enhance', dict(ckpt=ckpt, input=in_path, identity_mask=identity_mask), run)
    service.enhance_path(in_path, out_path)


@cli.command()
@click.option('--manifest', 'manifest_path', required=True, type=click.Path(dir_okay=False))
@click.option('--ckpt', type=click.Path(dir_okay=False))
@click.option('--enhanced', 'enhanced_dir', type=click.Path(file_okay=False))
@click.option('--report', 'report_path', required=True, type=click.Path(dir_okay=False))
@handle_errors
def evaluate(manifest_path, ckpt, enhanced_dir, report_path):
    """Score a manifest into a CSV report with a final MEAN row"""
    from dataset import Manifest
    from metrics import evaluate_corpus
    from models import model_manager

    if bool(ckpt) == bool(enhanced_dir):
        raise click.UsageError('give exactly one of --ckpt or --enhanced')
    options = dict(manifest=manifest_path, ckpt=ckpt, enhanced=enhanced_dir)
    model = model_manager.get_model(ckpt) if ckpt else None
    run = RunConfig(model=model.cfg) if model is not None else None
    echo_config(os.path.dirname(os.path.abspath(report_path)), 'evaluate', options, run)
    config = {k: str(v) for k, v in options.items() if v is not None}
    if run is not None:
        config.update(run.to_dict())
    report = evaluate_corpus(Manifest.load(manifest_path), model=model, enhanced_dir=enhanced_dir,
                             out_path=report_path, config=config)
    if report.failed:
        raise InputError(f"{len(report.failed)} of {len(report.rows)} utterances could not be scored")
    means = report.means()
    click.echo(f"SI-SNR {means['si_snr_db']:.2f} dB, SI-SNRi {means['si_snri_db']:.2f} dB, "
               f"segSNR {means['seg_snr_db']:.2f} dB")


@cli.command()
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False))
@click.option('--corrupt', hidden=True, help='Scale one row\'s analytic gradient (negative control)')
@handle_errors
def gradcheck(seed, out_dir, corrupt):
    """Finite-difference check of every differentiable op and both losses"""
    from gradcheck import SUITE, format_table, run_suite

    if corrupt and corrupt not in SUITE:
        raise click.BadParameter(f"unknown row '{corrupt}'", param_hint='--corrupt')
    if out_dir:
        echo_config(out_dir, 'gradcheck', dict(seed=seed, corrupt=corrupt))
    results = run_suite(seed, corrupt)
    table = format_table(results)
    click.echo(table)
    if out_dir:
        with open(os.path.join(out_dir, 'gradcheck.txt'), 'w', encoding='utf-8') as f:
            f.write(table + '\n')
    failed = [r.name for r in results if not r.passed]
    if failed:
        click.echo(f"❌ {len(failed)} of {len(results)} rows failed: {', '.join(failed)}", err=True)
        sys.exit(1)
    click.echo(f"✅ All {len(results)} rows passed")


def _comparison_run(config_path: Optional[str], toy: bool, seed: Optional[int], data_dir: str) -> RunConfig:
    from experiments import toy_run

    if toy:
        run = toy_run(RunConfig.read_lines(config_path) if config_path else [])
    else:
        run = _load_run(config_path)
    if seed is not None:
        run.set_seed(seed)
    run.paths.data_dir = data_dir
    run.validate()
    return run


def _comparison_manifests(run: RunConfig):
    from dataset import SPLITS, Manifest

    return {split: Manifest.load(run.paths.manifest(split)) for split in SPLITS}


@cli.command('compare-losses')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False))
@click.option('--data', 'data_dir', required=True, type=click.Path(file_okay=False),
              help='Directory holding <split>.tsv')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--toy', is_flag=True, help='Start from the desk-scale preset (20 epochs, small model)')
@click.option('--seed', type=int)
@click.option('--check', is_flag=True, help='Exit 1 unless joint loss reaches 3 dB SI-SNRi and keeps simi')
@handle_errors
def compare_losses(config_path, data_dir, out_dir, toy, seed, check):
    """Train with the joint loss and with SI-SNR alone, then score both on the test split"""
    from experiments import check_learning_signal, loss_arms, run_arms

    run = _comparison_run(config_path, toy, seed, data_dir)
    echo_config(out_dir, 'compare-losses', dict(config=config_path, toy=toy, check=check), run)
    report = run_arms(loss_arms(run), _comparison_manifests(run), out_dir)
    click.echo(report.format_table())
    if check:
        failures = check_learning_signal(report)
        for failure in failures:
            click.echo(f"❌ {failure}", err=True)
        if failures:
            sys.exit(1)
        click.echo(f"✅ Joint loss keeps its learning signal and simi ({report.seconds:.0f} s)")


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False))
@click.option('--data', 'data_dir', required=True, type=click.Path(file_okay=False),
              help='Directory holding <split>.tsv')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--variants', default=','.join(VARIANTS), show_default=True,
              help='Comma-separated ablation arms')
@click.option('--toy', is_flag=True, help='Start from the desk-scale preset (20 epochs, small model)')
@click.option('--seed', type=int)
@handle_errors
def ablate(config_path, data_dir, out_dir, variants, toy, seed):
    """Train every ablation variant from shared initial weights; one metrics row per variant"""
    from experiments import run_arms, variant_arms

    names = [v.strip() for v in variants.split(',') if v.strip()]
    run = _comparison_run(config_path, toy, seed, data_dir)
    echo_config(out_dir, 'ablate', dict(config=config_path, variants=','.join(names), toy=toy), run)
    report = run_arms(variant_arms(run, names), _comparison_manifests(run), out_dir)
    click.echo(report.format_table())


@cli.command()
@click.option('--ckpt', required=True, type=click.Path(dir_okay=False))
@click.option('--host', default='0.0.0.0', show_default=True)
@click.option('--port', default=5000, show_default=True, type=int)
@handle_errors
def serve(ckpt, host, port):
    """Run the HTTP enhancement service"""
    from app import create_app

    Config.ensure_directories()
    echo_config(Config.RUNS_FOLDER, 'serve', dict(ckpt=ckpt, host=host, port=port))
    create_app(ckpt).run(host=host, port=port, debug=False)


if __name__ == '__main__':
    cli()
