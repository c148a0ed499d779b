"""
Comparison runs

Several arms (loss functions or ablation variants) are trained on the same
manifests with the same seed, each in <out_dir>/<arm>, then scored on the
test split from its best checkpoint. simi is measured with one shared
reference embedder so arms are comparable even when they have no vocal
branch of their own.
"""
import copy
import csv
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence

import numpy as np

from checkpoint import load_checkpoint
from config import VARIANTS, RunConfig
from dataset import Manifest
from errors import ConfigError, InputError
from metrics import evaluate_corpus
from models import MVNet
from training import Trainer
from vocal_reinforcement import VocalEncoder

EMBEDDER_STREAM = 1   # generator stream of the shared simi embedder, after the run seed

# desk-scale learning-signal run: 20 epochs of short crops on a small model
TOY_PRESET = [
    'model.encoder_channels=8,16,16,16',
    'model.lstm_hidden=32',
    'model.tdnn_divisor=16',
    'stft.win_length=256',
    'stft.hop_length=64',
    'stft.fft_size=256',
    'train.epochs=20',
    'train.batch_size=4',
    'train.crop_seconds=0.5',
    'train.steps_per_epoch=12',
]


def toy_run(lines: Sequence[str] = ()) -> RunConfig:
    """TOY_PRESET with `lines` applied on top"""
    return RunConfig.from_lines(list(TOY_PRESET) + list(lines))


@dataclass
class ArmResult:
    arm: str
    parameters: int
    epochs: int
    best_val_si_snri: float
    si_snr_db: float
    si_snri_db: float
    seg_snr_db: float
    simi: float
    seconds: float


ARM_FIELDS = [f.name for f in fields(ArmResult)]


@dataclass
class ComparisonReport:
    arms: List[ArmResult] = field(default_factory=list)

    def get(self, arm: str) -> ArmResult:
        for result in self.arms:
            if result.arm == arm:
                return result
        raise InputError(f"no arm named '{arm}' in the report")

    @property
    def seconds(self) -> float:
        return sum(a.seconds for a in self.arms)

    def to_csv(self, path: str):
        """One row per arm"""
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(ARM_FIELDS)
            for result in self.arms:
                values = asdict(result)
                writer.writerow([values[n] if isinstance(values[n], (str, int)) else repr(float(values[n]))
                                 for n in ARM_FIELDS])

    @classmethod
    def from_csv(cls, path: str) -> 'ComparisonReport':
        try:
            with open(path, 'r', encoding='utf-8', newline='') as f:
                records = list(csv.DictReader(f))
        except OSError as e:
            raise InputError(f"cannot read comparison {path}: {e}") from None
        arms = []
        for record in records:
            arms.append(ArmResult(record['arm'], int(record['parameters']), int(record['epochs']),
                                  **{n: float(record[n]) for n in ARM_FIELDS[3:]}))
        return cls(arms)

    def format_table(self) -> str:
        lines = [f"{'arm':<10}{'params':>9}{'SI-SNRi':>9}{'segSNR':>9}{'simi':>8}{'time':>8}"]
        for a in self.arms:
            lines.append(f"{a.arm:<10}{a.parameters:>9}{a.si_snri_db:>9.2f}{a.seg_snr_db:>9.2f}"
                         f"{a.simi:>8.3f}{a.seconds:>7.0f}s")
        return '\n'.join(lines)


def loss_arms(run: RunConfig) -> Dict[str, RunConfig]:
    """The same run trained with the joint loss and with SI-SNR alone"""
    arms = {}
    for loss in ('joint', 'si_snr'):
        arm = copy.deepcopy(run)
        arm.train.loss = loss
        arms[loss] = arm
    return arms


def variant_arms(run: RunConfig, names: Optional[Sequence[str]] = None) -> Dict[str, RunConfig]:
    """One arm per ablation variant (attention placement x vocal branch)"""
    names = list(names) if names else list(VARIANTS)
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variants {unknown} (choose from {sorted(VARIANTS)})")
    arms = {}
    for name in names:
        arm = copy.deepcopy(run)
        arm.model = arm.model.with_variant(name)
        arms[name] = arm
    return arms


def share_parameters(source: MVNet, target: MVNet) -> int:
    """Copy every parameter and buffer `target` has in common with `source`; returns how many"""
    mine = source.state_dict()
    shared = 0
    for name, value in target.state_dict().items():
        if name in mine and mine[name].shape == value.shape:
            value[...] = mine[name]
            shared += 1
    return shared


def reference_embedder(run: RunConfig) -> VocalEncoder:
    embedder = VocalEncoder(run.model, np.random.default_rng([run.seed, EMBEDDER_STREAM]))
    embedder.eval()
    return embedder


def run_arms(arms: Dict[str, RunConfig], manifests: Dict[str, Manifest], out_dir: str,
             share_init: bool = True) -> ComparisonReport:
    """Train and score every arm; writes <out_dir>/comparison.csv

    With share_init every arm starts from the first arm's weights wherever
    their parameter names and shapes agree.
    """
    if not arms:
        raise InputError("nothing to compare: no arms given")
    for split in ('train', 'valid', 'test'):
        if split not in manifests:
            raise InputError(f"comparison needs a {split} manifest")
    os.makedirs(out_dir, exist_ok=True)
    first = next(iter(arms.values()))
    embedder = reference_embedder(first)
    base: Optional[MVNet] = None
    report = ComparisonReport()
    for name, run in arms.items():
        print(f"=== Arm {name} ===")
        started = time.perf_counter()
        arm_dir = os.path.join(out_dir, name)
        run.validate()
        os.makedirs(arm_dir, exist_ok=True)
        run.save(os.path.join(arm_dir, 'resolved_config.txt'))
        model = MVNet(run.model)
        if base is None:
            base = model
        elif share_init:
            share_parameters(base, model)
        trainer = Trainer(run, arm_dir, model)
        trainer.fit(manifests['train'], manifests['valid'])
        best = load_checkpoint(os.path.join(arm_dir, 'best.ckpt')).model
        best.eval()
        scores = evaluate_corpus(manifests['test'], model=best, embedder=embedder,
                                 out_path=os.path.join(arm_dir, 'test.csv'), config=run.to_dict())
        if scores.failed:
            raise InputError(f"{name}: {len(scores.failed)} test utterances could not be scored")
        means = scores.means()
        result = ArmResult(name, int(model.parameter_count()), int(trainer.epoch),
                           float(trainer.best_si_snri), means['si_snr_db'], means['si_snri_db'],
                           means['seg_snr_db'], means['simi'],
                           time.perf_counter() - started)
        report.arms.append(result)
        print(f"✅ {name}: test SI-SNRi {result.si_snri_db:.2f} dB, simi {result.simi:.3f} "
              f"({result.seconds:.0f} s)")
    report.to_csv(os.path.join(out_dir, 'comparison.csv'))
    return report


def check_learning_signal(report: ComparisonReport, min_si_snri_db: float = 3.0,
                          simi_tolerance: float = 0.01) -> List[str]:
    """Failures of the joint-vs-SI-SNR comparison; empty when it holds"""
    joint, baseline = report.get('joint'), report.get('si_snr')
    failures = []
    if math.isnan(joint.si_snri_db) or joint.si_snri_db < min_si_snri_db:
        failures.append(f"joint-loss test SI-SNRi {joint.si_snri_db:.2f} dB is below {min_si_snri_db} dB")
    if math.isnan(joint.simi) or joint.simi < baseline.simi - simi_tolerance:
        failures.append(f"joint-loss simi {joint.simi:.4f} is below SI-SNR-only simi "
                        f"{baseline.simi:.4f} - {simi_tolerance}")
    return failures
