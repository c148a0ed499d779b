"""
Training service

One epoch = seeded crops of the training manifest -> Adam steps -> full-length
validation. Trainer state that decides future behavior (learning rate, last
validation loss, best validation SI-SNRi) is kept float32-quantized so a run
resumed from last.ckpt continues bitwise identically.
"""
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from autodiff import Adam, no_grad
from checkpoint import read_checkpoint, save_checkpoint
from config import Config, RunConfig
from dataset import Manifest, Utterance, crop_batches, load_utterances
from errors import CheckpointError, InputError, TrainingDivergedError
from losses import training_loss
from metrics import si_snri_db
from models import MVNet

LOG_HEADER = 'epoch\ttrain_loss\tval_loss\tval_si_snri\tlr'
_TRAINER_KEYS = ('trainer/epoch', 'trainer/lr', 'trainer/prev_val_loss', 'trainer/best_si_snri')


def _f32(value: float) -> float:
    return float(np.float32(value))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_si_snri: float
    lr: float

    def to_line(self) -> str:
        return f"{self.epoch}\t{self.train_loss!r}\t{self.val_loss!r}\t{self.val_si_snri!r}\t{self.lr!r}"


class Trainer:
    """Fits an MVNet on a training manifest and keeps best/last checkpoints in out_dir"""

    def __init__(self, run: RunConfig, out_dir: str, model: MVNet = None):
        self.run = run
        self.out_dir = out_dir
        self.model = model or MVNet(run.model)
        tc = run.train
        self.optimizer = Adam(list(self.model.named_parameters()), tc.lr, tc.beta1, tc.beta2, tc.eps)
        self.epoch = 0
        self.lr = _f32(tc.lr)
        self.prev_val_loss = math.nan
        self.best_si_snri = -math.inf
        self.history: List[EpochRecord] = []

    @property
    def log_path(self) -> str:
        return os.path.join(self.out_dir, 'train.log')

    # ---------------------------------------------------------------- state
    def state_dict(self) -> Dict[str, np.ndarray]:
        state = dict(self.optimizer.state_dict())
        for key, value in zip(_TRAINER_KEYS, (self.epoch, self.lr, self.prev_val_loss, self.best_si_snri)):
            state[key] = np.array(value, dtype=np.float32)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        missing = [k for k in _TRAINER_KEYS if k not in state]
        if missing:
            raise CheckpointError(f"checkpoint has no trainer state ({', '.join(missing)})")
        self.optimizer.load_state_dict({k: v for k, v in state.items() if not k.startswith('trainer/')})
        self.epoch = int(state['trainer/epoch'])
        self.lr = float(state['trainer/lr'])
        self.prev_val_loss = float(state['trainer/prev_val_loss'])
        self.best_si_snri = float(state['trainer/best_si_snri'])

    def resume(self, ckpt_path: str):
        params, optimizer_state, cfg = read_checkpoint(ckpt_path)
        if cfg.dumps() != self.run.model.dumps():
            raise CheckpointError(f"{ckpt_path}: model config differs from the run config")
        self.model.load_state_dict(params)
        self.load_state_dict(optimizer_state)
        print(f"✅ Resumed from {ckpt_path} after epoch {self.epoch} (lr {self.lr})")

    def save(self, name: str):
        save_checkpoint(os.path.join(self.out_dir, name), self.model, self.state_dict())

    # ------------------------------------------------------------- training
    def train_step(self, noisy: np.ndarray, clean: np.ndarray) -> float:
        self.model.train()
        self.model.zero_grad()
        est, _ = self.model(noisy)
        loss = training_loss(self.run.train.loss, est, clean, self.run.loss)
        loss.backward()
        value = loss.item()
        self._check_finite(value)
        self.optimizer.lr = self.lr
        self.optimizer.step()
        return value

    def _check_finite(self, loss_value: float):
        bad = next((name for name, p in self.model.named_parameters()
                    if p.grad is not None and not np.all(np.isfinite(p.grad))), None)
        if bad is None and math.isfinite(loss_value):
            return
        where = f"; first non-finite gradient in parameter group '{bad}'" if bad else ''
        raise TrainingDivergedError(f"training diverged at epoch {self.epoch + 1} "
                                    f"(loss {loss_value}){where}", parameter=bad)

    def validate(self, utterances: List[Utterance]) -> Tuple[float, float]:
        """Mean loss and mean SI-SNRi over full-length utterances"""
        self.model.eval()
        losses, gains = [], []
        with no_grad():
            for utt in utterances:
                est, _ = self.model(utt.noisy[None])
                losses.append(training_loss(self.run.train.loss, est, utt.clean[None], self.run.loss).item())
                gains.append(si_snri_db(est.data[0], utt.noisy, utt.clean))
        return float(np.mean(losses)), float(np.mean(gains))

    def run_epoch(self, train: List[Utterance], valid: List[Utterance]) -> EpochRecord:
        tc = self.run.train
        rng = np.random.default_rng([self.run.seed, self.epoch])
        crop_len = int(round(tc.crop_seconds * Config.SAMPLE_RATE))
        target = tc.steps_per_epoch or math.ceil(len(train) / tc.batch_size)
        losses = []
        while len(losses) < target:
            before = len(losses)
            for noisy, clean in crop_batches(train, crop_len, tc.batch_size, rng):
                losses.append(self.train_step(noisy, clean))
                if len(losses) >= target:
                    break
            if len(losses) == before:
                raise InputError("every training utterance is silent; nothing to crop")

        val_loss, val_si_snri = self.validate(valid)
        record = EpochRecord(self.epoch + 1, float(np.mean(losses)), val_loss, val_si_snri, self.lr)
        self.epoch += 1

        quantized = _f32(val_loss)
        if tc.schedule == 'halve_on_val_increase' and not math.isnan(self.prev_val_loss) \
                and quantized > self.prev_val_loss:
            self.lr = _f32(self.lr * 0.5)
            print(f"⚠️ Validation loss rose; learning rate halved to {self.lr}")
        self.prev_val_loss = quantized

        if _f32(val_si_snri) > self.best_si_snri:
            self.best_si_snri = _f32(val_si_snri)
            self.save('best.ckpt')
        self.save('last.ckpt')
        with open(self.log_path, 'a', encoding='utf-8') as f:
            f.write(record.to_line() + '\n')
        self.history.append(record)
        print(f"✅ Epoch {record.epoch}: train {record.train_loss:.3f}, val {record.val_loss:.3f}, "
              f"val SI-SNRi {record.val_si_snri:.2f} dB, lr {record.lr}")
        return record

    def fit(self, train_manifest: Manifest, valid_manifest: Manifest,
            resume: Optional[str] = None) -> List[EpochRecord]:
        os.makedirs(self.out_dir, exist_ok=True)
        if resume:
            self.resume(resume)
        elif not os.path.exists(self.log_path) or self.epoch == 0:
            with open(self.log_path, 'w', encoding='utf-8') as f:
                f.write(LOG_HEADER + '\n')
        train = load_utterances(train_manifest)
        valid = load_utterances(valid_manifest)
        if not train or not valid:
            raise InputError("training needs non-empty train and valid manifests")
        print(f"Training {self.model.parameter_count()} parameters on {len(train)} utterances "
              f"(best.ckpt chosen by validation SI-SNRi; PESQ is not computed)")
        while self.epoch < self.run.train.epochs:
            self.run_epoch(train, valid)
        return self.history
