"""
Evaluation metrics and the per-corpus report
"""
import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from audio_processing import AudioProcessor
from config import Config
from dataset import Manifest, ManifestRow
from dsp import Waveform
from errors import ContractError, DimensionError, InputError, MVNetError


def _as_array(x) -> np.ndarray:
    samples = x.samples if isinstance(x, Waveform) else x
    return np.asarray(samples, dtype=np.float64).reshape(-1)


def _check_pair(est: np.ndarray, ref: np.ndarray):
    if est.shape != ref.shape:
        raise DimensionError(f"signals differ in length: {est.shape[0]} vs {ref.shape[0]}")


def si_snr_db(est, ref, cap: float = Config.SI_SNR_CAP_DB) -> float:
    """Zero-mean scale-invariant SNR in dB, saturated at +-cap"""
    est, ref = _as_array(est), _as_array(ref)
    _check_pair(est, ref)
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise InputError("si_snr_db: reference has zero energy")
    target = (np.dot(est, ref) / ref_energy) * ref
    noise = est - target
    target_energy, noise_energy = np.dot(target, target), np.dot(noise, noise)
    if noise_energy == 0:
        return cap
    if target_energy == 0:
        return -cap
    return float(np.clip(10 * np.log10(target_energy / noise_energy), -cap, cap))


def si_snri_db(enhanced, noisy, clean) -> float:
    return si_snr_db(enhanced, clean) - si_snr_db(noisy, clean)


def seg_snr_db(enhanced, clean, frame: int = Config.SEG_SNR_FRAME, hop: int = None,
               clamp=Config.SEG_SNR_CLAMP) -> float:
    """Mean of per-frame SNRs clamped to `clamp`; frames of digital silence in clean are skipped"""
    enhanced, clean = _as_array(enhanced), _as_array(clean)
    _check_pair(enhanced, clean)
    hop = hop or frame
    if clean.shape[0] < frame:
        raise InputError(f"seg_snr_db: {clean.shape[0]} samples is shorter than one frame ({frame})")
    lo, hi = clamp
    scores = []
    for start in range(0, clean.shape[0] - frame + 1, hop):
        c = clean[start:start + frame]
        signal = np.dot(c, c)
        if signal == 0:
            continue
        err = c - enhanced[start:start + frame]
        error = np.dot(err, err)
        snr = hi if error == 0 else 10 * np.log10(signal / error)
        scores.append(min(max(snr, lo), hi))
    if not scores:
        raise InputError("seg_snr_db: every clean frame is silent")
    return float(np.mean(scores))


@dataclass
class UtteranceScore:
    utt_id: str
    si_snr_db: float = math.nan
    si_snri_db: float = math.nan
    seg_snr_db: float = math.nan
    simi: float = math.nan
    noisy_si_snr_db: float = math.nan
    noisy_seg_snr_db: float = math.nan
    error: str = ''

    @property
    def ok(self) -> bool:
        return not self.error


METRIC_FIELDS = [f.name for f in fields(UtteranceScore) if f.name not in ('utt_id', 'error')]


def _mean(values: List[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


@dataclass
class MetricsReport:
    rows: List[UtteranceScore] = field(default_factory=list)
    config: Dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> List[UtteranceScore]:
        return [r for r in self.rows if not r.ok]

    def means(self) -> Dict[str, float]:
        """Arithmetic mean over scored rows (failed rows and missing values excluded)"""
        scored = [r for r in self.rows if r.ok]
        return {name: _mean([getattr(r, name) for r in scored]) for name in METRIC_FIELDS}

    def to_csv(self, path: str):
        """One header line, one row per utterance, a final MEAN row; config echo in <path>.config"""
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        header = ['utt_id'] + METRIC_FIELDS + ['error']
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in self.rows:
                writer.writerow([row.utt_id] + [repr(float(getattr(row, n))) for n in METRIC_FIELDS]
                                + [row.error])
            means = self.means()
            writer.writerow(['MEAN'] + [repr(means[n]) for n in METRIC_FIELDS] + [''])
        with open(path + '.config', 'w', encoding='utf-8') as f:
            f.write(''.join(f"{k}={v}\n" for k, v in self.config.items()))

    @classmethod
    def from_csv(cls, path: str) -> 'MetricsReport':
        rows = []
        try:
            with open(path, 'r', encoding='utf-8', newline='') as f:
                records = list(csv.DictReader(f))
        except OSError as e:
            raise InputError(f"cannot read report {path}: {e}") from None
        for record in records:
            if record['utt_id'] == 'MEAN':
                continue
            values = {n: float(record[n]) for n in METRIC_FIELDS}
            rows.append(UtteranceScore(record['utt_id'], error=record['error'], **values))
        config = {}
        if os.path.exists(path + '.config'):
            with open(path + '.config', 'r', encoding='utf-8') as f:
                for line in f.read().splitlines():
                    if '=' in line:
                        key, value = line.split('=', 1)
                        config[key] = value
        return cls(rows, config)


def score_utterance(utt_id: str, enhanced, noisy, clean, simi: float = math.nan) -> UtteranceScore:
    enhanced_snr = si_snr_db(enhanced, clean)
    noisy_snr = si_snr_db(noisy, clean)
    return UtteranceScore(
        utt_id,
        si_snr_db=enhanced_snr,
        si_snri_db=enhanced_snr - noisy_snr,
        seg_snr_db=seg_snr_db(enhanced, clean),
        simi=simi,
        noisy_si_snr_db=noisy_snr,
        noisy_seg_snr_db=seg_snr_db(noisy, clean),
    )


def evaluate_corpus(manifest: Manifest, model=None, enhanced_dir: Optional[str] = None,
                    out_path: Optional[str] = None, config: Optional[Dict[str, str]] = None,
                    workers: int = None, embedder=None) -> MetricsReport:
    """Score every manifest row, enhancing with `model` or reading <enhanced_dir>/<noisy file name>

    simi uses `embedder` when given (a VocalEncoder shared across compared
    models), else the model's own vocal branch. Rows that fail are recorded
    with their error and left out of the means.
    """
    if (model is None) == (enhanced_dir is None):
        raise ContractError("evaluate_corpus needs exactly one of a model or an enhanced directory")
    from vocal_reinforcement import simi_proxy

    if embedder is None and model is not None and model.cfg.use_vocal:
        embedder = model.vocal

    def score(row: ManifestRow) -> UtteranceScore:
        try:
            clean = AudioProcessor.read_wav(row.target_path)
            noisy = AudioProcessor.read_wav(row.noisy_path)
            if model is not None:
                enhanced, _ = model.forward(noisy)
            else:
                enhanced = AudioProcessor.read_wav(
                    os.path.join(enhanced_dir, os.path.basename(row.noisy_path)))
            simi = math.nan
            if embedder is not None:
                simi = simi_proxy(enhanced, clean, embedder, embedder.cfg)
            return score_utterance(row.utt_id, enhanced, noisy, clean, simi)
        except (MVNetError, OSError) as e:
            return UtteranceScore(row.utt_id, error=str(e))

    with ThreadPoolExecutor(max_workers=workers or Config.NUM_WORKERS) as executor:
        rows = list(executor.map(score, manifest))
    report = MetricsReport(rows, dict(config or {}))
    for row in report.failed:
        print(f"❌ {row.utt_id}: {row.error}")
    if out_path:
        report.to_csv(out_path)
        print(f"✅ Report written: {out_path} ({len(rows) - len(report.failed)}/{len(rows)} scored)")
    return report
