"""
Corpus construction: manifests, mixing jobs, synthetic pseudo-speech and training crops
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import butter, lfilter

from audio_processing import AudioProcessor
from config import Config, MixSpec
from dsp import Waveform
from errors import FormatError, InputError

SPLITS = ('train', 'valid', 'test')


@dataclass
class ManifestRow:
    utt_id: str
    clean_path: str
    noise_path: str
    snr_db: float
    noisy_path: str = ''
    reference_path: str = ''   # clean target written beside the mixture, on the mixture's scale

    @property
    def target_path(self) -> str:
        """Clean file the mixture is scored and trained against"""
        return self.reference_path or self.clean_path

    def to_line(self) -> str:
        return '\t'.join([self.utt_id, self.clean_path, self.noise_path, repr(float(self.snr_db)),
                          self.noisy_path, self.reference_path])


class Manifest:
    """Ordered rows of (utterance id, clean, noise, SNR, noisy, reference) stored as tab-separated UTF-8 lines"""

    def __init__(self, rows: Sequence[ManifestRow] = ()):
        self.rows: List[ManifestRow] = list(rows)
        seen = set()
        for row in self.rows:
            if row.utt_id in seen:
                raise FormatError(f"duplicate utterance id in manifest: {row.utt_id}")
            seen.add(row.utt_id)

    def __iter__(self) -> Iterator[ManifestRow]:
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def dumps(self) -> str:
        return ''.join(row.to_line() + '\n' for row in self.rows)

    def save(self, path: str):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.dumps())

    @classmethod
    def load(cls, path: str) -> 'Manifest':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                lines = f.read().splitlines()
        except OSError as e:
            raise InputError(f"cannot read manifest {path}: {e}") from None
        rows = []
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            fields = line.split('\t')
            if not 4 <= len(fields) <= 6:
                raise FormatError(f"{path}:{lineno}: expected 4 to 6 tab-separated fields, got {len(fields)}")
            fields += [''] * (6 - len(fields))
            try:
                snr = float(fields[3])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: snr_db '{fields[3]}' is not a number") from None
            rows.append(ManifestRow(fields[0], fields[1], fields[2], snr, fields[4], fields[5]))
        return cls(rows)


def speaker_of(path: str) -> Optional[str]:
    """Leading token before '-' in the file name, if any"""
    stem = os.path.splitext(os.path.basename(path))[0]
    if '-' not in stem:
        return None
    speaker = stem.split('-', 1)[0]
    return speaker or None


def list_wavs(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise InputError(f"{directory}: not a directory")
    files = sorted(f for f in os.listdir(directory) if AudioProcessor.allowed_file(f))
    if not files:
        raise InputError(f"{directory}: no .wav files")
    return [os.path.join(directory, f) for f in files]


def _split_counts(n: int, spec: MixSpec) -> Tuple[int, int, int]:
    """(train, valid, test) group counts; with three or more groups no split is empty"""
    n_train = max(1, int(round(spec.train_frac * n)))
    n_valid = int(round(spec.valid_frac * n))
    if n >= 3:
        n_valid = max(1, n_valid)
        n_train = min(n_train, n - n_valid - 1)
    n_valid = min(n_valid, n - n_train)
    return n_train, n_valid, n - n_train - n_valid


def split_files(clean_files: List[str], spec: MixSpec, rng: np.random.Generator) -> Dict[str, List[str]]:
    """Speaker-disjoint split when every file names its speaker, else a random split by file"""
    speakers = [speaker_of(f) for f in clean_files]
    if all(speakers) and len(set(speakers)) >= 2:
        unique = sorted(set(speakers))
        order = [unique[i] for i in rng.permutation(len(unique))]
        n_train, n_valid, _ = _split_counts(len(order), spec)
        assignment = {}
        for i, speaker in enumerate(order):
            assignment[speaker] = 'train' if i < n_train else 'valid' if i < n_train + n_valid else 'test'
        return {split: [f for f, s in zip(clean_files, speakers) if assignment[s] == split]
                for split in SPLITS}

    print("⚠️ File names do not encode speaker ids; splitting by file (splits may share speakers)")
    order = [clean_files[i] for i in rng.permutation(len(clean_files))]
    n_train, n_valid, _ = _split_counts(len(order), spec)
    return {'train': sorted(order[:n_train]),
            'valid': sorted(order[n_train:n_train + n_valid]),
            'test': sorted(order[n_train + n_valid:])}


def build_manifest(clean_dir: str, noise_dir: str, spec: MixSpec, out_dir: str) -> Dict[str, Manifest]:
    """Pair every clean file with a noise file and an SNR draw; write <out_dir>/<split>.tsv

    The result depends only on the sorted directory listings and `spec`.
    """
    spec.validate()
    clean_files = list_wavs(clean_dir)
    noise_files = list_wavs(noise_dir)
    rng = np.random.default_rng(spec.seed)
    splits = split_files(clean_files, spec, rng)
    manifests = {}
    for split in SPLITS:
        rows = []
        for clean_path in splits[split]:
            utt_id = os.path.splitext(os.path.basename(clean_path))[0]
            noise_path = noise_files[int(rng.integers(0, len(noise_files)))]
            snr = float(rng.uniform(spec.snr_lo, spec.snr_hi))
            noisy_path = os.path.join(out_dir, 'noisy', split, f"{utt_id}.wav")
            reference_path = os.path.join(out_dir, 'reference', split, f"{utt_id}.wav")
            rows.append(ManifestRow(utt_id, clean_path, noise_path, snr, noisy_path, reference_path))
        manifests[split] = Manifest(rows)
        manifests[split].save(os.path.join(out_dir, f"{split}.tsv"))
        print(f"✅ {split}: {len(rows)} utterances")
    return manifests


def _mix_row(job: Tuple[int, ManifestRow, MixSpec]) -> Tuple[str, float, float]:
    index, row, spec = job
    clean = AudioProcessor.read_wav(row.clean_path)
    noise = AudioProcessor.read_wav(row.noise_path)
    rng = np.random.default_rng([spec.seed, index])
    result = AudioProcessor.mix_at_snr(clean, noise, row.snr_db, rng)
    AudioProcessor.write_wav(row.noisy_path, Waveform(result.noisy, clean.sample_rate_hz))
    if row.reference_path:
        AudioProcessor.write_wav(row.reference_path, Waveform(result.clean, clean.sample_rate_hz))
    elif result.rescale != 1.0:
        print(f"⚠️ {row.utt_id}: mixture rescaled by {result.rescale:.3f} but the row has no reference path")
    return row.utt_id, result.gain, result.rescale


def mix_manifest(manifest: Manifest, spec: MixSpec, workers: int = None,
                 offset: int = 0) -> List[Tuple[str, float, float]]:
    """Write every row's noisy mixture and clean reference; returns (utt_id, gain, rescale) in manifest order

    The reference is the clean signal on the mixture's scale, so a row whose
    mixture was rescaled to avoid clipping keeps its recorded SNR on disk.

    Each row draws its noise excerpt from a generator seeded by (seed, row index),
    so results do not depend on scheduling.
    """
    jobs = [(offset + i, row, spec) for i, row in enumerate(manifest)]
    with ThreadPoolExecutor(max_workers=workers or Config.NUM_WORKERS) as executor:
        results = list(executor.map(_mix_row, jobs))
    rescaled = sum(1 for _, _, r in results if r != 1.0)
    if rescaled:
        print(f"⚠️ {rescaled} mixtures clipped and were rescaled to peak {Config.PEAK_TARGET}")
    return results


# ---------------------------------------------------------- synthetic corpus

def _pseudo_speech(n: int, sr: int, f0: float, formant: float, rng: np.random.Generator) -> np.ndarray:
    """Harmonic voicing plus band-passed noise, gated by a syllable-rate envelope"""
    t = np.arange(n) / sr
    contour = f0 * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(1.5, 3.5) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(contour) / sr
    voiced = sum(np.sin(k * phase) / k for k in range(1, 9))
    lo, hi = max(80.0, formant * 0.6), min(sr / 2 - 100, formant * 1.6)
    b, a = butter(2, [lo / (sr / 2), hi / (sr / 2)], btype='band')
    voiced = lfilter(b, a, voiced)
    b, a = butter(4, [2000 / (sr / 2), 6000 / (sr / 2)], btype='band')
    fricative = lfilter(b, a, rng.normal(size=n))
    syllable = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi)))
    x = syllable ** 2 * voiced / (np.max(np.abs(voiced)) + 1e-9) \
        + 0.3 * (1 - syllable) ** 4 * fricative / (np.max(np.abs(fricative)) + 1e-9)
    return x


def _normalize_peak(x: np.ndarray, peak: float) -> np.ndarray:
    return x * (peak / (np.max(np.abs(x)) + 1e-12))


def make_synthetic_corpus(out_dir: str, n_speakers: int = 4, utts_per_speaker: int = 5,
                          seconds: float = 2.0, seed: int = 0,
                          sample_rate: int = Config.SAMPLE_RATE) -> Tuple[str, str]:
    """Write <out_dir>/clean/<speaker>-<k>.wav and <out_dir>/noise/{white,babble}.wav

    Returns (clean_dir, noise_dir).
    """
    rng = np.random.default_rng(seed)
    clean_dir = os.path.join(out_dir, 'clean')
    noise_dir = os.path.join(out_dir, 'noise')
    n = int(seconds * sample_rate)
    for s in range(n_speakers):
        f0 = rng.uniform(100.0, 250.0)
        formant = rng.uniform(500.0, 1500.0)
        for k in range(utts_per_speaker):
            x = _normalize_peak(_pseudo_speech(n, sample_rate, f0, formant, rng), 0.5)
            AudioProcessor.write_wav(os.path.join(clean_dir, f"spk{s:02d}-{k:03d}.wav"),
                                     Waveform(x, sample_rate))

    white = np.clip(rng.normal(scale=0.15, size=int(1.5 * n)), -1, 1)
    AudioProcessor.write_wav(os.path.join(noise_dir, 'white.wav'), Waveform(white, sample_rate))
    babble_len = int(0.75 * n)  # shorter than an utterance, so mixing tiles it
    babble = sum(_pseudo_speech(babble_len, sample_rate, rng.uniform(90, 260), rng.uniform(400, 1800), rng)
                 for _ in range(6))
    AudioProcessor.write_wav(os.path.join(noise_dir, 'babble.wav'),
                             Waveform(_normalize_peak(babble, 0.5), sample_rate))
    print(f"✅ Synthetic corpus: {n_speakers * utts_per_speaker} utterances, 2 noises in {out_dir}")
    return clean_dir, noise_dir


# -------------------------------------------------------------- training data

@dataclass
class Utterance:
    utt_id: str
    clean: np.ndarray
    noisy: np.ndarray


def load_utterances(manifest: Manifest) -> List[Utterance]:
    utterances = []
    for row in manifest:
        if not row.noisy_path:
            raise InputError(f"{row.utt_id}: manifest row has no noisy path; run the mixer first")
        clean = AudioProcessor.read_wav(row.target_path).samples
        noisy = AudioProcessor.read_wav(row.noisy_path).samples
        if clean.shape != noisy.shape:
            raise InputError(f"{row.utt_id}: clean and noisy lengths differ")
        utterances.append(Utterance(row.utt_id, clean, noisy))
    return utterances


MIN_CROP_POWER = 1e-10   # mean-removed power per sample below which a clean crop counts as silent


def _window_energies(x: np.ndarray, crop_len: int) -> np.ndarray:
    """Mean-removed energy of every length-crop_len window of x"""
    s1 = np.concatenate([[0.0], np.cumsum(x)])
    s2 = np.concatenate([[0.0], np.cumsum(x * x)])
    total = s1[crop_len:] - s1[:-crop_len]
    return (s2[crop_len:] - s2[:-crop_len]) - total * total / crop_len


def _crop(utt: Utterance, crop_len: int,
          rng: np.random.Generator) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    length = utt.clean.shape[0]
    floor = MIN_CROP_POWER * crop_len
    if length < crop_len:
        clean = np.pad(utt.clean, (0, crop_len - length))
        if np.sum((clean - clean.mean()) ** 2) <= floor:
            return None
        return np.pad(utt.noisy, (0, crop_len - length)), clean
    candidates = np.flatnonzero(_window_energies(utt.clean, crop_len) > floor)
    if candidates.size == 0:
        return None
    offset = int(candidates[rng.integers(0, candidates.size)])
    return utt.noisy[offset:offset + crop_len], utt.clean[offset:offset + crop_len]


def crop_batches(utterances: List[Utterance], crop_len: int, batch_size: int,
                 rng: np.random.Generator) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Shuffle, crop (or zero-pad) to crop_len and yield (noisy [N, L], clean [N, L]) batches

    Offsets are drawn among windows whose clean signal is not silent;
    utterances with no such window are skipped.
    """
    order = rng.permutation(len(utterances))
    noisy, clean = [], []
    for idx in order:
        pair = _crop(utterances[idx], crop_len, rng)
        if pair is None:
            print(f"⚠️ {utterances[idx].utt_id}: clean signal is silent; skipped")
            continue
        noisy.append(pair[0])
        clean.append(pair[1])
        if len(noisy) == batch_size:
            yield np.stack(noisy), np.stack(clean)
            noisy, clean = [], []
    if noisy:
        yield np.stack(noisy), np.stack(clean)
