import os
from pathlib import Path

import numpy as np
import pytest

from audio_processing import read_wav, write_wav
from config import MixSpec
from dataset import (SPLITS, Manifest, ManifestRow, Utterance, build_manifest, crop_batches,
                     list_wavs, load_utterances, mix_manifest, speaker_of)
from dsp import Waveform
from errors import FormatError, InputError


def _rows(manifests):
    return {split: [(r.utt_id, os.path.basename(r.noise_path), r.snr_db) for r in manifests[split]]
            for split in SPLITS}


def test_manifest_depends_only_on_inputs_and_seed(corpus, tmp_path):
    again = build_manifest(corpus['clean_dir'], corpus['noise_dir'], MixSpec(seed=3), str(tmp_path / 'again'))
    assert _rows(again) == _rows(corpus['manifests'])
    other = build_manifest(corpus['clean_dir'], corpus['noise_dir'], MixSpec(seed=4), str(tmp_path / 'other'))
    assert _rows(other) != _rows(corpus['manifests'])


def test_snrs_fall_in_range(corpus):
    for split in SPLITS:
        for row in corpus['manifests'][split]:
            assert -15.0 <= row.snr_db <= 5.0


def test_splits_are_speaker_disjoint(corpus):
    speakers = {split: {speaker_of(r.clean_path) for r in corpus['manifests'][split]} for split in SPLITS}
    assert all(speakers.values())
    assert not speakers['train'] & speakers['valid']
    assert not speakers['train'] & speakers['test']
    assert not speakers['valid'] & speakers['test']
    assert sum(len(corpus['manifests'][s]) for s in SPLITS) == 12


def test_manifest_file_round_trip(corpus):
    loaded = Manifest.load(corpus['paths']['train'])
    assert loaded.dumps() == corpus['manifests']['train'].dumps()


def test_files_without_speaker_ids_fall_back_to_file_split(tmp_path, capsys):
    clean, noise = tmp_path / 'clean', tmp_path / 'noise'
    for i in range(5):
        write_wav(str(clean / f"utt{i}.wav"), Waveform(0.1 * np.ones(800)))
    write_wav(str(noise / 'n.wav'), Waveform(0.1 * np.ones(800)))
    manifests = build_manifest(str(clean), str(noise), MixSpec(), str(tmp_path / 'out'))
    assert '⚠️' in capsys.readouterr().out
    assert sum(len(m) for m in manifests.values()) == 5
    assert all(len(manifests[s]) >= 1 for s in SPLITS)


def test_mixing_keeps_lengths_and_is_worker_independent(corpus):
    rows = list(corpus['manifests']['train'])
    for row in rows:
        assert len(read_wav(row.noisy_path)) == len(read_wav(row.clean_path))
    before = [Path(r.noisy_path).read_bytes() for r in rows]
    mix_manifest(corpus['manifests']['train'], corpus['spec'], workers=1, offset=0)
    assert [Path(r.noisy_path).read_bytes() for r in rows] == before


def test_malformed_manifests(tmp_path):
    bad = tmp_path / 'bad.tsv'
    bad.write_text('a\tb\tc\n', encoding='utf-8')
    with pytest.raises(FormatError):
        Manifest.load(str(bad))
    bad.write_text('a\tb\tc\tloud\td\n', encoding='utf-8')
    with pytest.raises(FormatError):
        Manifest.load(str(bad))
    with pytest.raises(FormatError):
        Manifest([ManifestRow('a', 'b', 'c', 0.0), ManifestRow('a', 'd', 'e', 1.0)])
    with pytest.raises(InputError):
        Manifest.load(str(tmp_path / 'absent.tsv'))


def test_four_field_rows_have_no_noisy_path(tmp_path):
    path = tmp_path / 'm.tsv'
    path.write_text('u1\tc.wav\tn.wav\t-3.5\n', encoding='utf-8')
    manifest = Manifest.load(str(path))
    assert manifest.rows[0].snr_db == -3.5
    with pytest.raises(InputError):
        load_utterances(manifest)


def test_empty_directory_is_rejected(tmp_path):
    with pytest.raises(InputError):
        list_wavs(str(tmp_path))
    with pytest.raises(InputError):
        list_wavs(str(tmp_path / 'absent'))


def test_crop_batches_crop_and_pad():
    utts = [Utterance('long', np.arange(100.0), np.arange(100.0) + 0.5),
            Utterance('short', np.ones(50), np.ones(50)),
            Utterance('exact', np.sin(np.arange(80.0)), np.sin(np.arange(80.0)))]
    batches = list(crop_batches(utts, crop_len=80, batch_size=2, rng=np.random.default_rng(0)))
    assert [b[0].shape for b in batches] == [(2, 80), (1, 80)]
    noisy = np.concatenate([b[0] for b in batches])
    clean = np.concatenate([b[1] for b in batches])
    padded = [row for row in clean if row[49] == 1.0]
    assert len(padded) == 1 and not padded[0][50:].any()
    cropped = [(n, c) for n, c in zip(noisy, clean) if c[1] - c[0] == 1.0]
    assert len(cropped) == 1
    np.testing.assert_allclose(cropped[0][0] - cropped[0][1], 0.5)


def test_speaker_of():
    assert speaker_of('/x/spk01-003.wav') == 'spk01'
    assert speaker_of('/x/utt3.wav') is None


def test_silent_utterances_are_skipped(capsys):
    utts = [Utterance('silent', np.zeros(120), 0.1 * np.ones(120)),
            Utterance('speech', np.sin(np.arange(120.0)), np.sin(np.arange(120.0)))]
    batches = list(crop_batches(utts, crop_len=80, batch_size=2, rng=np.random.default_rng(0)))
    assert [b[1].shape for b in batches] == [(1, 80)]
    assert 'silent' in capsys.readouterr().out
    assert list(crop_batches(utts[:1], crop_len=80, batch_size=2, rng=np.random.default_rng(0))) == []


@pytest.mark.parametrize('seed', range(5))
def test_crops_of_mostly_silent_utterance_carry_signal(seed):
    clean = np.zeros(1000)
    clean[900:960] = np.sin(np.arange(60.0))
    utts = [Utterance('late', clean, clean + 0.01)]
    [(_, crop)] = list(crop_batches(utts, crop_len=200, batch_size=1, rng=np.random.default_rng(seed)))
    assert np.sum((crop[0] - crop[0].mean()) ** 2) > 1e-6


def test_references_keep_the_recorded_snr(corpus):
    rescaled = []
    offset = 0
    for split in SPLITS:
        manifest = corpus['manifests'][split]
        rescaled += [r for _, _, r in mix_manifest(manifest, corpus['spec'], workers=2, offset=offset)]
        offset += len(manifest)
        for row in manifest:
            assert row.reference_path and os.path.exists(row.reference_path)
            reference = read_wav(row.target_path).samples
            noise = read_wav(row.noisy_path).samples - reference
            achieved = 10 * np.log10(np.sum(reference ** 2) / np.sum(noise ** 2))
            assert achieved == pytest.approx(row.snr_db, abs=0.05), row.utt_id
    assert any(r < 1.0 for r in rescaled)


def test_rows_without_reference_score_against_the_source():
    row = ManifestRow('u', 'c.wav', 'n.wav', 0.0, 'x.wav')
    assert row.target_path == 'c.wav'
    assert ManifestRow('u', 'c.wav', 'n.wav', 0.0, 'x.wav', 'r.wav').target_path == 'r.wav'
