import math
import os
import shutil

import numpy as np
import pytest

from dataset import Manifest, ManifestRow
from errors import ContractError, DimensionError, InputError
from metrics import MetricsReport, evaluate_corpus, seg_snr_db, si_snr_db, si_snri_db


def test_si_snr_reference_values():
    ref = np.sqrt(10.0) * np.array([1.0, -1.0, 1.0, -1.0])
    assert si_snr_db(ref + np.array([1.0, 1.0, -1.0, -1.0]), ref) == pytest.approx(10.0)
    assert si_snr_db(3 * ref, ref) == 99.0
    assert si_snr_db(np.array([1.0, 1.0, -1.0, -1.0]), ref) == -99.0


def test_si_snr_rejects_bad_pairs():
    with pytest.raises(InputError):
        si_snr_db(np.ones(4), np.zeros(4))
    with pytest.raises(DimensionError):
        si_snr_db(np.ones(4), np.ones(3))


def test_improvement_is_a_difference(rng):
    clean = rng.standard_normal(1000)
    noisy = clean + rng.standard_normal(1000)
    assert si_snri_db(noisy, noisy, clean) == 0.0
    assert si_snri_db(clean + 0.1 * (noisy - clean), noisy, clean) == pytest.approx(20.0, abs=0.5)


def test_segmental_snr_averages_frames():
    clean = np.ones(800)
    enhanced = np.concatenate([np.full(400, 1 - np.sqrt(0.1)), np.full(400, 1 - np.sqrt(10 ** -1.5))])
    assert seg_snr_db(enhanced, clean) == pytest.approx(12.5)


def test_segmental_snr_skips_silence_and_clamps():
    clean = np.concatenate([np.zeros(400), np.ones(400)])
    assert seg_snr_db(clean, clean) == 35.0
    assert seg_snr_db(np.concatenate([np.ones(400), -3 * np.ones(400)]), clean) == -10.0
    with pytest.raises(InputError):
        seg_snr_db(np.zeros(800), np.zeros(800))
    with pytest.raises(InputError):
        seg_snr_db(np.ones(100), np.ones(100))


def test_unprocessed_input_scores_zero_improvement(corpus):
    manifest = corpus['manifests']['test']
    noisy_dir = os.path.dirname(manifest.rows[0].noisy_path)
    report = evaluate_corpus(manifest, enhanced_dir=noisy_dir, workers=2)
    assert not report.failed
    for row in report.rows:
        assert row.si_snri_db == 0.0
        assert math.isnan(row.simi)


def test_clean_input_scores_ceiling(corpus, tmp_path):
    manifest = corpus['manifests']['valid']
    enhanced_dir = tmp_path / 'oracle'
    enhanced_dir.mkdir()
    for row in manifest:
        shutil.copy(row.target_path, enhanced_dir / os.path.basename(row.noisy_path))
    report = evaluate_corpus(manifest, enhanced_dir=str(enhanced_dir), workers=2)
    means = report.means()
    assert means['seg_snr_db'] == 35.0
    assert means['si_snr_db'] == 99.0
    assert means['si_snri_db'] > 0


def test_missing_file_is_a_failed_row(corpus, tmp_path):
    rows = list(corpus['manifests']['test'])
    ghost = ManifestRow('ghost', str(tmp_path / 'nope.wav'), rows[0].noise_path, 0.0, str(tmp_path / 'ghost.wav'))
    manifest = Manifest(rows + [ghost])
    report = evaluate_corpus(manifest, enhanced_dir=os.path.dirname(rows[0].noisy_path), workers=1)
    assert [r.utt_id for r in report.failed] == ['ghost']
    assert report.means()['si_snri_db'] == 0.0


def test_report_csv_round_trip(corpus, tmp_path):
    manifest = corpus['manifests']['test']
    out = str(tmp_path / 'reports' / 'test.csv')
    report = evaluate_corpus(manifest, enhanced_dir=os.path.dirname(manifest.rows[0].noisy_path),
                             out_path=out, config={'enhanced': 'noisy'})
    with open(out, encoding='utf-8') as f:
        lines = f.read().splitlines()
    assert lines[0].startswith('utt_id,si_snr_db,')
    assert lines[-1].startswith('MEAN,')
    assert len(lines) == len(manifest) + 2
    back = MetricsReport.from_csv(out)
    assert [r.utt_id for r in back.rows] == [r.utt_id for r in report.rows]
    assert back.rows[0].si_snr_db == report.rows[0].si_snr_db
    assert back.config == {'enhanced': 'noisy'}


def test_exactly_one_source_of_enhanced_audio(corpus):
    with pytest.raises(ContractError):
        evaluate_corpus(corpus['manifests']['test'])
