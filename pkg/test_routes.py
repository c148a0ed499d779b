import io
import os

import pytest

from app import create_app
from audio_processing import read_wav, write_wav
from checkpoint import save_checkpoint
from config import Config
from models import MVNet, model_manager


@pytest.fixture
def ckpt(isolated_dirs, tiny_cfg):
    path = str(isolated_dirs / 'tiny.ckpt')
    save_checkpoint(path, MVNet(tiny_cfg))
    yield path
    model_manager.clear_cache(path)


@pytest.fixture
def client(ckpt):
    return create_app(ckpt).test_client()


@pytest.fixture
def wav_bytes(tmp_path, speech):
    path = str(tmp_path / 'upload.wav')
    write_wav(path, speech)
    with open(path, 'rb') as f:
        return f.read()


def test_health(client, ckpt):
    body = client.get('/health').get_json()
    assert body['status'] == 'healthy'
    assert body['checkpoint'] == ckpt
    assert body['sample_rate'] == 16000


def test_config_reports_served_model(client):
    body = client.get('/api/config').get_json()
    assert body['parameters'] > 0
    assert body['config']['model.lstm_hidden'] == '8'
    assert body['config']['stft.fft_size'] == '64'


def test_enhance_returns_wav_of_same_length(client, wav_bytes, tmp_path, speech):
    response = client.post('/enhance', data={'audio': (io.BytesIO(wav_bytes), 'speech.wav')},
                           content_type='multipart/form-data')
    assert response.status_code == 200
    assert response.mimetype == 'audio/wav'
    out = tmp_path / 'enhanced.wav'
    out.write_bytes(response.data)
    assert len(read_wav(str(out))) == len(speech)
    assert os.listdir(Config.UPLOAD_FOLDER) == []


@pytest.mark.parametrize('data, message', [
    ({}, 'No audio file provided'),
    ({'audio': (io.BytesIO(b''), '')}, 'No file selected'),
    ({'audio': (io.BytesIO(b'abc'), 'speech.mp3')}, 'Invalid file type'),
])
def test_enhance_rejects_bad_uploads(client, data, message):
    response = client.post('/enhance', data=data, content_type='multipart/form-data')
    assert response.status_code == 400
    assert message in response.get_json()['error']


def test_unreadable_wav_is_a_client_error(client):
    response = client.post('/enhance', data={'audio': (io.BytesIO(b'not a riff file'), 'x.wav')},
                           content_type='multipart/form-data')
    assert response.status_code == 400
    assert os.listdir(Config.UPLOAD_FOLDER) == []


def test_no_checkpoint_configured(isolated_dirs, wav_bytes):
    client = create_app(None).test_client()
    assert client.get('/health').get_json()['model_loaded'] is False
    response = client.post('/enhance', data={'audio': (io.BytesIO(wav_bytes), 'speech.wav')},
                           content_type='multipart/form-data')
    assert response.status_code == 400
    assert 'no checkpoint' in response.get_json()['error']


def test_checkpoint_is_read_from_app_config(isolated_dirs, ckpt, wav_bytes):
    app = create_app(None)
    app.config['MVNET_CHECKPOINT'] = ckpt
    client = app.test_client()
    assert client.get('/health').get_json()['checkpoint'] == ckpt
    response = client.post('/enhance', data={'audio': (io.BytesIO(wav_bytes), 'speech.wav')},
                           content_type='multipart/form-data')
    assert response.status_code == 200
