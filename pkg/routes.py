"""
Flask routes for the enhancement service
"""
import io
import os
import uuid

from flask import jsonify, request, send_file
from werkzeug.utils import secure_filename

from audio_processing import AudioProcessor
from config import Config, RunConfig
from enhancement import EnhancementService
from errors import InputError, MVNetError
from models import model_manager


def register_routes(app):
    """Register all Flask routes; the served checkpoint is app.config['MVNET_CHECKPOINT']"""

    def checkpoint():
        return app.config.get('MVNET_CHECKPOINT')

    def service() -> EnhancementService:
        ckpt_path = checkpoint()
        if not ckpt_path:
            raise InputError("no checkpoint configured; start the server with --ckpt")
        return EnhancementService(model_manager.get_model(ckpt_path))

    @app.errorhandler(MVNetError)
    def handle_mvnet_error(e: MVNetError):
        status = 400 if isinstance(e, InputError) else 500
        return jsonify({'error': str(e)}), status

    @app.route('/health')
    def health():
        """Health check endpoint"""
        ckpt_path = checkpoint()
        return jsonify({
            'status': 'healthy',
            'checkpoint': ckpt_path,
            'model_loaded': bool(ckpt_path) and ckpt_path in model_manager.model_cache,
            'sample_rate': Config.SAMPLE_RATE,
        })

    @app.route('/api/config')
    def api_config():
        """Resolved model config of the served checkpoint"""
        model = service().model
        return jsonify({
            'checkpoint': checkpoint(),
            'parameters': model.parameter_count(),
            'config': {k: v for k, v in RunConfig(model=model.cfg).to_dict().items()
                       if k.startswith(('model.', 'stft.'))},
        })

    @app.route('/enhance', methods=['POST'])
    def enhance_audio():
        """PCM16 mono 16 kHz WAV in, enhanced WAV of the same length out"""
        if 'audio' not in request.files:
            return jsonify({'error': 'No audio file provided'}), 400

        file = request.files['audio']
        if file.filename == '':
            return jsonify({'error': 'No file selected'}), 400

        if not AudioProcessor.allowed_file(file.filename):
            return jsonify({'error': 'Invalid file type (expected .wav)'}), 400

        enhancer = service()
        filename = secure_filename(file.filename)
        unique_id = str(uuid.uuid4())[:8]
        os.makedirs(Config.UPLOAD_FOLDER, exist_ok=True)
        in_path = os.path.join(Config.UPLOAD_FOLDER, f"{unique_id}_{filename}")
        out_path = os.path.join(Config.UPLOAD_FOLDER, f"{unique_id}_enhanced_{filename}")
        file.save(in_path)
        try:
            enhancer.enhance_file(in_path, out_path)
            with open(out_path, 'rb') as f:
                payload = io.BytesIO(f.read())
        finally:
            for path in (in_path, out_path):
                if os.path.exists(path):
                    os.remove(path)
        print(f"✅ Enhanced {filename}")
        return send_file(payload, mimetype='audio/wav', as_attachment=True,
                         download_name=f"enhanced_{filename}")
