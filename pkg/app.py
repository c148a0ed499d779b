"""
MVNet enhancement service - Flask entry point
"""
import os

from flask import Flask

from config import Config
from routes import register_routes


def create_app(ckpt_path: str = None):
    """Create and configure Flask application"""
    Config.ensure_directories()

    app = Flask(__name__)
    app.config['UPLOAD_FOLDER'] = Config.UPLOAD_FOLDER
    app.config['MAX_CONTENT_LENGTH'] = Config.MAX_CONTENT_LENGTH
    app.config['MVNET_CHECKPOINT'] = ckpt_path

    register_routes(app)

    if not ckpt_path:
        print("⚠️  WARNING: No checkpoint given; /enhance will refuse requests.")
    else:
        print(f"✅ Serving checkpoint {ckpt_path} (loaded on first request)")
    print("=" * 60)
    return app


if __name__ == '__main__':
    app = create_app(os.environ.get('MVNET_CHECKPOINT'))
    app.run(host='0.0.0.0', port=5000, debug=False)
