"""
Enhancement service: checkpoint in, enhanced WAV files out
"""
import os
from concurrent.futures import ThreadPoolExecutor
from typing import List

from audio_processing import AudioProcessor
from config import Config
from dsp import Waveform
from errors import InputError
from models import MVNet, model_manager


class EnhancementService:
    """Run a trained MVNet over single files or whole directories"""

    def __init__(self, model: MVNet, identity_mask: bool = False):
        self.model = model
        self.identity_mask = identity_mask
        self.model.eval()

    @classmethod
    def from_checkpoint(cls, ckpt_path: str, identity_mask: bool = False) -> 'EnhancementService':
        return cls(model_manager.get_model(ckpt_path), identity_mask)

    def enhance_waveform(self, noisy: Waveform) -> Waveform:
        enhanced, _ = self.model.forward(noisy, 'identity' if self.identity_mask else None)
        return enhanced

    def enhance_file(self, in_path: str, out_path: str) -> str:
        noisy = AudioProcessor.read_wav(in_path)
        AudioProcessor.write_wav(out_path, self.enhance_waveform(noisy))
        return out_path

    def enhance_path(self, in_path: str, out_path: str, workers: int = None) -> List[str]:
        """A file maps to `out_path`; a directory maps every *.wav to out_path/<same name>"""
        if os.path.isfile(in_path):
            if os.path.isdir(out_path):
                out_path = os.path.join(out_path, os.path.basename(in_path))
            return [self.enhance_file(in_path, out_path)]
        if not os.path.isdir(in_path):
            raise InputError(f"{in_path}: no such file or directory")

        names = sorted(n for n in os.listdir(in_path) if AudioProcessor.allowed_file(n))
        if not names:
            raise InputError(f"{in_path}: no .wav files to enhance")
        os.makedirs(out_path, exist_ok=True)
        print(f"Enhancing {len(names)} files from {in_path}...")
        with ThreadPoolExecutor(max_workers=workers or Config.NUM_WORKERS) as executor:
            written = list(executor.map(
                lambda n: self.enhance_file(os.path.join(in_path, n), os.path.join(out_path, n)), names))
        seconds = sum(AudioProcessor.get_audio_duration(p) for p in written)
        print(f"✅ Wrote {len(written)} enhanced files ({seconds:.2f} s of audio) to {out_path}")
        return written
