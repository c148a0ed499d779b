"""
Configuration module for MVNet

Process-wide constants live on `Config`; everything a run can change lives in
the dataclasses below and is read from a key=value file by `RunConfig`.
"""
import os
import sys
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Dict, List, Tuple, get_type_hints

from errors import ConfigError


class Config:
    """Application configuration"""

    # Paths
    DATA_FOLDER = os.environ.get('MVNET_DATA_DIR', './data')
    RUNS_FOLDER = os.environ.get('MVNET_RUNS_DIR', './runs')
    UPLOAD_FOLDER = os.environ.get('MVNET_UPLOAD_DIR', './uploads')

    # Audio
    SAMPLE_RATE = 16000
    PCM_SCALE = 32768.0
    PEAK_TARGET = 0.99  # mixtures are rescaled to this peak when they clip

    # Parallelism
    NUM_WORKERS = int(os.environ.get('MVNET_WORKERS', '4'))
    NUM_THREADS = os.environ.get('MVNET_THREADS', '1')

    # Metrics
    SI_SNR_CAP_DB = 99.0
    SEG_SNR_FRAME = 400
    SEG_SNR_CLAMP = (-10.0, 35.0)

    # Serving
    MAX_CONTENT_LENGTH = 50 * 1024 * 1024  # 50MB max
    ALLOWED_EXTENSIONS = {'wav'}

    @classmethod
    def pin_threads(cls):
        """Fix BLAS thread counts so reductions run in a fixed order

        BLAS reads these variables when numpy loads, so this only takes effect
        when config is imported first (the CLI, the app and conftest all do).
        """
        if 'numpy' in sys.modules:
            print("⚠️ numpy was imported before config; BLAS thread counts are not pinned")
        for var in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
            os.environ.setdefault(var, cls.NUM_THREADS)

    @classmethod
    def ensure_directories(cls):
        """Create necessary directories"""
        for folder in [cls.DATA_FOLDER, cls.RUNS_FOLDER, cls.UPLOAD_FOLDER]:
            os.makedirs(folder, exist_ok=True)


# must run before numpy is imported anywhere
Config.pin_threads()


@dataclass
class StftConfig:
    win_length: int = 400   # 25 ms at 16 kHz
    hop_length: int = 100   # 6.25 ms
    fft_size: int = 512
    window: str = 'hann'

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def validate(self):
        if not 0 < self.hop_length <= self.win_length <= self.fft_size:
            raise ConfigError(
                f"need 0 < hop_length <= win_length <= fft_size, got "
                f"{self.hop_length}, {self.win_length}, {self.fft_size}")
        if self.fft_size & (self.fft_size - 1):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.window != 'hann':
            raise ConfigError(f"unsupported window: {self.window}")


PLACEMENTS = ('before_lstm', 'after_lstm', 'off')
MASK_BOUNDINGS = ('tanh_mag', 'unbounded')
BN_MODES = ('joint', 'independent')

# ablation arms: (attention placement, vocal branch)
VARIANTS = {
    'dccrn': ('off', False),
    'ma': ('before_lstm', False),
    'bma': ('after_lstm', False),
    'vr': ('off', True),
    'mvl': ('before_lstm', True),
}


@dataclass
class ModelConfig:
    encoder_channels: Tuple[int, ...] = (8, 16, 32, 32)
    kernel: Tuple[int, int] = (5, 2)    # (freq, time)
    stride: Tuple[int, int] = (2, 1)
    lstm_hidden: int = 64
    attention: str = 'before_lstm'
    attention_loops: int = 2
    share_attention_weights: bool = True
    attention_value_init: str = 'zero'
    use_vocal: bool = True
    tdnn_channels: Tuple[int, ...] = (1024, 1024, 1024, 1024, 512)
    embedding_dim: int = 256
    tdnn_divisor: int = 8
    mask_bounding: str = 'tanh_mag'
    bn_mode: str = 'joint'
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    prelu_init: float = 0.25
    seed: int = 0
    stft: StftConfig = field(default_factory=StftConfig)

    @classmethod
    def full_scale(cls, **overrides) -> 'ModelConfig':
        """Channel plan and embedding size of the published model"""
        base = cls(encoder_channels=(32, 64, 128, 256, 256, 256),
                   lstm_hidden=256, tdnn_divisor=1)
        return replace(base, **overrides)

    def with_variant(self, name: str) -> 'ModelConfig':
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant '{name}' (choose from {sorted(VARIANTS)})")
        placement, vocal = VARIANTS[name]
        return replace(self, attention=placement, use_vocal=vocal)

    @property
    def scaled_tdnn_channels(self) -> Tuple[int, ...]:
        return tuple(max(1, c // self.tdnn_divisor) for c in self.tdnn_channels)

    @property
    def scaled_embedding_dim(self) -> int:
        return max(1, self.embedding_dim // self.tdnn_divisor)

    def validate(self):
        self.stft.validate()
        if len(self.encoder_channels) < 2:
            raise ConfigError("encoder_channels needs at least two entries")
        if len(self.tdnn_channels) != 5:
            raise ConfigError("tdnn_channels must list exactly five layers")
        if self.attention not in PLACEMENTS:
            raise ConfigError(f"attention must be one of {PLACEMENTS}")
        if self.mask_bounding not in MASK_BOUNDINGS:
            raise ConfigError(f"mask_bounding must be one of {MASK_BOUNDINGS}")
        if self.bn_mode not in BN_MODES:
            raise ConfigError(f"bn_mode must be one of {BN_MODES}")
        if self.attention_value_init not in ('zero', 'uniform'):
            raise ConfigError("attention_value_init must be 'zero' or 'uniform'")
        if self.attention_loops < 0:
            raise ConfigError("attention_loops must be >= 0")

    def dumps(self) -> str:
        return '\n'.join(f"{k}={v}" for k, v in _items(self, 'model')) + '\n'

    @classmethod
    def loads(cls, text: str) -> 'ModelConfig':
        cfg = cls()
        for key, value in _parse_lines(text.splitlines()):
            _assign(cfg, 'model', key, value)
        cfg.validate()
        return cfg


@dataclass
class LossConfig:
    alpha: float = 100.0
    delta: float = 1e-8
    zero_mean: bool = True
    si_snr_clamp_db: float = 50.0

    def validate(self):
        if self.alpha <= 0:
            raise ConfigError("loss.alpha must be > 0")
        if not 0 < self.delta < 1e-2:
            raise ConfigError("loss.delta must be a small positive number")


@dataclass
class MixSpec:
    snr_lo: float = -15.0
    snr_hi: float = 5.0
    seed: int = 0
    clip_policy: str = 'rescale_peak'
    train_frac: float = 0.8
    valid_frac: float = 0.1

    @property
    def snr_range_db(self) -> Tuple[float, float]:
        return (self.snr_lo, self.snr_hi)

    def validate(self):
        if self.snr_lo > self.snr_hi:
            raise ConfigError("mix.snr_lo must not exceed mix.snr_hi")
        if self.clip_policy != 'rescale_peak':
            raise ConfigError(f"unsupported clip policy: {self.clip_policy}")
        if self.train_frac <= 0 or self.valid_frac < 0 or self.train_frac + self.valid_frac > 1:
            raise ConfigError("split fractions must satisfy 0 < train, 0 <= valid, train + valid <= 1")


@dataclass
class TrainConfig:
    lr: float = 0.001
    schedule: str = 'halve_on_val_increase'
    epochs: int = 20
    batch_size: int = 4
    crop_seconds: float = 3.0
    loss: str = 'joint'
    steps_per_epoch: int = 0   # 0 = one pass over the training manifest
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.schedule not in ('halve_on_val_increase', 'constant'):
            raise ConfigError(f"unsupported schedule: {self.schedule}")
        if self.loss not in ('joint', 'si_snr'):
            raise ConfigError("train.loss must be 'joint' or 'si_snr'")
        if self.batch_size < 1 or self.epochs < 0 or self.crop_seconds <= 0:
            raise ConfigError("batch_size, epochs and crop_seconds must be positive")


@dataclass
class PathsConfig:
    data_dir: str = Config.DATA_FOLDER
    train_manifest: str = ''
    valid_manifest: str = ''
    test_manifest: str = ''
    out_dir: str = os.path.join(Config.RUNS_FOLDER, 'default')

    def manifest(self, split: str) -> str:
        explicit = getattr(self, f"{split}_manifest")
        return explicit or os.path.join(self.data_dir, f"{split}.tsv")


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    mix: MixSpec = field(default_factory=MixSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @staticmethod
    def read_lines(path: str) -> List[str]:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return f.read().splitlines()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e

    @classmethod
    def from_file(cls, path: str) -> 'RunConfig':
        return cls.from_lines(cls.read_lines(path))

    @classmethod
    def from_lines(cls, lines: List[str]) -> 'RunConfig':
        cfg = cls()
        for key, value in _parse_lines(lines):
            cfg.set(key, value)
        cfg.validate()
        return cfg

    def set(self, key: str, value: str):
        """Assign one dotted key from its string form"""
        if key == 'seed':
            self.set_seed(_coerce(int, value, key))
        elif key == 'model.variant':
            self.model = self.model.with_variant(value.strip())
        else:
            _assign(self, '', key, value)

    def set_seed(self, seed: int):
        self.seed = seed
        self.model.seed = seed
        self.mix.seed = seed

    def validate(self):
        self.model.validate()
        self.loss.validate()
        self.mix.validate()
        self.train.validate()

    def to_dict(self) -> Dict[str, str]:
        return dict(_items(self, ''))

    def dump(self) -> str:
        return '\n'.join(f"{k}={v}" for k, v in _items(self, '')) + '\n'

    def save(self, path: str):
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.dump())


# ---------------------------------------------------------------- key=value

def _parse_lines(lines) -> List[Tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{raw.strip()}'")
        key, value = line.split('=', 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _items(obj, prefix: str):
    """Yield (dotted key, string value) for every leaf field, in field order"""
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            # stft is addressed at top level, not as model.stft
            child = f.name if f.name == 'stft' or not prefix else f"{prefix}.{f.name}"
            yield from _items(value, child)
        else:
            yield (f"{prefix}.{f.name}" if prefix else f.name), _format(value)


def _coerce(kind, text: str, key: str):
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if getattr(kind, '__origin__', None) in (tuple, Tuple):
            item = kind.__args__[0]
            values = tuple(item(v.strip()) for v in text.split(',') if v.strip())
            if kind.__args__[-1] is not Ellipsis and len(values) != len(kind.__args__):
                raise ValueError(f"expected {len(kind.__args__)} values")
            return values
        return kind(text)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: '{text}' ({e})") from e


def _assign(root, prefix: str, key: str, value: str):
    """Resolve a dotted key against nested dataclasses and set the coerced value"""
    parts = key.split('.')
    if parts[0] == 'stft':
        parts = ['model'] + parts
    if prefix and parts[0] == prefix:
        parts = parts[1:]
    target = root
    for part in parts[:-1]:
        child = getattr(target, part, None)
        if not is_dataclass(child):
            raise ConfigError(f"unknown config key: {key}")
        target = child
    name = parts[-1]
    hints = get_type_hints(type(target))
    if name not in hints or is_dataclass(getattr(target, name, None)):
        raise ConfigError(f"unknown config key: {key}")
    setattr(target, name, _coerce(hints[name], value, key))
