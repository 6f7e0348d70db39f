"""Model configurations, construction, parameter counting and ``.hiec`` files."""

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError
from .layers import Conv2D, Dense, Dropout, Flatten, LayerStack, MaxPool2D, ReLU
from .metrics import NUM_CLASSES

MAGIC = b"HIEC"
FORMAT_VERSION = 1
CONFIG_DIR = Path(__file__).with_name("configs")


@dataclass
class ModelConfig:
    name: str = "model"
    input_size: int = 224
    input_channels: int = 1
    conv_filters: list = field(default_factory=lambda: [32, 64, 64, 64])
    hidden_neurons: list = field(default_factory=lambda: [64])
    dropout_rate: float = 0.0
    lr: float = 0.001
    batch_size: int = 64
    epochs: int = 50
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.conv_filters = [int(f) for f in self.conv_filters]
        self.hidden_neurons = [int(h) for h in self.hidden_neurons]

    def validate(self):
        if not self.conv_filters:
            raise ConfigError("conv_filters must not be empty")
        if any(f < 1 for f in self.conv_filters + self.hidden_neurons):
            raise ConfigError("filter and neuron counts must be positive")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        spatial_sizes(self)
        return self

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return ModelConfig(**data)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        data.setdefault("name", path.stem)
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


def spatial_sizes(cfg):
    """Per-block spatial extents ``[s0, s1, ...]`` with ``s_i = (s_{i-1} - 2) // 2``."""
    sizes = [cfg.input_size]
    for i, _ in enumerate(cfg.conv_filters, start=1):
        s = sizes[-1]
        if s < 3:
            raise ConfigError(f"conv{i}: input {s}x{s} is smaller than the 3x3 kernel")
        if s - 2 < 2:
            raise ConfigError(f"pool{i}: input {s - 2}x{s - 2} is smaller than the 2x2 window")
        sizes.append((s - 2) // 2)
    return sizes


def flatten_size(cfg):
    return spatial_sizes(cfg)[-1] ** 2 * cfg.conv_filters[-1]


def build_model(cfg, seed=None, dtype=np.float32):
    """Assemble ``[conv, relu, pool] * k, flatten, [dense, relu] * h, dropout?, dense(26)``.

    Weights are He-uniform from a generator seeded with ``seed`` (default
    ``cfg.seed``), drawn in declaration order; biases start at zero.
    """
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    layers = []
    channels = cfg.input_channels
    for i, filters in enumerate(cfg.conv_filters, start=1):
        layers += [
            Conv2D(channels, filters, rng=rng, dtype=dtype, name=f"conv{i}"),
            ReLU(name=f"relu_conv{i}"),
            MaxPool2D(name=f"pool{i}"),
        ]
        channels = filters
    layers.append(Flatten())
    width = flatten_size(cfg)
    for i, neurons in enumerate(cfg.hidden_neurons, start=1):
        layers += [Dense(width, neurons, rng=rng, dtype=dtype, name=f"dense{i}"), ReLU(name=f"relu_dense{i}")]
        width = neurons
    if cfg.dropout_rate > 0:
        layers.append(Dropout(cfg.dropout_rate, rng=np.random.default_rng([seed, 1])))
    layers.append(Dense(width, NUM_CLASSES, rng=rng, dtype=dtype, name="output"))
    return LayerStack(layers, (cfg.input_size, cfg.input_size, cfg.input_channels))


def parameter_shapes(cfg):
    shapes = []
    cin = cfg.input_channels
    for f in cfg.conv_filters:
        shapes += [(3, 3, cin, f), (f,)]
        cin = f
    width = flatten_size(cfg)
    for h in cfg.hidden_neurons + [NUM_CLASSES]:
        shapes += [(width, h), (h,)]
        width = h
    return shapes


def count_parameters(cfg):
    cfg.validate()
    total = 0
    cin = cfg.input_channels
    for f in cfg.conv_filters:
        total += 9 * cin * f + f
        cin = f
    width = flatten_size(cfg)
    for h in cfg.hidden_neurons + [NUM_CLASSES]:
        total += width * h + h
        width = h
    return total


@dataclass
class ModelArtifact:
    config: ModelConfig
    params: list
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, cfg, model):
        return cls(config=cfg, params=[np.array(p, dtype=np.float32, copy=True) for p in model.params])

    def to_model(self, dtype=np.float32):
        model = build_model(self.config, dtype=dtype)
        for dst, src in zip(model.params, self.params):
            dst[...] = src
        return model

    def to_bytes(self):
        cfg_bytes = self.config.to_json().encode("utf-8")
        parts = [MAGIC, struct.pack("<II", self.version, len(cfg_bytes)), cfg_bytes]
        parts += [np.ascontiguousarray(p, dtype="<f4").tobytes() for p in self.params]
        return b"".join(parts)


def save_model(artifact, path):
    Path(path).write_bytes(artifact.to_bytes())


def parse_model(blob):
    """Decode a ``.hiec`` byte string; raises :class:`FormatError` with the failing offset."""
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError("bad magic, expected b'HIEC'", offset=0)
    if len(blob) < 12:
        raise FormatError("truncated header", offset=len(blob))
    version, cfg_len = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    start = 12
    if len(blob) < start + cfg_len:
        raise FormatError("truncated config block", offset=len(blob))
    try:
        cfg = ModelConfig.from_dict(json.loads(blob[start : start + cfg_len].decode("utf-8")))
        shapes = parameter_shapes(cfg.validate())
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"unreadable config block: {exc}", offset=start) from exc
    except ConfigError as exc:
        raise IntegrityError(f"embedded config is invalid: {exc}") from exc
    offset = start + cfg_len
    params = []
    for i, shape in enumerate(shapes):
        nbytes = 4 * int(np.prod(shape))
        if len(blob) < offset + nbytes:
            raise FormatError(f"truncated parameter tensor {i} of shape {shape}", offset=len(blob))
        params.append(np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32))
        offset += nbytes
    if offset != len(blob):
        raise IntegrityError(f"{len(blob) - offset} trailing bytes after the last parameter tensor for this config")
    return ModelArtifact(config=cfg, params=params, version=version)


def load_model(path):
    return parse_model(Path(path).read_bytes())


def shipped_configs():
    """The five shipped ablation configs in file order (row 1 is the base model, row 4 the best)."""
    return [ModelConfig.load(p) for p in sorted(CONFIG_DIR.glob("*.json"))]


def base_config(**overrides):
    return ModelConfig.load(CONFIG_DIR / "row1_base.json").replace(**overrides)


def best_config(**overrides):
    return ModelConfig.load(CONFIG_DIR / "row4_best.json").replace(**overrides)
