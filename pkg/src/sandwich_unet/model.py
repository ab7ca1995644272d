"""Sandwich U-Net: ReLU encoder, AReLU decoder.

Six encoder blocks separated by five 2x2 max-pools (the sixth block is the
bottleneck), mirrored by five decoder blocks that each up-sample by a learnable
2x2 transposed convolution, concatenate the mirror encoder output and apply two
3x3 conv + activation pairs.  Decoder blocks are counted from the deepest one;
the first ``arelu_count`` of them use AReLU, the rest ReLU.  A 1x1 conv and a
sigmoid produce the per-pixel foreground probability.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import CheckpointError, ShapeError
from .tensor import DTYPE, Tensor, mul, sigmoid

ENCODER_LEVELS = 6
DECODER_LEVELS = ENCODER_LEVELS - 1
DIVISOR = 2 ** DECODER_LEVELS

CHECKPOINT_MAGIC = b"SWUN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    out_channels: int = 1
    base_width: int = 32
    arelu_count: int = 5
    alpha_init: float = 0.9
    beta_init: float = 0.9

    def __post_init__(self):
        if not 0 <= self.arelu_count <= DECODER_LEVELS:
            raise ValueError(f"arelu_count must be in [0, {DECODER_LEVELS}], got {self.arelu_count}")
        if self.base_width < 1:
            raise ValueError(f"base_width must be >= 1, got {self.base_width}")
        if self.in_channels != 1 or self.out_channels != 1:
            raise ValueError("only single-channel input and output are supported")

    def width(self, level: int) -> int:
        return self.base_width * 2**level

    def decoder_activation(self, depth_index: int) -> str:
        """Activation of the decoder block ``depth_index`` steps up from the bottleneck."""
        return "arelu" if depth_index < self.arelu_count else "relu"


def architecture(config: UNetConfig) -> list[tuple[str, str]]:
    """(block name, activation) for every block, encoder first, decoder deepest-first."""
    blocks = [(f"enc{level + 1}", "relu") for level in range(ENCODER_LEVELS)]
    blocks += [(f"dec{d + 1}", config.decoder_activation(d)) for d in range(DECODER_LEVELS)]
    return blocks


def parameter_count(config: UNetConfig) -> int:
    """Closed-form number of trainable scalars."""
    total, prev = 0, config.in_channels
    for level in range(ENCODER_LEVELS):
        c = config.width(level)
        total += 9 * prev * c + c + 9 * c * c + c
        prev = c
    for level in reversed(range(DECODER_LEVELS)):
        c = config.width(level)
        total += 4 * (2 * c) * c  # transposed conv, no bias
        total += 9 * (2 * c) * c + c + 9 * c * c + c
    total += config.width(0) * config.out_channels + config.out_channels
    return total + 2 * config.arelu_count


class Model:
    """Parameters plus the forward pass.

    ``params`` is an insertion-ordered dict of uniquely named float64 leaf
    tensors; the order is fixed by the config.
    """

    def __init__(self, config: UNetConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.scales = weight_scales(config)
        self.epoch = 0
        self.best_val_loss = math.inf

    def __call__(self, image: Tensor) -> Tensor:
        return forward(self, image)

    def arelu_params(self) -> list[nn.AReLUParams]:
        return [
            nn.AReLUParams(self.params[f"dec{d + 1}.alpha"], self.params[f"dec{d + 1}.beta"])
            for d in range(self.config.arelu_count)
        ]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if list(state) != list(self.params):
            raise ShapeError("state dict names do not match the model parameters")
        for name, arr in state.items():
            if arr.shape != self.params[name].shape:
                raise ShapeError(f"{name}: shape {arr.shape} != {self.params[name].shape}")
            self.params[name].data = np.array(arr, dtype=DTYPE)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())


def activation_gain2(config: UNetConfig, activation: str) -> float:
    """Squared Kaiming gain keeping the second moment through ``activation``.

    ReLU gives 2.  AReLU at its initial values, slope ``a`` below zero and gain
    ``g`` above, gives ``2 / (a^2 + g^2)``.  Linear layers use 1.
    """
    if activation == "relu":
        return 2.0
    if activation == "linear":
        return 1.0
    slope = min(max(config.alpha_init, nn.CLAMP_LO), nn.CLAMP_HI)
    gain = 1.0 + 1.0 / (1.0 + math.exp(-config.beta_init))
    return 2.0 / (slope * slope + gain * gain)


def _layers(config: UNetConfig):
    """(name, weight shape, fan-in, activation that follows) per weighted layer, in parameter order."""
    out = []
    prev = config.in_channels
    for level in range(ENCODER_LEVELS):
        c = config.width(level)
        out.append((f"enc{level + 1}.conv1", (c, prev, 3, 3), prev * 9, "relu"))
        out.append((f"enc{level + 1}.conv2", (c, c, 3, 3), c * 9, "relu"))
        prev = c
    for d in range(DECODER_LEVELS):
        c = config.width(DECODER_LEVELS - 1 - d)
        act = config.decoder_activation(d)
        # each output pixel of a stride-2 2x2 transposed conv sees c_in inputs
        out.append((f"dec{d + 1}.up", (2 * c, c, 2, 2), 2 * c, "linear"))
        out.append((f"dec{d + 1}.conv1", (c, 2 * c, 3, 3), 2 * c * 9, act))
        out.append((f"dec{d + 1}.conv2", (c, c, 3, 3), c * 9, act))
    out.append(("head", (config.out_channels, config.width(0), 1, 1), config.width(0), "linear"))
    return out


def weight_scales(config: UNetConfig) -> dict[str, float]:
    """Runtime multiplier of every stored weight tensor.

    Weights are stored as ``U(-1, 1)`` draws and multiplied by the He-uniform
    bound ``sqrt(3 * gain^2 / fan_in)`` in the forward pass, so an Adam step of
    a given size changes every layer by a comparable relative amount.
    """
    return {
        f"{name}.weight": math.sqrt(3.0 * activation_gain2(config, act) / fan_in)
        for name, _, fan_in, act in _layers(config)
    }


def build(config: UNetConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def add(name: str, arr: np.ndarray) -> None:
        params[name] = Tensor(arr, requires_grad=True, name=name)

    for name, shape, _, _ in _layers(config):
        add(f"{name}.weight", rng.uniform(-1.0, 1.0, size=shape))
        if not name.endswith(".up"):
            add(f"{name}.bias", np.zeros(shape[0]))
        block = name.split(".")[0]
        if name.endswith(".conv2") and block.startswith("dec"):
            if config.decoder_activation(int(block[3:]) - 1) == "arelu":
                add(f"{block}.alpha", np.asarray(config.alpha_init))
                add(f"{block}.beta", np.asarray(config.beta_init))
    return Model(config, params)


def forward(model: Model, image: Tensor, features: dict[str, Tensor] | None = None) -> Tensor:
    """Per-pixel foreground probability, same spatial size as ``image``.

    If ``features`` is given it receives each block's output keyed by block
    name (``enc1`` .. ``enc6``, ``dec1`` .. ``dec5``).
    """
    cfg, p = model.config, model.params
    scales = model.scales

    def weight(name: str) -> Tensor:
        return mul(p[name], scales[name])

    if image.ndim != 3 or image.shape[0] != cfg.in_channels:
        raise ShapeError(f"expected a [{cfg.in_channels}, H, W] image, got {image.shape}")
    _, h, w = image.shape
    if h % DIVISOR or w % DIVISOR:
        raise ShapeError(f"image dims {h}x{w} must be divisible by {DIVISOR}")

    def double_conv(x: Tensor, block: str, act) -> Tensor:
        x = act(nn.conv2d(x, weight(f"{block}.conv1.weight"), p[f"{block}.conv1.bias"]))
        return act(nn.conv2d(x, weight(f"{block}.conv2.weight"), p[f"{block}.conv2.bias"]))

    skips: list[Tensor] = []
    x = image
    for level in range(ENCODER_LEVELS):
        if level:
            x = nn.maxpool2d(x)
        x = double_conv(x, f"enc{level + 1}", nn.relu)
        if features is not None:
            features[f"enc{level + 1}"] = x
        skips.append(x)
    skips.pop()  # bottleneck output feeds the decoder directly

    for d in range(DECODER_LEVELS):
        block = f"dec{d + 1}"
        if cfg.decoder_activation(d) == "arelu":
            ap = nn.AReLUParams(p[f"{block}.alpha"], p[f"{block}.beta"])

            def act(t, ap=ap):
                return nn.arelu(t, ap)
        else:
            act = nn.relu
        x = nn.conv_transpose2d(x, weight(f"{block}.up.weight"))
        x = nn.concat_channels(x, skips.pop())
        x = double_conv(x, block, act)
        if features is not None:
            features[block] = x

    logits = nn.conv2d(x, weight("head.weight"), p["head.bias"])
    return sigmoid(logits)


# ---------------------------------------------------------------------------
# checkpoint file
# ---------------------------------------------------------------------------
#
# little-endian throughout:
#   "SWUN" | u16 version
#   config: u16 in_ch | u16 out_ch | u32 base_width | u16 encoder_levels |
#           u16 arelu_count | f64 alpha_init | f64 beta_init
#   u32 epoch | f64 best_val_loss | u32 n_params
#   per parameter: u16 name_len | name (utf-8) | u8 rank | u32 dims[rank] |
#                  f32 values[prod(dims)]

_CONFIG = struct.Struct("<HHIHHdd")
_TRAILER = struct.Struct("<IdI")


def save_checkpoint(model: Model, path: str | Path) -> None:
    cfg = model.config
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<H", CHECKPOINT_VERSION),
        _CONFIG.pack(cfg.in_channels, cfg.out_channels, cfg.base_width, ENCODER_LEVELS,
                     cfg.arelu_count, cfg.alpha_init, cfg.beta_init),
        _TRAILER.pack(model.epoch, model.best_val_loss, len(model.params)),
    ]
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{t.ndim}I", t.ndim, *t.shape))
        chunks.append(t.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str | struct.Struct):
        s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def read_checkpoint_config(path: str | Path) -> UNetConfig:
    """Config stored in a checkpoint header."""
    r = _Reader(Path(path).read_bytes())
    _read_header(r)
    in_ch, out_ch, width, levels, k, a0, b0 = r.unpack(_CONFIG)
    if levels != ENCODER_LEVELS:
        raise CheckpointError(f"checkpoint has {levels} encoder levels, expected {ENCODER_LEVELS}")
    return UNetConfig(in_ch, out_ch, width, k, a0, b0)


def _read_header(r: _Reader) -> None:
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")


def load_checkpoint(path: str | Path, config: UNetConfig | None = None) -> Model:
    """Load a checkpoint; when ``config`` is given it must equal the stored one."""
    r = _Reader(Path(path).read_bytes())
    _read_header(r)
    in_ch, out_ch, width, levels, k, a0, b0 = r.unpack(_CONFIG)
    if levels != ENCODER_LEVELS:
        raise CheckpointError(f"checkpoint has {levels} encoder levels, expected {ENCODER_LEVELS}")
    stored = UNetConfig(in_ch, out_ch, width, k, a0, b0)
    if config is not None and config != stored:
        raise CheckpointError(f"config mismatch: file has {asdict(stored)}, requested {asdict(config)}")
    epoch, best, n_params = r.unpack(_TRAILER)
    template = build(stored, seed=0)
    if n_params != len(template.params):
        raise CheckpointError(f"checkpoint has {n_params} parameters, config implies {len(template.params)}")
    params: dict[str, Tensor] = {}
    for expected_name, ref in template.params.items():
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        if name != expected_name:
            raise CheckpointError(f"unexpected parameter {name!r}, expected {expected_name!r}")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        if tuple(dims) != ref.shape:
            raise CheckpointError(f"{name}: shape {tuple(dims)} does not match {ref.shape}")
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(r.take(4 * count), dtype="<f4").astype(DTYPE).reshape(dims)
        params[name] = Tensor(values, requires_grad=True, name=name)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after the last parameter")
    model = Model(stored, params)
    model.epoch = epoch
    model.best_val_loss = best
    return model
