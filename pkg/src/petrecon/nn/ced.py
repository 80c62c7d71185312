"""Convolutional encoder-decoder mapping precorrected sinograms to images."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .functional import ShapeError, conv_out_size
from .layers import BatchNorm2d, Conv2d, ReLU, Upsample


@dataclass(frozen=True)
class CedSpec:
    """Architecture description.

    Encoder: ``stem_convs`` stride-1 convs (1 -> base_features), then
    ``n_downsample`` blocks of one stride-2 conv doubling the width plus
    ``convs_per_block - 1`` stride-1 convs. Decoder: ``decoder_steps`` steps of
    bilinear upsampling, a conv halving the width and ``convs_per_decoder_block - 1``
    more convs. Every conv is followed by batch norm and ReLU, except the final
    3x3 output conv (with bias) which is followed by ReLU only.
    """

    name: str = "custom"
    n_downsample: int = 4
    convs_per_block: int = 3
    stem_convs: int = 2
    base_features: int = 64
    decoder_steps: int = 4
    convs_per_decoder_block: int = 4
    optimizer: str = "sgd"
    upsample: str = "bilinear"
    output_size: int = 128
    bn_momentum: float = 0.2

    def __post_init__(self):
        if self.stem_convs < 1 or self.convs_per_block < 1 or self.convs_per_decoder_block < 1:
            raise ShapeError("every stage needs at least one convolution")
        if self.n_downsample < 1 or self.decoder_steps < 1:
            raise ShapeError("need at least one downsampling block and one decoder step")
        if self.bottleneck_features % (2**self.decoder_steps):
            raise ShapeError("decoder cannot halve the bottleneck width that many times")
        if self.optimizer not in ("sgd", "adam"):
            raise ShapeError(f"unknown optimizer {self.optimizer!r}")
        if self.upsample != "bilinear":
            raise ShapeError("only bilinear upsampling is supported")

    @property
    def bottleneck_features(self) -> int:
        return self.base_features * 2**self.n_downsample

    @property
    def conv_count(self) -> int:
        return (self.stem_convs + self.n_downsample * self.convs_per_block
                + self.decoder_steps * self.convs_per_decoder_block + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CedSpec":
        return cls(**d)


PRESETS = {
    "deeppet": CedSpec("deeppet", 4, 3, 2, 64, 4, 4, "sgd"),
    "m1": CedSpec("m1", 4, 2, 1, 16, 4, 4, "sgd"),
    "m2": CedSpec("m2", 4, 3, 4, 16, 4, 3, "sgd"),
    "m3": CedSpec("m3", 4, 3, 2, 32, 4, 4, "sgd"),
    "m4": CedSpec("m4", 4, 3, 2, 32, 4, 4, "adam"),
    "m5": CedSpec("m5", 4, 3, 2, 64, 4, 4, "adam"),
    "m6": CedSpec("m6", 4, 4, 3, 32, 4, 4, "sgd"),
    "m7": CedSpec("m7", 4, 4, 3, 128, 4, 4, "sgd"),
    "toy": CedSpec("toy", 3, 4, 1, 16, 3, 2, "sgd", output_size=64),
}


def ced_preset(name: str) -> CedSpec:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ShapeError(f"unknown architecture preset {name!r}") from None


def upsample_schedule(start: int, end: int, steps: int) -> list[int]:
    """Sizes after each decoder step: ``round(start * (end/start)^(k/steps))``, ending at ``end``."""
    return [int(math.floor(start * (end / start) ** (k / steps) + 0.5)) for k in range(1, steps + 1)]


def encoder_schedule(h: int, w: int, n_downsample: int) -> list[tuple[int, int]]:
    sizes = []
    for _ in range(n_downsample):
        h, w = conv_out_size(h, 2), conv_out_size(w, 2)
        sizes.append((h, w))
    return sizes


def ced_shapes(spec: CedSpec, input_hw: tuple[int, int]) -> dict:
    """Spatial bookkeeping of the network for a given input size, without building it."""
    enc = encoder_schedule(*input_hw, spec.n_downsample)
    bh, bw = enc[-1]
    if bh > spec.output_size or bw > spec.output_size:
        raise ShapeError(f"bottleneck {bh}x{bw} larger than output {spec.output_size}")
    dec = list(zip(upsample_schedule(bh, spec.output_size, spec.decoder_steps),
                   upsample_schedule(bw, spec.output_size, spec.decoder_steps)))
    return {
        "encoder": enc,
        "bottleneck": (spec.bottleneck_features, bh, bw),
        "decoder": dec,
        "output": (1, spec.output_size, spec.output_size),
    }


class CedModel:
    def __init__(self, spec: CedSpec, input_hw: tuple[int, int], seed: int = 0,
                 dtype=np.float32):
        self.spec = spec
        self.input_hw = tuple(int(v) for v in input_hw)
        self.seed = seed
        self.shapes = ced_shapes(spec, self.input_hw)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCED]))
        layers = []
        count = [0]

        def conv_bn_relu(cin, cout, stride):
            name = f"conv{count[0]:02d}"
            count[0] += 1
            layers.extend([
                Conv2d(name, cin, cout, stride, bias=False, rng=rng, dtype=dtype),
                BatchNorm2d(f"{name}.bn", cout, spec.bn_momentum, dtype),
                ReLU(),
            ])

        width = spec.base_features
        conv_bn_relu(1, width, 1)
        for _ in range(spec.stem_convs - 1):
            conv_bn_relu(width, width, 1)
        for _ in range(spec.n_downsample):
            conv_bn_relu(width, 2 * width, 2)
            width *= 2
            for _ in range(spec.convs_per_block - 1):
                conv_bn_relu(width, width, 1)
        self.bottleneck_index = len(layers)
        for h, w in self.shapes["decoder"]:
            layers.append(Upsample(h, w))
            conv_bn_relu(width, width // 2, 1)
            width //= 2
            for _ in range(spec.convs_per_decoder_block - 1):
                conv_bn_relu(width, width, 1)
        layers.append(Conv2d(f"conv{count[0]:02d}", width, 1, 1, bias=True, rng=rng, dtype=dtype))
        layers.append(ReLU())
        self.layers = layers
        self.dtype = dtype
        self.bottleneck_shape = None

    @property
    def conv_layers(self) -> list[Conv2d]:
        return [layer for layer in self.layers if isinstance(layer, Conv2d)]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Ordered (name, array) pairs of all parameters and running statistics."""
        items = [(p.name, p.value) for p in self.parameters()]
        items += sorted(self.buffers().items())
        return items

    def load_state(self, state) -> None:
        current = dict(self.state())
        for name, arr in state:
            if name not in current or current[name].shape != tuple(arr.shape):
                raise ShapeError(f"state entry {name} does not fit this model")
            current[name][...] = arr

    def copy_state(self):
        return [(name, arr.copy()) for name, arr in self.state()]

    def output_shape(self, input_shape) -> tuple:
        """Per-sample ``(C, H, W)`` output shape for a ``(1, H, W)`` input."""
        c, h, w = input_shape
        shape = (h, w, c)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return (shape[2], shape[0], shape[1])

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != self.input_hw:
            raise ShapeError(f"expected input (N, 1, {self.input_hw[0]}, {self.input_hw[1]}), got {x.shape}")
        # single channel: NCHW and NHWC differ only by a reshape
        n, _, h, w = x.shape
        x = x.reshape(n, h, w, 1)
        for i, layer in enumerate(self.layers):
            if i == self.bottleneck_index:
                self.bottleneck_shape = (x.shape[3], x.shape[1], x.shape[2])
            x = layer.forward(x, train)
        return x.reshape(n, 1, x.shape[1], x.shape[2])

    def backward(self, dy):
        n, _, h, w = dy.shape
        dy = dy.reshape(n, h, w, 1)
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy.reshape(n, 1, dy.shape[1], dy.shape[2])

    def zero_grad(self):
        for p in self.parameters():
            p.grad.fill(0)


def build_ced(spec: CedSpec, input_hw, seed: int = 0, dtype=np.float32) -> CedModel:
    return CedModel(spec, input_hw, seed, dtype)


def dense_weight_count(n_angles: int, n_radial: int, n_image: int) -> int:
    """Weights of a single fully connected sinogram-to-image layer."""
    return n_angles * n_radial * n_image * n_image
