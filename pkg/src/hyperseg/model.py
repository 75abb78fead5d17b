"""Toy fully-convolutional one-class network and its SGD training rule.

Architecture: three 3x3 conv+relu stages with 2x2 max pooling after the
first two, followed by a 1x1 head emitting one pre-score per low-resolution
pixel (downsampling factor 4).  The hypersphere center is absorbed into the
head bias, which is initialized to 1.0 so the initial scores sit safely away
from the push function's singularity at 0.

Everything is float64 and fully deterministic per seed.  Channel widths and
the gradient-check variants are configurable through :class:`FcnArch`; the
default (16, 32, 64) trains one category in minutes on a single CPU core.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .ops import ConvSpec, NumericalError, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward
from .rng import Rng

__all__ = [
    "FcnArch",
    "FcnParams",
    "OptState",
    "init_params",
    "forward",
    "forward_with_acts",
    "backward_from_prescores",
    "lr_at_epoch",
    "sgd_nesterov_step",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"HSEGCKPT"
_VERSION = 1


@dataclass(frozen=True)
class FcnArch:
    in_channels: int = 3
    channels: tuple[int, int, int] = (16, 32, 64)

    @property
    def downsample(self) -> int:
        return 4  # two 2x2 pooling stages

    def conv_specs(self) -> tuple[ConvSpec, ConvSpec, ConvSpec, ConvSpec]:
        c1, c2, c3 = self.channels
        return (
            ConvSpec(self.in_channels, c1, 3, padding=1),
            ConvSpec(c1, c2, 3, padding=1),
            ConvSpec(c2, c3, 3, padding=1),
            ConvSpec(c3, 1, 1),
        )


@dataclass
class FcnParams:
    arch: FcnArch
    tensors: dict[str, np.ndarray]  # conv{1,2,3}_{w,b}, head_{w,b}

    NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b", "head_w", "head_b")

    def copy(self) -> "FcnParams":
        return FcnParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


def init_params(rng: Rng, arch: FcnArch = FcnArch(), stream_key: tuple = ()) -> FcnParams:
    """He fan-in normal weights, zero biases, head bias 1.0."""
    g = rng.stream("init", *stream_key)
    specs = arch.conv_specs()
    tensors: dict[str, np.ndarray] = {}
    for name, spec in zip(("conv1", "conv2", "conv3", "head"), specs):
        fan_in = spec.in_channels * spec.kernel_size**2
        shape = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
        tensors[f"{name}_w"] = g.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        tensors[f"{name}_b"] = np.zeros(spec.out_channels)
    tensors["head_b"][:] = 1.0
    return FcnParams(arch, tensors)


def forward_with_acts(params: FcnParams, x: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Forward pass keeping the intermediates needed by the backward pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) batch, got shape {x.shape}")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ValueError(f"spatial extents must be divisible by 4, got {x.shape[2]}x{x.shape[3]}")
    t = params.tensors
    s1, s2, s3, sh = params.arch.conv_specs()
    acts = {"x": x}
    acts["a1"] = conv2d(x, t["conv1_w"], t["conv1_b"], s1)
    acts["p1"] = maxpool2(relu(acts["a1"]))
    acts["a2"] = conv2d(acts["p1"], t["conv2_w"], t["conv2_b"], s2)
    acts["p2"] = maxpool2(relu(acts["a2"]))
    acts["a3"] = conv2d(acts["p2"], t["conv3_w"], t["conv3_b"], s3)
    acts["r3"] = relu(acts["a3"])
    scores = conv2d(acts["r3"], t["head_w"], t["head_b"], sh)
    return scores, acts


def forward(params: FcnParams, x: np.ndarray) -> np.ndarray:
    """Per-pixel pre-scores: (N, C, H, W) -> (N, 1, H/4, W/4)."""
    return forward_with_acts(params, x)[0]


def backward_from_prescores(
    params: FcnParams, acts: dict[str, np.ndarray], grad_scores: np.ndarray
) -> dict[str, np.ndarray]:
    """Backpropagate d(loss)/d(pre-scores) into gradients for every parameter."""
    t = params.tensors
    s1, s2, s3, sh = params.arch.conv_specs()
    grads: dict[str, np.ndarray] = {}

    g, grads["head_w"], grads["head_b"] = conv2d_backward(grad_scores, acts["r3"], t["head_w"], sh)
    g = relu_backward(g, acts["a3"])
    g, grads["conv3_w"], grads["conv3_b"] = conv2d_backward(g, acts["p2"], t["conv3_w"], s3)
    g = maxpool2_backward(g, relu(acts["a2"]))
    g = relu_backward(g, acts["a2"])
    g, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(g, acts["p1"], t["conv2_w"], s2)
    g = maxpool2_backward(g, relu(acts["a1"]))
    g = relu_backward(g, acts["a1"])
    _, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(g, acts["x"], t["conv1_w"], s1)
    return grads


@dataclass
class OptState:
    velocity: dict[str, np.ndarray]
    epoch: int = 0
    base_lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay: float = 0.985

    @classmethod
    def for_params(cls, params: FcnParams, **kwargs) -> "OptState":
        return cls(velocity={k: np.zeros_like(v) for k, v in params.tensors.items()}, **kwargs)

    @property
    def lr(self) -> float:
        return lr_at_epoch(self.epoch, self.base_lr, self.decay)

    def next_epoch(self) -> "OptState":
        return replace(self, epoch=self.epoch + 1)


def lr_at_epoch(epoch: int, base_lr: float = 1e-3, decay: float = 0.985) -> float:
    """Learning rate after ``epoch`` decay steps of 1.5% each."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * decay**epoch


def sgd_nesterov_step(
    params: FcnParams, grads: dict[str, np.ndarray], opt: OptState
) -> tuple[FcnParams, OptState]:
    """One Nesterov-momentum SGD step with decoupled-from-nothing L2 weight decay.

    g = grad + wd * param;  v = mu * v + g;  param -= lr * (g + mu * v)
    """
    new_tensors, new_vel = {}, {}
    lr, mu, wd = opt.lr, opt.momentum, opt.weight_decay
    for name, p in params.tensors.items():
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        g = grad + wd * p
        v = mu * opt.velocity[name] + g
        new_tensors[name] = p - lr * (g + mu * v)
        new_vel[name] = v
    return FcnParams(params.arch, new_tensors), replace(opt, velocity=new_vel)


def save_checkpoint(path: str, params: FcnParams) -> None:
    """Little-endian binary: magic, version u32, tensor count u32, then per
    tensor a u16 name length + name, u8 ndim, u32 dims, and raw float64 data."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(params.tensors)))
        for name in FcnParams.NAMES:
            arr = np.ascontiguousarray(params.tensors[name], dtype=np.float64)
            nb = name.encode("ascii")
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str) -> FcnParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path!r} is not a checkpoint file (bad magic)")
    off = len(_MAGIC)
    version, count = struct.unpack_from("<II", data, off)
    off += 8
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("ascii")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    missing = set(FcnParams.NAMES) - set(tensors)
    if missing:
        raise ValueError(f"checkpoint missing tensors: {sorted(missing)}")
    arch = FcnArch(
        in_channels=tensors["conv1_w"].shape[1],
        channels=(tensors["conv1_w"].shape[0], tensors["conv2_w"].shape[0], tensors["conv3_w"].shape[0]),
    )
    params = FcnParams(arch, {n: tensors[n] for n in FcnParams.NAMES})
    _check_shapes(params)
    return params


def _check_shapes(params: FcnParams) -> None:
    specs = params.arch.conv_specs()
    for name, spec in zip(("conv1", "conv2", "conv3", "head"), specs):
        w = params.tensors[f"{name}_w"]
        b = params.tensors[f"{name}_b"]
        want = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
        if w.shape != want or b.shape != (spec.out_channels,):
            raise ValueError(f"checkpoint tensor {name} has shape {w.shape}, expected {want}")
