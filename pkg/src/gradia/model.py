"""Small deterministic convolutional classifier with gradient access.

The network is a fixed shape family: a stack of conv+ReLU blocks (optionally
max-pooled), a penultimate layer whose K post-activation feature maps are
retained on every forward pass, and a global-average-pool + affine head.
Differentiation is delegated to torch autograd; the higher-order flag keeps
feature-map gradients differentiable so losses built on them can be
back-propagated into the parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, InputError

# torch autograd supports building graphs through gradient computations,
# which is what the attention-loss training path needs.
HIGHER_ORDER_SUPPORTED = True

_PARAMS_MAGIC = b"GDIAP001"


@dataclass(frozen=True)
class ConvSpec:
    """One conv block: conv(out_maps, kernel, stride, padding) + ReLU + optional pool."""

    out_maps: int
    kernel: int
    stride: int = 1
    padding: int = 0
    pool: str = "none"  # "none" | "max2"


DEFAULT_CONV_STACK = (
    ConvSpec(8, 3, 1, 1, "max2"),
    ConvSpec(16, 3, 1, 1, "max2"),
    ConvSpec(32, 3, 1, 1, "none"),
)


def _stack_geometry(config: "ModelConfig") -> list[tuple[int, int]]:
    """Grid dims after each conv block, raising on degenerate shapes."""
    dims = []
    h, w = config.input_height, config.input_width
    for i, spec in enumerate(config.conv_stack):
        h = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
        w = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
        if h < 1 or w < 1:
            raise ConfigurationError(
                f"conv_stack[{i}] reduces the grid to {h}x{w}; must stay >= 1x1"
            )
        if spec.pool == "max2":
            h //= 2
            w //= 2
            if h < 1 or w < 1:
                raise ConfigurationError(f"conv_stack[{i}] pools the grid below 1x1")
        dims.append((h, w))
    return dims


@dataclass(frozen=True)
class ModelConfig:
    input_height: int = 64
    input_width: int = 64
    input_channels: int = 1
    conv_stack: tuple[ConvSpec, ...] = DEFAULT_CONV_STACK
    num_classes: int = 2
    dtype: str = "float64"  # acceptance paths run in double precision

    @property
    def feature_maps_k(self) -> int:
        return self.conv_stack[-1].out_maps

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.input_height < 1 or self.input_width < 1 or self.input_channels < 1:
            raise ConfigurationError("input dimensions must be positive")
        if not self.conv_stack:
            raise ConfigurationError("conv_stack must not be empty")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"unsupported dtype {self.dtype!r}")
        for i, spec in enumerate(self.conv_stack):
            if spec.out_maps < 1 or spec.kernel < 1 or spec.stride < 1 or spec.padding < 0:
                raise ConfigurationError(f"conv_stack[{i}] has a degenerate field")
            if spec.pool not in ("none", "max2"):
                raise ConfigurationError(f"conv_stack[{i}] unknown pool {spec.pool!r}")
        _stack_geometry(self)

    def feature_grid(self) -> tuple[int, int]:
        """(u, v) dims of the penultimate feature maps."""
        self.validate()
        return _stack_geometry(self)[-1]


@dataclass(frozen=True)
class Parameters:
    """All trainable arrays, immutable; initialization is a pure function of (config, seed)."""

    config: ModelConfig
    conv_weights: tuple[torch.Tensor, ...]
    conv_biases: tuple[torch.Tensor, ...]
    head_weight: torch.Tensor  # (num_classes, K)
    head_bias: torch.Tensor  # (num_classes,)
    rng_seed: int

    def tensors(self) -> list[torch.Tensor]:
        """Fixed-order list of every parameter tensor."""
        out: list[torch.Tensor] = []
        for w, b in zip(self.conv_weights, self.conv_biases):
            out.extend((w, b))
        out.extend((self.head_weight, self.head_bias))
        return out

    def with_tensors(self, tensors: list[torch.Tensor]) -> "Parameters":
        """Rebuild Parameters from an updated fixed-order tensor list."""
        n = len(self.conv_weights)
        if len(tensors) != 2 * n + 2:
            raise InputError("tensor list length does not match the layer layout")
        return Parameters(
            config=self.config,
            conv_weights=tuple(tensors[2 * i] for i in range(n)),
            conv_biases=tuple(tensors[2 * i + 1] for i in range(n)),
            head_weight=tensors[2 * n],
            head_bias=tensors[2 * n + 1],
            rng_seed=self.rng_seed,
        )


@dataclass
class ForwardTrace:
    """One forward pass: logits plus the retained penultimate feature maps."""

    logits: torch.Tensor  # (num_classes,)
    feature_maps: torch.Tensor  # (K, u, v), post-activation, graph retained
    input_ref: str | None = None


@dataclass
class BatchTrace:
    """Vectorized counterpart of ForwardTrace used on training paths."""

    logits: torch.Tensor  # (B, num_classes)
    feature_maps: torch.Tensor  # (B, K, u, v)


def init_model(config: ModelConfig, seed: int) -> Parameters:
    """Deterministic init: every array uniform in [-b, b], b = 1/sqrt(fan_in)."""
    config.validate()
    gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    dtype = config.torch_dtype

    def uniform(shape, fan_in):
        bound = 1.0 / float(np.sqrt(fan_in))
        t = torch.empty(*shape, dtype=dtype)
        t.uniform_(-bound, bound, generator=gen)
        return t.requires_grad_(True)

    weights, biases = [], []
    in_ch = config.input_channels
    for spec in config.conv_stack:
        fan_in = in_ch * spec.kernel * spec.kernel
        weights.append(uniform((spec.out_maps, in_ch, spec.kernel, spec.kernel), fan_in))
        biases.append(uniform((spec.out_maps,), fan_in))
        in_ch = spec.out_maps
    k = config.feature_maps_k
    head_w = uniform((config.num_classes, k), k)
    head_b = uniform((config.num_classes,), k)
    return Parameters(
        config=config,
        conv_weights=tuple(weights),
        conv_biases=tuple(biases),
        head_weight=head_w,
        head_bias=head_b,
        rng_seed=int(seed),
    )


def _as_batch_tensor(config: ModelConfig, images) -> torch.Tensor:
    """Coerce one image or a batch to a (B, C, H, W) tensor of the model dtype."""
    if isinstance(images, torch.Tensor):
        x = images.to(config.torch_dtype)
    else:
        x = torch.as_tensor(np.asarray(images), dtype=config.torch_dtype)
    if x.dim() == 2:
        x = x.unsqueeze(0).unsqueeze(0)
    elif x.dim() == 3:
        # (C, H, W) for a single image, or (B, H, W) for single-channel batches
        if x.shape[0] == config.input_channels and x.shape[1] == config.input_height:
            x = x.unsqueeze(0)
        else:
            x = x.unsqueeze(1)
    elif x.dim() != 4:
        raise InputError(f"image tensor has unsupported rank {x.dim()}")
    if x.shape[1:] != (config.input_channels, config.input_height, config.input_width):
        raise InputError(
            f"image shape {tuple(x.shape[1:])} does not match config "
            f"({config.input_channels}, {config.input_height}, {config.input_width})"
        )
    return x


def head_logits(params: Parameters, feature_maps: torch.Tensor) -> torch.Tensor:
    """Global-average-pool + affine head applied to (K,u,v) or (B,K,u,v) maps."""
    squeeze = feature_maps.dim() == 3
    a = feature_maps.unsqueeze(0) if squeeze else feature_maps
    gap = a.mean(dim=(2, 3))
    logits = gap @ params.head_weight.T + params.head_bias
    return logits[0] if squeeze else logits


def forward_batch(params: Parameters, images) -> BatchTrace:
    """Forward a batch, retaining the penultimate feature maps in the graph."""
    config = params.config
    x = _as_batch_tensor(config, images)
    h = x
    for spec, w, b in zip(config.conv_stack, params.conv_weights, params.conv_biases):
        h = F.relu(F.conv2d(h, w, b, stride=spec.stride, padding=spec.padding))
        if spec.pool == "max2":
            h = F.max_pool2d(h, kernel_size=2)
    return BatchTrace(logits=head_logits(params, h), feature_maps=h)


def forward(params: Parameters, image, input_ref: str | None = None) -> ForwardTrace:
    """Forward one image; pure function of (params, image)."""
    batch = forward_batch(params, image)
    if batch.logits.shape[0] != 1:
        raise InputError("forward expects a single image; use forward_batch for batches")
    # recompute the head from the sliced maps so the retained tensor is the
    # one the logits actually depend on (differentiation targets it)
    maps = batch.feature_maps[0]
    logits = head_logits(params, maps)
    if not bool(torch.isfinite(logits).all()):
        raise InputError("forward produced non-finite logits")
    return ForwardTrace(logits=logits, feature_maps=maps, input_ref=input_ref)


def softmax_probabilities(logits) -> np.ndarray:
    """Numerically stable softmax as a float64 numpy vector."""
    z = np.asarray(
        logits.detach().cpu().numpy() if isinstance(logits, torch.Tensor) else logits,
        dtype=np.float64,
    )
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def predict(params: Parameters, image) -> tuple[int, np.ndarray]:
    """(argmax class with lowest-index tie-break, softmax probability vector)."""
    trace = forward(params, image)
    probs = softmax_probabilities(trace.logits)
    return int(np.argmax(probs)), probs


def grad_wrt_features(
    trace: ForwardTrace | BatchTrace, class_index, *, higher_order: bool = False
) -> torch.Tensor:
    """d(logit of class) / d(feature maps) for a retained trace.

    For a BatchTrace, ``class_index`` is a per-sample index sequence and the
    result is (B, K, u, v). With ``higher_order`` the returned tensor stays
    differentiable with respect to the parameters.
    """
    if isinstance(trace, BatchTrace):
        n = trace.logits.shape[1]
        idx = torch.as_tensor(class_index, dtype=torch.long)
        if idx.dim() != 1 or idx.shape[0] != trace.logits.shape[0]:
            raise InputError("class_index must give one class per batch sample")
        if bool((idx < 0).any()) or bool((idx >= n).any()):
            raise InputError("class_index out of range")
        selected = trace.logits[torch.arange(idx.shape[0]), idx].sum()
    else:
        n = trace.logits.shape[0]
        c = int(class_index)
        if not 0 <= c < n:
            raise InputError(f"class_index {c} out of range for {n} classes")
        selected = trace.logits[c]
    (grads,) = torch.autograd.grad(
        selected,
        trace.feature_maps,
        retain_graph=True,
        create_graph=higher_order,
    )
    return grads


def grad_wrt_params(
    scalar_loss: torch.Tensor, params: Parameters, *, create_graph: bool = False
) -> list[torch.Tensor]:
    """Gradient of a traced scalar loss for every parameter tensor.

    Parameters the loss does not reach get zero gradients rather than errors.
    """
    if scalar_loss.dim() != 0:
        raise InputError("scalar_loss must be a 0-dim tensor")
    tensors = params.tensors()
    if scalar_loss.grad_fn is None:
        # constant loss (no traced graph): gradient is zero everywhere
        return [torch.zeros_like(t) for t in tensors]
    grads = torch.autograd.grad(
        scalar_loss,
        tensors,
        retain_graph=True,
        create_graph=create_graph,
        allow_unused=True,
    )
    return [g if g is not None else torch.zeros_like(t) for g, t in zip(grads, tensors)]


def save_parameters(params: Parameters, path) -> None:
    """Flat binary archive: magic, seed, array count, shapes, row-major doubles."""
    arrays = [t.detach().cpu().numpy().astype(np.float64) for t in params.tensors()]
    with open(path, "wb") as fh:
        fh.write(_PARAMS_MAGIC)
        fh.write(struct.pack("<qI", params.rng_seed, len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_parameters(path, config: ModelConfig) -> Parameters:
    """Read a parameter archive and validate shapes against the config."""
    config.validate()
    with open(path, "rb") as fh:
        if fh.read(len(_PARAMS_MAGIC)) != _PARAMS_MAGIC:
            raise InputError(f"{path}: not a parameter archive")
        seed, count = struct.unpack("<qI", fh.read(12))
        shapes = []
        for _ in range(count):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shapes.append(struct.unpack(f"<{ndim}q", fh.read(8 * ndim)))
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise InputError(f"{path}: truncated parameter archive")
            arrays.append(np.frombuffer(buf, dtype=np.float64).reshape(shape))
    template = init_model(config, seed)
    expected = [tuple(t.shape) for t in template.tensors()]
    if expected != [tuple(s) for s in shapes]:
        raise InputError(f"{path}: archive shapes do not match the model config")
    tensors = [
        torch.as_tensor(arr.copy(), dtype=config.torch_dtype).requires_grad_(True)
        for arr in arrays
    ]
    return template.with_tensors(tensors)
