"""
Layer primitives and network constructors.

Layers run on batched feature maps ``[N, C, H, W]`` (or ``[N, features]`` for
dense layers); per-image tensors ``[C, H, W]`` are accepted by the primitives
and by ``forward`` and handled as a batch of one.

Architectures follow the d/f/m naming rule: an encoder with depth d, base
filter count f and measurement width m has n·f filters in its n-th conv layer
(GE1) or ceil(n/3)·f (GE0, the discriminator's encoding half).
"""

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ml.exceptions import ContractError, ShapeError
from ml.tensor import Tensor, elu, emit, reshape, sigmoid, tanh

LAYER_KINDS = ("conv", "conv_transpose", "upsample_nearest", "avgpool", "dense", "activation", "reshape")
ACTIVATIONS = ("elu", "tanh", "sigmoid", "none")
NETWORK_LABELS = ("GE0", "GE1", "generator", "decoder", "discriminator")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _as_batch(x: Tensor, spatial_dims: int = 3) -> Tuple[np.ndarray, bool]:
    if x.ndim == spatial_dims:
        return x.data[None], True
    if x.ndim == spatial_dims + 1:
        return x.data, False
    raise ShapeError(f"expected a [C,H,W] or [N,C,H,W] tensor, got shape {x.shape}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0:
        raise ShapeError(f"kernel {kernel} does not fit input {size} with padding {padding}")
    if span % stride:
        raise ShapeError(
            f"non-integral output size: ({size} + 2*{padding} - {kernel}) / {stride} + 1"
        )
    return span // stride + 1


def _check_kernel(kernels: Tensor, in_channels: int, axis: int) -> int:
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"kernels must be [F, C, k, k], got {kernels.shape}")
    k = kernels.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if kernels.shape[axis] != in_channels:
        raise ShapeError(f"kernel expects {kernels.shape[axis]} input channels, input has {in_channels}")
    return k


def _scatter_windows(contrib: np.ndarray, full_shape, k: int, stride: int, rows: int, cols: int) -> np.ndarray:
    """Sum window contributions [N, rows, cols, C, k, k] back onto a [N, C, H, W] grid."""
    full = np.zeros(full_shape)
    for i in range(k):
        for j in range(k):
            full[:, :, i:i + stride * (rows - 1) + 1:stride, j:j + stride * (cols - 1) + 1:stride] += (
                contrib[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return full


def _windows(padded: np.ndarray, k: int, stride: int, rows: int, cols: int) -> np.ndarray:
    win = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return win[:, :, :rows, :cols]


def conv2d(input: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) with zero padding; kernels are [F, C, k, k]."""
    X, unbatched = _as_batch(input)
    N, C, H, W = X.shape
    k = _check_kernel(kernels, C, axis=1)
    F = kernels.shape[0]
    if bias.shape != (F,):
        raise ShapeError(f"bias must have shape ({F},), got {bias.shape}")
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)

    Xp = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(Xp, k, stride, Ho, Wo)
    K = kernels.data
    out = np.tensordot(win, K, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias.data[None, :, None, None]

    def _backward(g, needs):
        G = g[None] if unbatched else g
        dX = dK = db = None
        if needs[0]:
            contrib = np.tensordot(G, K, axes=([1], [0]))
            dXp = _scatter_windows(contrib, Xp.shape, k, stride, Ho, Wo)
            dX = dXp[:, :, padding:padding + H, padding:padding + W]
            dX = dX[0] if unbatched else dX
        if needs[1]:
            dK = np.tensordot(G, win, axes=([0, 2, 3], [0, 2, 3]))
        if needs[2]:
            db = G.sum(axis=(0, 2, 3))
        return dX, dK, db

    return emit(out[0] if unbatched else out, (input, kernels, bias), _backward, "conv2d")


def conv2d_transpose(input: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Adjoint of conv2d's linear map plus bias; kernels are [in, out, k, k] (the same K as conv2d)."""
    V, unbatched = _as_batch(input)
    N, Fin, Hin, Win = V.shape
    k = _check_kernel(kernels, Fin, axis=0)
    C = kernels.shape[1]
    if bias.shape != (C,):
        raise ShapeError(f"bias must have shape ({C},), got {bias.shape}")
    if not 0 <= output_padding < stride:
        raise ShapeError(f"output_padding must be in [0, {stride}), got {output_padding}")
    H = (Hin - 1) * stride + k - 2 * padding + output_padding
    W = (Win - 1) * stride + k - 2 * padding + output_padding
    if H < 1 or W < 1:
        raise ShapeError(f"transposed convolution yields empty output {H}x{W}")
    full_shape = (N, C, (Hin - 1) * stride + k + output_padding, (Win - 1) * stride + k + output_padding)

    K = kernels.data
    contrib = np.tensordot(V, K, axes=([1], [0]))
    full = _scatter_windows(contrib, full_shape, k, stride, Hin, Win)
    out = full[:, :, padding:padding + H, padding:padding + W] + bias.data[None, :, None, None]

    def _backward(g, needs):
        G = g[None] if unbatched else g
        Gp = np.zeros(full_shape)
        Gp[:, :, padding:padding + H, padding:padding + W] = G
        win = _windows(Gp, k, stride, Hin, Win)
        dV = dK = db = None
        if needs[0]:
            dV = np.tensordot(win, K, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
            dV = dV[0] if unbatched else dV
        if needs[1]:
            dK = np.tensordot(V, win, axes=([0, 2, 3], [0, 2, 3]))
        if needs[2]:
            db = G.sum(axis=(0, 2, 3))
        return dV, dK, db

    return emit(out[0] if unbatched else out, (input, kernels, bias), _backward, "conv2d_transpose")


def upsample_nearest(input: Tensor, factor: int) -> Tensor:
    if factor < 2:
        raise ShapeError(f"upsampling factor must be >= 2, got {factor}")
    if input.ndim < 2:
        raise ShapeError(f"upsample_nearest needs a spatial tensor, got {input.shape}")
    x = input.data
    out = np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)
    lead, H, W = x.shape[:-2], x.shape[-2], x.shape[-1]

    def _backward(g, needs):
        return (g.reshape(*lead, H, factor, W, factor).sum(axis=(-3, -1)),)

    return emit(out, (input,), _backward, "upsample_nearest")


def avgpool(input: Tensor, factor: int) -> Tensor:
    if factor < 2:
        raise ShapeError(f"pooling factor must be >= 2, got {factor}")
    if input.ndim < 2:
        raise ShapeError(f"avgpool needs a spatial tensor, got {input.shape}")
    x = input.data
    lead, H, W = x.shape[:-2], x.shape[-2], x.shape[-1]
    if H % factor or W % factor:
        raise ShapeError(f"avgpool: {H}x{W} is not divisible by {factor}")
    out = x.reshape(*lead, H // factor, factor, W // factor, factor).mean(axis=(-3, -1))

    def _backward(g, needs):
        spread = np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1)
        return (spread / (factor * factor),)

    return emit(out, (input,), _backward, "avgpool")


def dense(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ W + b for x [N, in] (or [in]), W [in, out], b [out]."""
    x = input.data
    unbatched = x.ndim == 1
    X = x[None] if unbatched else x
    if X.ndim != 2 or weight.ndim != 2 or X.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {input.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    Wt = weight.data
    out = X @ Wt + bias.data[None, :]

    def _backward(g, needs):
        G = g[None] if unbatched else g
        dX = G @ Wt.T if needs[0] else None
        if dX is not None and unbatched:
            dX = dX[0]
        return dX, (X.T @ G if needs[1] else None), (G.sum(axis=0) if needs[2] else None)

    return emit(out[0] if unbatched else out, (input, weight, bias), _backward, "dense")


_ACTIVATION_FNS = {"elu": elu, "tanh": tanh, "sigmoid": sigmoid}


def activate(x: Tensor, activation: str) -> Tensor:
    if activation == "none":
        return x
    try:
        return _ACTIVATION_FNS[activation](x)
    except KeyError:
        raise ContractError(f"unknown activation '{activation}'") from None


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: Optional[int] = None
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    filters: Optional[int] = None
    factor: Optional[int] = None
    in_features: Optional[int] = None
    out_features: Optional[int] = None
    shape: Optional[Tuple[int, ...]] = None
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ContractError(f"unknown layer kind '{self.kind}'")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation '{self.activation}'")
        if self.kind in ("conv", "conv_transpose"):
            if not self.kernel or self.kernel % 2 == 0 or not self.filters or self.stride < 1:
                raise ContractError(f"{self.kind} layer needs an odd kernel, filters and stride >= 1")
        elif self.kind == "dense":
            if not self.in_features or not self.out_features:
                raise ContractError("dense layer needs in_features and out_features")
        elif self.kind in ("upsample_nearest", "avgpool"):
            if not self.factor or self.factor < 2:
                raise ContractError(f"{self.kind} layer needs an integer factor >= 2")
        elif self.kind == "reshape" and not self.shape:
            raise ContractError("reshape layer needs a target shape")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        if "shape" in d:
            d["shape"] = tuple(d["shape"])
        return cls(**d)


@dataclass(frozen=True)
class ParamInfo:
    name: str
    shape: Tuple[int, ...]
    fan_in: int
    fan_out: int
    is_bias: bool


@dataclass(frozen=True)
class NetworkSpec:
    layers: Tuple[LayerSpec, ...]
    input_shape: Tuple[int, ...]
    output_shape: Tuple[int, ...]
    label: str
    encoder_layers: Optional[int] = None
    meta: Dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.label not in NETWORK_LABELS:
            raise ContractError(f"unknown network label '{self.label}'")

    def layer_shapes(self) -> List[Tuple[int, ...]]:
        """Per-sample shape after every layer; raises ShapeError on any inconsistency."""
        shapes = []
        shape = tuple(self.input_shape)
        for idx, layer in enumerate(self.layers):
            shape = _layer_output_shape(layer, shape, idx)
            shapes.append(shape)
        if shape != tuple(self.output_shape):
            raise ShapeError(f"{self.label}: layers produce {shape}, spec declares {tuple(self.output_shape)}")
        return shapes

    def params(self) -> List[ParamInfo]:
        infos = []
        shape = tuple(self.input_shape)
        for idx, layer in enumerate(self.layers):
            out = _layer_output_shape(layer, shape, idx)
            prefix = f"layer{idx}"
            if layer.kind == "conv":
                k = layer.kernel
                infos.append(ParamInfo(f"{prefix}.weight", (layer.filters, shape[0], k, k),
                                       shape[0] * k * k, layer.filters * k * k, False))
                infos.append(ParamInfo(f"{prefix}.bias", (layer.filters,), 0, 0, True))
            elif layer.kind == "conv_transpose":
                k = layer.kernel
                infos.append(ParamInfo(f"{prefix}.weight", (shape[0], layer.filters, k, k),
                                       shape[0] * k * k, layer.filters * k * k, False))
                infos.append(ParamInfo(f"{prefix}.bias", (layer.filters,), 0, 0, True))
            elif layer.kind == "dense":
                infos.append(ParamInfo(f"{prefix}.weight", (layer.in_features, layer.out_features),
                                       layer.in_features, layer.out_features, False))
                infos.append(ParamInfo(f"{prefix}.bias", (layer.out_features,), 0, 0, True))
            shape = out
        return infos

    def conv_filter_counts(self) -> List[int]:
        return [layer.filters for layer in self.layers if layer.kind == "conv"]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "input_shape": list(self.input_shape),
            "output_shape": list(self.output_shape),
            "encoder_layers": self.encoder_layers,
            "meta": self.meta,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        spec = cls(
            layers=tuple(LayerSpec.from_dict(layer) for layer in d["layers"]),
            input_shape=tuple(d["input_shape"]),
            output_shape=tuple(d["output_shape"]),
            label=d["label"],
            encoder_layers=d.get("encoder_layers"),
            meta=dict(d.get("meta", {})),
        )
        spec.layer_shapes()
        return spec


def _layer_output_shape(layer: LayerSpec, shape: Tuple[int, ...], idx: int) -> Tuple[int, ...]:
    kind = layer.kind
    if kind in ("conv", "conv_transpose", "upsample_nearest", "avgpool") and len(shape) != 3:
        raise ShapeError(f"layer {idx} ({kind}) needs a (C, H, W) input, got {shape}")
    if kind == "conv":
        _, H, W = shape
        return (layer.filters,
                conv_output_size(H, layer.kernel, layer.stride, layer.padding),
                conv_output_size(W, layer.kernel, layer.stride, layer.padding))
    if kind == "conv_transpose":
        _, H, W = shape
        grow = lambda n: (n - 1) * layer.stride + layer.kernel - 2 * layer.padding + layer.output_padding
        if grow(H) < 1 or grow(W) < 1:
            raise ShapeError(f"layer {idx} (conv_transpose) yields an empty output")
        return (layer.filters, grow(H), grow(W))
    if kind == "upsample_nearest":
        C, H, W = shape
        return (C, H * layer.factor, W * layer.factor)
    if kind == "avgpool":
        C, H, W = shape
        if H % layer.factor or W % layer.factor:
            raise ShapeError(f"layer {idx} (avgpool): {H}x{W} not divisible by {layer.factor}")
        return (C, H // layer.factor, W // layer.factor)
    if kind == "dense":
        if shape != (layer.in_features,):
            raise ShapeError(f"layer {idx} (dense) expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    if kind == "reshape":
        target = tuple(layer.shape)
        if math.prod(target) != math.prod(shape):
            raise ShapeError(f"layer {idx} (reshape) cannot view {shape} as {target}")
        return target
    return shape


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class Network:
    """A NetworkSpec plus named parameter tensors; frozen networks are read-only."""

    def __init__(self, spec: NetworkSpec, params: Dict[str, Tensor],
                 trainable: Optional[Dict[str, bool]] = None, frozen: bool = False):
        expected = {p.name: p.shape for p in spec.params()}
        if set(expected) != set(params):
            raise ShapeError(f"{spec.label}: parameter names {sorted(params)} do not match spec")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{spec.label}: parameter {name} has shape {params[name].shape}, spec wants {shape}")
        self.spec = spec
        self._params = dict(params)
        self.trainable = dict(trainable) if trainable else {name: True for name in params}
        self._frozen = frozen

    @property
    def params(self) -> Dict[str, Tensor]:
        return dict(self._params)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "Network":
        self._frozen = True
        return self

    def trainable_params(self) -> Dict[str, Tensor]:
        return {name: t for name, t in self._params.items() if self.trainable.get(name, False)}

    def update(self, params: Dict[str, Tensor]):
        if self._frozen:
            raise ContractError(f"{self.spec.label} network is frozen")
        for name, t in params.items():
            if name not in self._params:
                raise ContractError(f"unknown parameter '{name}'")
            if t.shape != self._params[name].shape:
                raise ShapeError(f"parameter {name}: shape {t.shape} != {self._params[name].shape}")
            self._params[name] = t

    def parameter_hash(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self._params):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self._params[name].data, dtype="<f8").tobytes())
        return digest.hexdigest()

    def sub_network(self, start: int, stop: int, label: str) -> "Network":
        """Frozen network made of layers [start, stop), sharing parameter tensors."""
        shapes = [tuple(self.spec.input_shape)] + self.spec.layer_shapes()
        layers = self.spec.layers[start:stop]
        spec = NetworkSpec(layers=layers, input_shape=shapes[start], output_shape=shapes[stop],
                           label=label, meta=dict(self.spec.meta))
        params = {}
        for idx in range(start, stop):
            for suffix in ("weight", "bias"):
                name = f"layer{idx}.{suffix}"
                if name in self._params:
                    params[f"layer{idx - start}.{suffix}"] = self._params[name]
        return Network(spec, params, frozen=True)

    def __call__(self, x: Tensor) -> Tensor:
        return forward(self, x)

    def __repr__(self):
        n = sum(t.size for t in self._params.values())
        return f"Network({self.spec.label}, layers={len(self.spec.layers)}, params={n}, frozen={self._frozen})"


def forward(net: Network, input: Tensor) -> Tensor:
    """Apply the layers in order; accepts one sample or a batch with a leading axis."""
    in_shape = tuple(net.spec.input_shape)
    if input.shape == in_shape:
        unbatched = True
    elif input.shape[1:] == in_shape:
        unbatched = False
    else:
        raise ShapeError(f"{net.spec.label}: input {input.shape} does not match {in_shape}")
    if not net.spec.layers:
        return input

    h = reshape(input, (1,) + in_shape) if unbatched else input
    n = h.shape[0]
    params = net._params
    for idx, layer in enumerate(net.spec.layers):
        prefix = f"layer{idx}"
        kind = layer.kind
        if kind == "conv":
            h = conv2d(h, params[f"{prefix}.weight"], params[f"{prefix}.bias"], layer.stride, layer.padding)
        elif kind == "conv_transpose":
            h = conv2d_transpose(h, params[f"{prefix}.weight"], params[f"{prefix}.bias"],
                                 layer.stride, layer.padding, layer.output_padding)
        elif kind == "upsample_nearest":
            h = upsample_nearest(h, layer.factor)
        elif kind == "avgpool":
            h = avgpool(h, layer.factor)
        elif kind == "dense":
            h = dense(h, params[f"{prefix}.weight"], params[f"{prefix}.bias"])
        elif kind == "reshape":
            h = reshape(h, (n,) + tuple(layer.shape))
        h = activate(h, layer.activation)
    return reshape(h, tuple(net.spec.output_shape)) if unbatched else h


def init_params(spec: NetworkSpec, seed: int) -> Network:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    spec.layer_shapes()
    rng = np.random.default_rng(seed)
    params = {}
    for info in spec.params():
        if info.is_bias:
            params[info.name] = Tensor.wrap(np.zeros(info.shape))
        else:
            s = math.sqrt(6.0 / (info.fan_in + info.fan_out))
            params[info.name] = Tensor.wrap(rng.uniform(-s, s, size=info.shape))
    return Network(spec, params)


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def encoder_filter_counts(variant: str, d: int, f: int) -> List[int]:
    if variant == "GE1":
        return [n * f for n in range(1, d + 1)]
    if variant == "GE0":
        return [math.ceil(n / 3) * f for n in range(1, d + 1)]
    raise ContractError(f"unknown encoder variant '{variant}' (use GE0 or GE1)")


def _encoder_layers(variant: str, d: int, f: int, m: int, input_shape) -> List[LayerSpec]:
    if d < 1 or f < 1 or m < 1:
        raise ContractError(f"encoder needs d, f, m >= 1 (got d={d}, f={f}, m={m})")
    _, H, W = input_shape
    pools = d // 2
    if H % (2 ** pools) or W % (2 ** pools):
        raise ShapeError(f"input {H}x{W} is too small for {pools} downsamplings")

    layers = []
    filters = encoder_filter_counts(variant, d, f)
    for n, count in enumerate(filters, start=1):
        layers.append(LayerSpec("conv", kernel=3, stride=1, padding=1, filters=count, activation="elu"))
        if n % 2 == 0:
            layers.append(LayerSpec("avgpool", factor=2))
    flat = filters[-1] * (H // 2 ** pools) * (W // 2 ** pools)
    layers.append(LayerSpec("reshape", shape=(flat,)))
    layers.append(LayerSpec("dense", in_features=flat, out_features=m))
    return layers


def encoder_spec(variant: str, d: int, f: int, m: int, input_shape) -> NetworkSpec:
    spec = NetworkSpec(
        layers=tuple(_encoder_layers(variant, d, f, m, input_shape)),
        input_shape=tuple(input_shape),
        output_shape=(m,),
        label=variant,
        meta={"variant": variant, "d": d, "f": f, "m": m},
    )
    spec.layer_shapes()
    return spec


def _upsampling_layers(in_width: int, conv_layers: int, base_filters: int, output_shape) -> List[LayerSpec]:
    if in_width < 1 or conv_layers < 1 or base_filters < 1:
        raise ContractError("generator/decoder need positive input width, conv layers and filters")
    C, H, W = output_shape
    ups = conv_layers // 2
    if H % (2 ** ups) or W % (2 ** ups):
        raise ShapeError(f"output {H}x{W} is not reachable with {ups} 2x upsamplings")
    h0, w0 = H // 2 ** ups, W // 2 ** ups

    layers = [
        LayerSpec("dense", in_features=in_width, out_features=base_filters * h0 * w0),
        LayerSpec("reshape", shape=(base_filters, h0, w0)),
    ]
    for n in range(1, conv_layers + 1):
        layers.append(LayerSpec("conv", kernel=3, stride=1, padding=1, filters=base_filters, activation="elu"))
        if n % 2 == 0:
            layers.append(LayerSpec("upsample_nearest", factor=2))
    layers.append(LayerSpec("conv", kernel=3, stride=1, padding=1, filters=C, activation="tanh"))
    return layers


def generator_spec(latent_dim: int, conv_layers: int, base_filters: int, output_shape) -> NetworkSpec:
    spec = NetworkSpec(
        layers=tuple(_upsampling_layers(latent_dim, conv_layers, base_filters, output_shape)),
        input_shape=(latent_dim,),
        output_shape=tuple(output_shape),
        label="generator",
        meta={"latent_dim": latent_dim, "conv_layers": conv_layers, "base_filters": base_filters},
    )
    spec.layer_shapes()
    return spec


def decoder_spec(m: int, conv_layers: int, base_filters: int, output_shape) -> NetworkSpec:
    spec = NetworkSpec(
        layers=tuple(_upsampling_layers(m, conv_layers, base_filters, output_shape)),
        input_shape=(m,),
        output_shape=tuple(output_shape),
        label="decoder",
        meta={"m": m, "conv_layers": conv_layers, "base_filters": base_filters},
    )
    spec.layer_shapes()
    return spec


def discriminator_spec(input_shape, d: int, f: int, m: int, decoder_conv_layers: int,
                       decoder_filters: int) -> NetworkSpec:
    """BEGAN discriminator: a GE0-rule encoder followed by a decoder back to image space."""
    enc = _encoder_layers("GE0", d, f, m, input_shape)
    dec = _upsampling_layers(m, decoder_conv_layers, decoder_filters, input_shape)
    spec = NetworkSpec(
        layers=tuple(enc + dec),
        input_shape=tuple(input_shape),
        output_shape=tuple(input_shape),
        label="discriminator",
        encoder_layers=len(enc),
        meta={"variant": "GE0", "d": d, "f": f, "m": m,
              "decoder_conv_layers": decoder_conv_layers, "decoder_filters": decoder_filters},
    )
    spec.layer_shapes()
    return spec


def build_encoder(variant: str, d: int, f: int, m: int, input_shape, seed: int = 0) -> Network:
    return init_params(encoder_spec(variant, d, f, m, input_shape), seed)


def build_generator(latent_dim: int, conv_layers: int, base_filters: int, output_shape, seed: int = 0) -> Network:
    return init_params(generator_spec(latent_dim, conv_layers, base_filters, output_shape), seed)


def build_decoder(m: int, conv_layers: int, base_filters: int, output_shape, seed: int = 0) -> Network:
    return init_params(decoder_spec(m, conv_layers, base_filters, output_shape), seed)


def build_discriminator(input_shape, d: int, f: int, m: int, decoder_conv_layers: int,
                        decoder_filters: int, seed: int = 0) -> Network:
    return init_params(discriminator_spec(input_shape, d, f, m, decoder_conv_layers, decoder_filters), seed)
