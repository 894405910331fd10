"""
Degradation operators (how a corrupted image is produced from a clean one)
and adjustment operators S applied between the generator and the encoder.

Degradations are plain array functions and never run on a tape. Adjustment
operators are differentiable because the solver backpropagates through them.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ml.exceptions import ContractError, ShapeError
from ml.nn import avgpool, upsample_nearest
from ml.tensor import Tensor, emit, mul

logger = logging.getLogger(__name__)

DEGRADATION_KINDS = ("gaussian_noise", "gaussian_blur", "downsample", "mask")
ADJUSTMENT_KINDS = ("identity", "mask", "resize")
TASKS = ("cs", "denoise", "deblur", "superres", "inpaint")
BICUBIC_A = -0.5


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# degradations
# ---------------------------------------------------------------------------

@dataclass
class DegradationSpec:
    kind: str
    sigma: Optional[float] = None
    blur_size: Optional[int] = None
    factor: Optional[int] = None
    rect: Optional[Tuple[int, int, int, int]] = None
    mask: Optional[np.ndarray] = field(default=None, repr=False)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEGRADATION_KINDS:
            raise ContractError(f"unknown degradation '{self.kind}'")
        if self.kind in ("gaussian_noise", "gaussian_blur") and not (self.sigma and self.sigma > 0):
            raise ContractError(f"{self.kind} needs sigma > 0, got {self.sigma}")
        if self.kind == "gaussian_blur" and (not self.blur_size or self.blur_size % 2 == 0):
            raise ContractError(f"blur size must be a positive odd integer, got {self.blur_size}")
        if self.kind == "downsample" and (not self.factor or self.factor < 2):
            raise ContractError(f"downsample factor must be >= 2, got {self.factor}")
        if self.kind == "mask" and self.rect is None and self.mask is None:
            raise ContractError("mask degradation needs a rect or a bitmap mask")

    def describe(self) -> Dict:
        out = {"kind": self.kind, "seed": self.seed}
        for key in ("sigma", "blur_size", "factor"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.rect is not None:
            out["rect"] = list(self.rect)
        elif self.mask is not None:
            out["mask"] = "bitmap"
        return out

    def mask_for(self, image_shape: Sequence[int]) -> np.ndarray:
        if self.mask is not None:
            return check_mask(self.mask, image_shape)
        return rect_mask(image_shape, self.rect)


def apply_noise(x, sigma: float, rng: np.random.Generator) -> Tensor:
    """x + N(0, sigma^2) noise; the result is not clipped to the pixel range."""
    if sigma <= 0:
        raise ContractError(f"noise sigma must be > 0, got {sigma}")
    arr = _array(x)
    return Tensor.wrap(arr + rng.normal(0.0, sigma, size=arr.shape), "apply_noise")


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    """Normalized isotropic 2-D Gaussian kernel of odd ``size``."""
    if size < 1 or size % 2 == 0:
        raise ContractError(f"kernel size must be a positive odd integer, got {size}")
    if sigma <= 0:
        raise ContractError(f"kernel sigma must be > 0, got {sigma}")
    r = np.arange(size) - size // 2
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def gaussian_blur(x, sigma: float, size: int) -> Tensor:
    """Channelwise blur with a normalized Gaussian kernel and reflective boundary."""
    arr = _array(x)
    if arr.ndim < 2:
        raise ShapeError(f"gaussian_blur needs an image, got shape {arr.shape}")
    kernel = gaussian_kernel(sigma, size)
    half = size // 2
    H, W = arr.shape[-2:]
    if half >= H or half >= W:
        raise ShapeError(f"blur size {size} is too large for a {H}x{W} image")
    pad = [(0, 0)] * (arr.ndim - 2) + [(half, half), (half, half)]
    padded = np.pad(arr, pad, mode="reflect")
    windows = sliding_window_view(padded, (size, size), axis=(-2, -1))
    return Tensor.wrap(np.einsum("...ij,ij->...", windows, kernel), "gaussian_blur")


def downsample(x, factor: int) -> Tensor:
    """Block average over factor x factor tiles."""
    arr = _array(x)
    return Tensor.wrap(avgpool(Tensor.wrap(arr), factor).data, "downsample")


def _cubic_weight(d: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    d = np.abs(d)
    near = ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0
    far = ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a
    return np.where(d <= 1.0, near, np.where(d < 2.0, far, 0.0))


def _resample_matrix(coords: np.ndarray, size: int) -> np.ndarray:
    """Rows hold the cubic weights that evaluate a length-``size`` signal at ``coords``."""
    coords = np.asarray(coords, dtype=np.float64)
    base = np.floor(coords).astype(np.int64)
    t = coords - base
    matrix = np.zeros((coords.size, size))
    rows = np.arange(coords.size)
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, size - 1)
        np.add.at(matrix, (rows, idx), _cubic_weight(t - tap))
    return matrix


def bicubic_resample(x, ys: Sequence[float], xs: Sequence[float]) -> Tensor:
    """Separable cubic interpolation (a = -0.5, clamped edges) at source coordinates."""
    arr = _array(x)
    H, W = arr.shape[-2:]
    Ry = _resample_matrix(ys, H)
    Rx = _resample_matrix(xs, W)
    return Tensor.wrap(np.einsum("oh,...hw,pw->...op", Ry, arr, Rx), "bicubic_resample")


def bicubic_upsample(x, factor: int) -> Tensor:
    if factor < 1:
        raise ContractError(f"upsampling factor must be >= 1, got {factor}")
    arr = _array(x)
    H, W = arr.shape[-2:]
    ys = (np.arange(H * factor) + 0.5) / factor - 0.5
    xs = (np.arange(W * factor) + 0.5) / factor - 0.5
    return bicubic_resample(arr, ys, xs)


def check_mask(mask, image_shape: Sequence[int]) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != tuple(image_shape[-2:]):
        raise ShapeError(f"mask shape {m.shape} does not match image {tuple(image_shape[-2:])}")
    if not np.isin(m, (0.0, 1.0)).all():
        raise ContractError("mask must be binary (0 = masked, 1 = keep)")
    return m


def rect_mask(image_shape: Sequence[int], rect: Sequence[int]) -> np.ndarray:
    """[H, W] ones with the rectangle (x, y, w, h) set to zero."""
    H, W = image_shape[-2:]
    if len(rect) != 4:
        raise ContractError(f"mask rect needs four integers (x, y, w, h), got {rect}")
    x0, y0, w, h = (int(v) for v in rect)
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
        raise ContractError(f"mask rect {tuple(rect)} lies outside the {H}x{W} image")
    mask = np.ones((H, W))
    mask[y0:y0 + h, x0:x0 + w] = 0.0
    return mask


def mask_apply(x: Tensor, mask) -> Tensor:
    """Hadamard product with a binary [H, W] mask broadcast over channels (and batch)."""
    if not isinstance(x, Tensor):
        x = Tensor.wrap(np.asarray(x, dtype=np.float64))
    m = check_mask(mask, x.shape)
    return mul(x, Tensor.wrap(np.broadcast_to(m, x.shape).copy()))


def degradation_for(task: str, sigma: float = 0.4, blur_sigma: float = 1.0, blur_size: int = 5,
                    factor: int = 4, rect: Optional[Sequence[int]] = None,
                    mask: Optional[np.ndarray] = None, seed: int = 0) -> Optional[DegradationSpec]:
    """The corruption used for a restoration task; compressed sensing has none."""
    if task == "cs":
        return None
    if task == "denoise":
        return DegradationSpec("gaussian_noise", sigma=sigma, seed=seed)
    if task == "deblur":
        return DegradationSpec("gaussian_blur", sigma=blur_sigma, blur_size=blur_size, seed=seed)
    if task == "superres":
        return DegradationSpec("downsample", factor=factor, seed=seed)
    if task == "inpaint":
        return DegradationSpec("mask", rect=tuple(rect) if rect is not None else None, mask=mask, seed=seed)
    raise ContractError(f"unknown task '{task}' (choose from {', '.join(TASKS)})")


def degrade(x, spec: Optional[DegradationSpec]) -> Tensor:
    """Produce the corrupted observation; deterministic under ``spec.seed``."""
    arr = _array(x)
    if spec is None:
        return Tensor.wrap(arr)
    if spec.kind == "gaussian_noise":
        return apply_noise(arr, spec.sigma, np.random.default_rng(spec.seed))
    if spec.kind == "gaussian_blur":
        return gaussian_blur(arr, spec.sigma, spec.blur_size)
    if spec.kind == "downsample":
        return downsample(arr, spec.factor)
    return mask_apply(Tensor.wrap(arr), spec.mask_for(arr.shape))


def precondition(x_dagger, spec: Optional[DegradationSpec]) -> Tensor:
    """Bring a corrupted image back to full resolution (bicubic for downsampling)."""
    if spec is not None and spec.kind == "downsample":
        return bicubic_upsample(x_dagger, spec.factor)
    return Tensor.wrap(_array(x_dagger))


# ---------------------------------------------------------------------------
# adjustment operators
# ---------------------------------------------------------------------------

def _nearest_decimate(x: Tensor, factor: int) -> Tensor:
    arr = x.data
    H, W = arr.shape[-2:]
    if H % factor or W % factor:
        raise ShapeError(f"nearest resize: {H}x{W} not divisible by {factor}")
    src_shape = arr.shape

    def _backward(g, needs):
        full = np.zeros(src_shape)
        full[..., ::factor, ::factor] = g
        return (full,)

    return emit(arr[..., ::factor, ::factor].copy(), (x,), _backward, "nearest_decimate")


@dataclass
class AdjustmentOp:
    """Differentiable map S from the generator's image space to the encoder's input space."""

    kind: str = "identity"
    mask: Optional[np.ndarray] = field(default=None, repr=False)
    target_shape: Optional[Tuple[int, int, int]] = None
    method: str = "area"

    def __post_init__(self):
        if self.kind not in ADJUSTMENT_KINDS:
            raise ContractError(f"unknown adjustment '{self.kind}'")
        if self.kind == "mask":
            if self.mask is None:
                raise ContractError("mask adjustment needs a mask")
            self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.kind == "resize":
            if self.target_shape is None or len(self.target_shape) != 3:
                raise ContractError("resize adjustment needs a (C, H, W) target shape")
            if self.method not in ("area", "nearest"):
                raise ContractError(f"unknown resize method '{self.method}'")
            self.target_shape = tuple(int(v) for v in self.target_shape)

    def output_shape(self, input_shape: Sequence[int]) -> Tuple[int, ...]:
        input_shape = tuple(input_shape)
        if self.kind == "identity":
            return input_shape
        if self.kind == "mask":
            check_mask(self.mask, input_shape)
            return input_shape
        self._resize_factor(input_shape)
        return input_shape[:-3] + self.target_shape

    def _resize_factor(self, input_shape) -> Tuple[str, int]:
        C, H, W = input_shape[-3:]
        tC, tH, tW = self.target_shape
        if C != tC:
            raise ShapeError(f"resize cannot change channels ({C} -> {tC})")
        if (tH, tW) == (H, W):
            return "same", 1
        if tH > H and tH % H == 0 and tW % W == 0 and tH // H == tW // W:
            return "up", tH // H
        if tH < H and H % tH == 0 and W % tW == 0 and H // tH == W // tW:
            return "down", H // tH
        raise ShapeError(f"resize from {H}x{W} to {tH}x{tW} needs one integer scale factor")

    def __call__(self, x: Tensor) -> Tensor:
        if self.kind == "identity":
            return x
        if self.kind == "mask":
            return mask_apply(x, self.mask)
        direction, factor = self._resize_factor(x.shape)
        if direction == "same":
            return x
        if direction == "up":
            return upsample_nearest(x, factor)
        return avgpool(x, factor) if self.method == "area" else _nearest_decimate(x, factor)

    def describe(self) -> Dict:
        out = {"kind": self.kind}
        if self.kind == "mask":
            out["masked_pixels"] = int((self.mask == 0).sum())
        if self.kind == "resize":
            out.update(target_shape=list(self.target_shape), method=self.method)
        return out


def adjustment_for(task: str, mask: Optional[np.ndarray] = None) -> AdjustmentOp:
    """identity for cs/denoise/deblur/superres (bicubic-preconditioned), mask for inpainting."""
    if task in ("cs", "denoise", "deblur", "superres"):
        return AdjustmentOp("identity")
    if task == "inpaint":
        if mask is None:
            raise ContractError("inpainting needs a mask")
        return AdjustmentOp("mask", mask=mask)
    raise ContractError(f"unknown task '{task}' (choose from {', '.join(TASKS)})")
