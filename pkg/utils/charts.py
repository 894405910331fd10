"""
Report graphics: SVG line charts (matplotlib) and tiled PNG image grids (Pillow).
"""

import os
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image, ImageDraw

from ml.exceptions import ContractError
from utils.image_data import to_uint8

# fixed salt and no date stamp keep repeated SVG exports byte-identical
plt.rcParams["svg.hashsalt"] = "ge-toolkit"
LABEL_WIDTH = 56


def save_line_chart(x: Sequence[float], series: Dict[str, Sequence[float]], path: str,
                    xlabel: str = "", ylabel: str = "", title: str = "", logy: bool = False) -> str:
    """One polyline per series over a shared x axis, written as SVG."""
    if not series:
        raise ContractError("line chart needs at least one series")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in series.items():
        if len(values) != len(x):
            raise ContractError(f"series '{label}' has {len(values)} points, x has {len(x)}")
        ax.plot(list(x), list(values), "o-", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if logy:
        ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _tile(image: np.ndarray) -> Image.Image:
    pixels = to_uint8(image)
    if pixels.shape[0] == 1:
        return Image.fromarray(pixels[0]).convert("RGB")
    return Image.fromarray(np.ascontiguousarray(pixels.transpose(1, 2, 0)))


def save_image_grid(images: np.ndarray, path: str, ncols: int = 8, pad: int = 1) -> str:
    """Tile a [N, C, H, W] batch into rows of ``ncols`` images."""
    images = np.asarray(images)
    if images.ndim != 4 or len(images) == 0:
        raise ContractError(f"image grid needs a non-empty [N, C, H, W] batch, got {images.shape}")
    n, _, H, W = images.shape
    ncols = max(1, min(ncols, n))
    nrows = -(-n // ncols)
    canvas = Image.new("RGB", (ncols * (W + pad) + pad, nrows * (H + pad) + pad), "white")
    for i in range(n):
        r, c = divmod(i, ncols)
        canvas.paste(_tile(images[i]), (pad + c * (W + pad), pad + r * (H + pad)))
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    canvas.save(path, format="PNG")
    return path


def save_comparison_grid(rows: Dict[str, np.ndarray], path: str, scale: int = 2,
                         pad: int = 2, label_width: Optional[int] = None) -> str:
    """One labelled row per method (original, degraded, reconstructions), images left to right."""
    if not rows:
        raise ContractError("comparison grid needs at least one row")
    shapes = {np.asarray(v).shape for v in rows.values()}
    if len(shapes) != 1:
        raise ContractError(f"comparison rows differ in shape: {sorted(shapes)}")
    n, _, H, W = shapes.pop()
    h, w = H * scale, W * scale
    label_width = LABEL_WIDTH if label_width is None else label_width

    canvas = Image.new("RGB", (label_width + n * (w + pad) + pad, len(rows) * (h + pad) + pad), "white")
    draw = ImageDraw.Draw(canvas)
    for r, (label, images) in enumerate(rows.items()):
        top = pad + r * (h + pad)
        draw.text((2, top + h // 2 - 5), label[:9], fill="black")
        for i, image in enumerate(np.asarray(images)):
            tile = _tile(image).resize((w, h), Image.NEAREST)
            canvas.paste(tile, (label_width + pad + i * (w + pad), top))
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    canvas.save(path, format="PNG")
    return path
