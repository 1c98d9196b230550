"""Heatmap and timeline rendering.

PNG output is a pure function of the inputs: no timestamps or software tags
are embedded, so identical inputs give identical bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import EmptyMatrix, InputError

ABSENT_RGB = (128, 128, 128)
CONTOUR_RGB = (0, 0, 0)
LUT_SIZE = 256
MID_INDEX = LUT_SIZE // 2


def blue_white_red_lut() -> np.ndarray:
    """256 x 3 uint8 table running blue -> white -> red.

    The red channel never decreases along the table, so larger values are
    never less red than smaller ones.
    """
    t = np.linspace(0.0, 1.0, LUT_SIZE)
    lower = np.clip(2.0 * t, 0.0, 1.0)  # rises to 1 at the centre
    upper = np.clip(2.0 * (1.0 - t), 0.0, 1.0)  # falls from 1 at the centre
    lut = np.stack([lower, np.minimum(lower, upper), upper], axis=1)
    return np.rint(255.0 * lut).astype(np.uint8)


COLORMAPS = {"bwr": blue_white_red_lut()}


def colormap_indices(matrix: np.ndarray, value_range: tuple[float, float] | None = None) -> np.ndarray:
    """LUT index per cell; absent (NaN) cells get -1.

    Without `value_range` the defined cells' [min, max] is used. A degenerate
    range maps every cell to the centre of the table.
    """
    m = np.asarray(matrix, dtype=float)
    absent = ~np.isfinite(m)
    if value_range is None:
        if absent.all():
            lo = hi = 0.0
        else:
            lo, hi = float(np.min(m[~absent])), float(np.max(m[~absent]))
    else:
        lo, hi = map(float, value_range)
        if hi < lo:
            raise InputError(f"empty value range [{lo}, {hi}]")
    if hi == lo:
        idx = np.full(m.shape, MID_INDEX)
    else:
        scaled = (np.where(absent, lo, m) - lo) / (hi - lo)
        idx = np.rint(np.clip(scaled, 0.0, 1.0) * (LUT_SIZE - 1)).astype(int)
    idx[absent] = -1
    return idx


def contour_of(mask: np.ndarray) -> np.ndarray:
    """Inner boundary pixels of a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def heatmap_rgb(
    matrix: np.ndarray,
    value_range: tuple[float, float] | None = None,
    colormap: str = "bwr",
    contour_mask: np.ndarray | None = None,
    scale: int = 1,
) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise EmptyMatrix(f"need a nonempty 2-D matrix, got shape {m.shape}")
    try:
        lut = COLORMAPS[colormap]
    except KeyError:
        raise InputError(f"unknown colormap {colormap!r}; known: {sorted(COLORMAPS)}") from None
    idx = colormap_indices(m, value_range)
    rgb = lut[np.clip(idx, 0, None)]
    rgb[idx < 0] = ABSENT_RGB
    if contour_mask is not None:
        contour_mask = np.asarray(contour_mask, dtype=bool)
        if contour_mask.shape != m.shape:
            raise InputError(f"contour mask {contour_mask.shape} vs matrix {m.shape}")
        rgb[contour_of(contour_mask)] = CONTOUR_RGB
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    return rgb


def render_heatmap(
    matrix: np.ndarray,
    value_range: tuple[float, float] | None = None,
    colormap: str = "bwr",
    contour_mask: np.ndarray | None = None,
    scale: int = 1,
) -> bytes:
    """PNG bytes of the colour-mapped matrix."""
    rgb = heatmap_rgb(matrix, value_range, colormap, contour_mask, scale)
    buf = io.BytesIO()
    Image.fromarray(rgb, "RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def save_heatmap(path, matrix, **kwargs) -> Path:
    path = Path(path)
    path.write_bytes(render_heatmap(matrix, **kwargs))
    return path


def plot_timeline(path, t: np.ndarray, values: np.ndarray, ylabel: str, title: str = "") -> Path:
    """Line plot of a per-window series (e.g. normalized PI) as PNG."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6, 3), dpi=100)
    ax = fig.add_subplot()
    ax.plot(t, values, color="tab:red", marker="o", markersize=3)
    ax.set_xlabel("window start [s]")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None})
    return path
