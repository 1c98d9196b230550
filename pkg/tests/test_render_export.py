import io
import json

import numpy as np
import pytest
from PIL import Image

from rppg_perfusion.core import WindowMetrics
from rppg_perfusion.errors import EmptyMatrix, InputError
from rppg_perfusion.export import (
    TIMELINE_COLUMNS,
    read_map,
    read_timeline_csv,
    write_json,
    write_map,
    write_timeline_csv,
)
from rppg_perfusion.render import (
    ABSENT_RGB,
    MID_INDEX,
    blue_white_red_lut,
    colormap_indices,
    contour_of,
    heatmap_rgb,
    plot_timeline,
    render_heatmap,
    save_heatmap,
)

BLUE = (0, 0, 255)
RED = (255, 0, 0)


def decode(png: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))


def test_lut_endpoints_and_centre():
    lut = blue_white_red_lut()
    assert lut.shape == (256, 3)
    assert tuple(lut[0]) == BLUE and tuple(lut[-1]) == RED
    assert all(c >= 253 for c in lut[MID_INDEX])  # near white


def test_checkerboard_extremes():
    rgb = decode(render_heatmap(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert tuple(rgb[0, 0]) == BLUE and tuple(rgb[1, 1]) == BLUE
    assert tuple(rgb[0, 1]) == RED and tuple(rgb[1, 0]) == RED


def test_constant_matrix_uses_centre_colour():
    rgb = decode(render_heatmap(np.full((3, 4), 2.5)))
    assert np.all(rgb == blue_white_red_lut()[MID_INDEX])


def test_absent_cell_is_gray():
    m = np.arange(9, dtype=float).reshape(3, 3)
    m[1, 2] = np.nan
    rgb = decode(render_heatmap(m))
    gray = np.all(rgb == ABSENT_RGB, axis=-1)
    assert gray.sum() == 1 and gray[1, 2]


def test_red_channel_monotone():
    rng = np.random.default_rng(0)
    values = rng.normal(size=500)
    rgb = heatmap_rgb(values[None, :])
    order = np.argsort(values)
    assert np.all(np.diff(rgb[0, order, 0].astype(int)) >= 0)


def test_fixed_range_clips():
    idx = colormap_indices(np.array([[-5.0, 0.5, 9.0]]), value_range=(0.0, 1.0))
    assert idx.tolist() == [[0, 128, 255]]
    with pytest.raises(InputError):
        colormap_indices(np.ones((1, 1)), value_range=(1.0, 0.0))


def test_render_is_byte_identical():
    m = np.random.default_rng(1).normal(size=(20, 30))
    assert render_heatmap(m, scale=3) == render_heatmap(m.copy(), scale=3)


def test_empty_matrix():
    with pytest.raises(EmptyMatrix):
        render_heatmap(np.zeros((0, 3)))
    with pytest.raises(EmptyMatrix):
        render_heatmap(np.zeros(5))


def test_unknown_colormap():
    with pytest.raises(InputError):
        render_heatmap(np.ones((2, 2)), colormap="viridis")


def test_contour_overdrawn():
    m = np.zeros((7, 7))
    mask = np.zeros((7, 7), bool)
    mask[1:6, 1:6] = True
    ring = contour_of(mask)
    assert ring.sum() == 16 and not ring[3, 3]
    rgb = heatmap_rgb(m, contour_mask=mask)
    assert np.all(rgb[ring] == 0)
    assert not np.all(rgb[~ring] == 0)


def test_scale_upsamples_blocks():
    rgb = heatmap_rgb(np.array([[0.0, 1.0]]), scale=4)
    assert rgb.shape == (4, 8, 3)
    assert np.all(rgb[:, :4] == BLUE) and np.all(rgb[:, 4:] == RED)


def test_save_heatmap(tmp_path):
    path = save_heatmap(tmp_path / "h.png", np.eye(3))
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_map_round_trip(tmp_path):
    m = np.random.default_rng(2).normal(size=(5, 7))
    m[2, 3] = np.nan
    write_map(tmp_path / "x.map", m, "snr_db")
    back, name = read_map(tmp_path / "x.map")
    assert name == "snr_db"
    np.testing.assert_array_equal(back, m)


def test_map_header_layout(tmp_path):
    data = write_map(tmp_path / "x.map", np.zeros((2, 3)), "rho").read_bytes()
    assert data[:8] == b"RPPGMAP1"
    assert int.from_bytes(data[8:12], "little") == 2 and int.from_bytes(data[12:16], "little") == 3
    assert len(data) == 8 + 4 + 4 + 2 + 3 + 6 * 8


def test_map_rejects_garbage(tmp_path):
    (tmp_path / "x.map").write_bytes(b"nope")
    with pytest.raises(InputError):
        read_map(tmp_path / "x.map")


def test_timeline_csv(tmp_path):
    entries = [
        WindowMetrics.build(0.0, 1.2, 15.5, 0.25, pi=1.04, rho_ref=0.97),
        WindowMetrics.build(1.0, 1.2, float("nan"), 0.0, pi=None, rho_ref=None),
    ]
    path = write_timeline_csv(tmp_path / "t.csv", entries)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TIMELINE_COLUMNS)
    rows = read_timeline_csv(path)
    assert rows[0]["bpm"] == pytest.approx(72.0) and rows[0]["rho_ref"] == 0.97
    assert rows[1]["snr_db"] is None and rows[1]["pi"] is None


def test_json_sanitizes_numpy(tmp_path):
    payload = {"a": np.float64(1.5), "b": np.arange(3), "c": float("nan"), 4: np.bool_(True)}
    loaded = json.loads(write_json(tmp_path / "s.json", payload).read_text())
    assert loaded == {"a": 1.5, "b": [0, 1, 2], "c": None, "4": True}


def test_plot_timeline_deterministic(tmp_path):
    t = np.arange(10.0)
    v = np.linspace(0, 1, 10)
    a = plot_timeline(tmp_path / "a.png", t, v, "normalized PI").read_bytes()
    b = plot_timeline(tmp_path / "b.png", t, v, "normalized PI").read_bytes()
    assert a == b and a[:4] == b"\x89PNG"
