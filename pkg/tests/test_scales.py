import numpy as np
import pytest

from rppg_perfusion.core import WindowMetrics
from rppg_perfusion.errors import (
    DegenerateLandmarks,
    DimensionMismatch,
    MissingReference,
    TooShortRecording,
)
from rppg_perfusion.scales import (
    MAP_NAMES,
    REGION_NAMES,
    MetricsTimeline,
    analyze_global,
    analyze_local,
    analyze_regions,
    minmax_normalize,
    mirror_landmarks,
    polygon_area,
    rasterize_regions,
    regions_from_landmarks,
    reperfusion_event,
    window_starts,
)
from rppg_perfusion.synth import SynthSpec, generate_synthetic_video
from rppg_perfusion.video import FrameSequence

from conftest import box_mask

LEFT = box_mask((60, 60), 0, 60, 0, 30)
RIGHT = box_mask((60, 60), 0, 60, 30, 60)
FULL = np.ones((60, 60), bool)


@pytest.fixture(scope="module")
def half_dead_video():
    """Pulse on the right half only."""
    spec = SynthSpec(width=60, height=60, duration=20, noise_sigma=0.005, seed=12, dead_zones=[(0, 0, 30, 60)])
    return generate_synthetic_video(spec)[0]


@pytest.fixture(scope="module")
def small_face(face_landmarks):
    return face_landmarks * 0.5  # fits a 100 x 100 frame


def inside_polygon(poly, x, y):
    """Even-odd ray casting, written out point by point."""
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


# windows


def test_window_starts_drop_partial_window(cfg):
    assert window_starts(900, 30.0, cfg) == list(range(0, 601, 30))
    assert len(window_starts(int(25.5 * 30), 30.0, cfg)) == 16


def test_window_starts_too_short(cfg):
    with pytest.raises(TooShortRecording):
        window_starts(299, 30.0, cfg)


# global


def test_global_two_pulsatile_areas(pulsatile_video, cfg):
    seq, _ = pulsatile_video
    roi, ref = analyze_global(seq, LEFT, RIGHT, cfg)
    assert len(roi) == 21 and len(ref) == 21
    np.testing.assert_allclose(np.diff(roi.column("t_start")), cfg.t_step)
    bpm = roi.column("bpm")
    assert np.all((bpm >= 71) & (bpm <= 73))
    assert np.all(roi.column("rho_ref") > 0.9)
    assert np.all(ref.column("rho_ref") == pytest.approx(1.0))


def test_global_external_reference(pulsatile_video, cfg):
    seq, _ = pulsatile_video
    roi, ref = analyze_global(seq, FULL, None, cfg, external_hr=1.2)
    assert ref is None
    assert np.all(np.abs(roi.column("bpm") - 72) <= 1)
    assert np.all(roi.column("rho_ref") > 0.9)


def test_global_hr_within_band(pulsatile_video, cfg):
    seq, _ = pulsatile_video
    roi, _ = analyze_global(seq, LEFT, RIGHT, cfg)
    f = roi.column("f_hr")
    assert np.all((f >= cfg.f1) & (f <= cfg.f2))


def test_global_perfusion_index_from_green(pulsatile_video, cfg):
    seq, _ = pulsatile_video
    roi, _ = analyze_global(seq, LEFT, RIGHT, cfg)
    pi = roi.column("pi")
    # 2 % green modulation: peak-to-peak over mean is about 4 %
    assert np.all(pi > 0) and np.all(np.abs(pi - pi.mean()) < 0.2 * pi.mean())


def test_global_non_pulsatile_roi_has_lower_snr(half_dead_video, cfg):
    live, _ = analyze_global(half_dead_video, box_mask((60, 60), 0, 60, 35, 55), RIGHT, cfg)
    dead, _ = analyze_global(half_dead_video, box_mask((60, 60), 0, 60, 5, 25), RIGHT, cfg)
    assert np.mean(dead.column("snr_db")) <= np.mean(live.column("snr_db")) - 10


def test_global_too_short(cfg):
    seq, _ = generate_synthetic_video(SynthSpec(width=8, height=8, duration=5))
    with pytest.raises(TooShortRecording):
        analyze_global(seq, np.ones((8, 8), bool), None, cfg, external_hr=1.2)


def test_global_missing_reference(pulsatile_video, cfg):
    with pytest.raises(MissingReference):
        analyze_global(pulsatile_video[0], LEFT, None, cfg)


def test_global_mask_shape_mismatch(pulsatile_video, cfg):
    with pytest.raises(DimensionMismatch):
        analyze_global(pulsatile_video[0], np.ones((10, 10), bool), None, cfg, external_hr=1.2)


def test_global_registration_leaves_static_video_unchanged(pulsatile_video, cfg):
    seq, _ = pulsatile_video
    centre = box_mask((60, 60), 15, 45, 15, 45)
    plain, _ = analyze_global(seq, centre, None, cfg, external_hr=1.2)
    # a textureless frame has no registration signal, so every frame stays put
    reg, _ = analyze_global(seq, centre, None, cfg, external_hr=1.2, register=True)
    np.testing.assert_array_equal(plain.column("snr_db"), reg.column("snr_db"))


def test_global_skin_segmentation(pulsatile_video, cfg):
    # the default base colour is skin-toned, so segmentation keeps the ROI
    seq, _ = pulsatile_video
    plain, _ = analyze_global(seq, LEFT, None, cfg, external_hr=1.2)
    seg, _ = analyze_global(seq, LEFT, None, cfg, external_hr=1.2, skin_seg=True)
    np.testing.assert_allclose(seg.column("snr_db"), plain.column("snr_db"))


# regions


def test_regions_pairwise_disjoint(face_landmarks):
    regions = regions_from_landmarks(face_landmarks, (200, 200))
    assert [r.name for r in regions] == list(REGION_NAMES)
    claimed = np.zeros((200, 200), int)
    for r in regions:
        for y in np.arange(0.5, 200, 2.0):
            for x in np.arange(0.5, 200, 2.0):
                if inside_polygon(r.polygon, x, y):
                    claimed[int(y), int(x)] += 1
    assert claimed.max() == 1
    for r in regions:
        assert r.area >= 25


def test_rasterized_regions_match_ray_casting(face_landmarks):
    regions = regions_from_landmarks(face_landmarks, (200, 200))
    masks = rasterize_regions(regions, (200, 200))
    nose = next(r for r in regions if r.name == "nose")
    ys, xs = np.mgrid[30:130:7, 70:130:7]
    for x, y in zip(xs.ravel(), ys.ravel()):
        assert masks["nose"][y, x] == inside_polygon(nose.polygon, x, y)


def test_regions_exclude_mouth_and_eyes(face_landmarks):
    masks = rasterize_regions(regions_from_landmarks(face_landmarks, (200, 200)), (200, 200))
    face = np.logical_or.reduce(list(masks.values()))
    for idx in (51, 57, 62, 66, 37, 44):  # lips and eyelids
        x, y = np.rint(face_landmarks[idx]).astype(int)
        assert not face[y, x]


def test_regions_collinear_landmarks():
    lm = np.column_stack([np.linspace(10, 150, 68), np.full(68, 80.0)])
    with pytest.raises(DegenerateLandmarks):
        regions_from_landmarks(lm, (200, 200))


def test_regions_outside_frame(face_landmarks):
    with pytest.raises(DegenerateLandmarks):
        regions_from_landmarks(face_landmarks + 100, (200, 200))


def test_regions_mirror_swaps_names(face_landmarks):
    # shift off-centre first so the mirror image differs from the original
    lm = face_landmarks + [17.0, 0.0]
    plain = {r.name: r for r in regions_from_landmarks(lm, (200, 240))}
    mirrored = {r.name: r for r in regions_from_landmarks(mirror_landmarks(lm, 240), (200, 240))}
    for a, b in [("right-forehead", "left-forehead"), ("right-cheek", "left-cheek"), ("nose", "nose")]:
        assert mirrored[b].area == pytest.approx(plain[a].area, rel=0.01)
        cx_plain = plain[a].polygon[:, 0].mean()
        cx_mirror = mirrored[b].polygon[:, 0].mean()
        assert cx_mirror == pytest.approx(239 - cx_plain, abs=1.0)


def test_polygon_area_unit_square():
    assert polygon_area(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)) == 1.0


@pytest.fixture(scope="module")
def face_videos(small_face):
    regions = regions_from_landmarks(small_face, (100, 100))
    nose = next(r for r in regions if r.name == "nose").polygon
    x0, y0 = np.floor(nose.min(axis=0)).astype(int)
    x1, y1 = np.ceil(nose.max(axis=0)).astype(int) + 1
    base = dict(width=100, height=100, duration=12, noise_sigma=0.01, seed=8)
    live = generate_synthetic_video(SynthSpec(**base))[0]
    dead_nose = generate_synthetic_video(SynthSpec(**base, dead_zones=[(x0, y0, x1, y1)]))[0]
    return live, dead_nose


def test_regions_all_pulsatile(face_videos, small_face, cfg):
    result = analyze_regions(face_videos[0], small_face, cfg)
    assert set(result.timelines) == set(REGION_NAMES)
    for tl in result.timelines.values():
        bpm = tl.column("bpm")
        assert np.all((bpm >= 70) & (bpm <= 74))
    ref = result.timelines[result.reference]
    np.testing.assert_allclose(ref.column("rho_ref"), 1.0)


def test_regions_one_non_pulsatile(face_videos, small_face, cfg):
    result = analyze_regions(face_videos[1], small_face, cfg)
    assert result.reference != "nose"
    for name, tl in result.timelines.items():
        rho = np.mean(tl.column("rho_ref"))
        assert (rho < 0.3) if name == "nose" else (rho > 0.8)


def test_regions_static_equals_per_frame(face_videos, small_face, cfg):
    seq = face_videos[1]
    static = analyze_regions(seq, small_face, cfg)
    per_frame = analyze_regions(seq, np.repeat(small_face[None], len(seq), axis=0), cfg)
    for name in REGION_NAMES:
        assert static.timelines[name].entries == per_frame.timelines[name].entries


def test_regions_per_frame_count_mismatch(face_videos, small_face, cfg):
    with pytest.raises(DimensionMismatch):
        analyze_regions(face_videos[0], np.repeat(small_face[None], 3, axis=0), cfg)


# local


def test_local_uniform_pulsatile(pulsatile_video, cfg):
    seq, _ = pulsatile_video
    result = analyze_local(seq, ref=FULL, cfg=cfg)
    assert result.level == 0 and len(result.windows) == 21
    for ms in result.windows:
        rho = ms.maps["rho_ref"]
        assert np.nanmean(rho) > 0.9
        assert np.nanvar(rho) < 0.05
        assert ms.f_hr == pytest.approx(1.2, abs=0.02)


def test_local_defined_sets_agree(half_dead_video, cfg):
    result = analyze_local(half_dead_video, ref=RIGHT, cfg=cfg)
    for ms in result.windows:
        defined = ~np.isnan(ms.maps["rho_ref"])
        for name in MAP_NAMES:
            np.testing.assert_array_equal(~np.isnan(ms.maps[name]), defined)
        rho = ms.maps["rho_ref"]
        assert np.all(np.abs(rho[defined]) <= 1.0)


def test_local_dead_rectangle(half_dead_video, cfg):
    result = analyze_local(half_dead_video, ref=RIGHT, cfg=cfg)
    mag = np.nanmean([ms.maps["magnitude"] for ms in result.windows], axis=0)
    rho = np.nanmean([ms.maps["rho_ref"] for ms in result.windows], axis=0)
    assert np.nanmean(mag[:, :30]) < 0.1 * np.nanmean(mag[:, 30:])
    assert np.nanmean(rho[:, :30]) < 0.3


def test_local_pyramid_level(cfg):
    seq, _ = generate_synthetic_video(SynthSpec(width=80, height=80, duration=10, noise_sigma=0.01, seed=1))
    result = analyze_local(seq, external_hr=1.2, cfg=cfg, target_px=400)
    assert result.level == 2
    assert (result.windows[0].height, result.windows[0].width) == (20, 20)


def test_local_deterministic_across_workers(half_dead_video, cfg):
    a = analyze_local(half_dead_video, ref=RIGHT, cfg=cfg, workers=1, chunk=500)
    b = analyze_local(half_dead_video, ref=RIGHT, cfg=cfg, workers=3, chunk=500)
    for wa, wb in zip(a.windows, b.windows):
        for name in MAP_NAMES:
            np.testing.assert_array_equal(wa.maps[name], wb.maps[name])


def test_local_single_frame(cfg):
    seq = FrameSequence(np.full((1, 8, 8, 3), 100, np.uint8), 30.0)
    with pytest.raises(TooShortRecording):
        analyze_local(seq, external_hr=1.2, cfg=cfg)


def test_local_missing_reference(pulsatile_video, cfg):
    with pytest.raises(MissingReference):
        analyze_local(pulsatile_video[0], cfg=cfg)


def test_scale_consistency(pulsatile_video, cfg):
    seq, _ = pulsatile_video
    roi, _ = analyze_global(seq, FULL, None, cfg, external_hr=1.2)
    local = analyze_local(seq, external_hr=1.2, cfg=cfg)
    local_bpm = np.nanmedian(np.stack([ms.maps["bpm"] for ms in local.windows]))
    assert np.all(np.abs(roi.column("bpm") - local_bpm) <= 2)


# post-processing


def test_minmax_normalize():
    np.testing.assert_allclose(minmax_normalize([2, 4, 3]), [0, 1, 0.5])
    np.testing.assert_array_equal(minmax_normalize([5, 5]), [0, 0])


def test_reperfusion_event_picks_pi_maximum():
    pis = [0.01, 0.01, 0.03, 0.08, 0.05]
    tl = MetricsTimeline([WindowMetrics.build(t, 1.2, 10, 1, pi=p) for t, p in enumerate(pis)])
    t_event, norm = reperfusion_event(tl)
    assert t_event == 3.0
    np.testing.assert_allclose(norm, [0, 0, 2 / 7, 1, 4 / 7])

