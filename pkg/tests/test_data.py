import colorsys
import hashlib
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transferdet.boxes import BoxAnnotation, iou
from transferdet.data import (AnnotatedImage, AugmentationConfig, SyntheticSceneSpec, augment,
                              choose_input_dim, compose_batch, generate_synthetic_dataset,
                              generate_synthetic_scene, hue_shift, parse_annotation_line,
                              read_manifest)
from transferdet.data.augment import (apply_crop, augment_with_params, hflip, hsv_adjust,
                                      input_dim_candidates, retained_fraction)
from transferdet.errors import ConfigurationError, DataError


def _sample(boxes=None, seed=0, size=64):
    rng = np.random.default_rng(seed)
    boxes = boxes if boxes is not None else [BoxAnnotation(1, 0.3, 0.4, 0.2, 0.3),
                                             BoxAnnotation(0, 0.7, 0.6, 0.3, 0.25)]
    return AnnotatedImage(rng.uniform(size=(3, size, size)).astype(np.float32), boxes)


# annotation lines ----------------------------------------------------------------

def test_parse_line():
    b = parse_annotation_line("3 0.5 0.5 0.25 0.25")
    assert (b.class_id, b.cx, b.cy, b.w, b.h) == (3, 0.5, 0.5, 0.25, 0.25)


@pytest.mark.parametrize("text, msg", [
    ("0 0.5 0.5 1.5 0.2", "outside"),
    ("1 0.5", "fields"),
    ("a 0.5 0.5 0.2 0.2", "numeric"),
    ("0 0.5 0.5 0.0 0.2", "outside"),
    ("0 1.2 0.5 0.2 0.2", "outside"),
    ("0 0.5 0.5 nan 0.2", "finite"),
])
def test_parse_line_errors(text, msg):
    with pytest.raises(DataError, match=msg):
        parse_annotation_line(text)


def test_parse_error_carries_line_number(tmp_path):
    from transferdet.data.annotations import read_label_file
    p = tmp_path / "x.txt"
    p.write_text("0 0.5 0.5 0.2 0.2\n1 0.5\n")
    with pytest.raises(DataError, match="line 2"):
        read_label_file(p)


def test_hard_negative_cannot_carry_boxes():
    with pytest.raises(DataError):
        AnnotatedImage(np.zeros((3, 4, 4), np.float32), [BoxAnnotation(0, 0.5, 0.5, 0.2, 0.2)], True)


# augmentation --------------------------------------------------------------------

def test_identity_config_is_identity():
    s = _sample()
    out = augment(s, AugmentationConfig.identity(), np.random.default_rng(3))
    assert np.array_equal(out.pixels, s.pixels)
    assert out.boxes == s.boxes


def test_forced_flip():
    s = _sample([BoxAnnotation(0, 0.3, 0.5, 0.2, 0.4)])
    cfg = AugmentationConfig(scale_jitter=0, hflip_prob=1.0, hue_delta=0, sat_exposure_factor=1.0,
                             annotation_jitter=0)
    out = augment(s, cfg, np.random.default_rng(0))
    b = out.boxes[0]
    assert b.cx == pytest.approx(0.7) and (b.w, b.h) == (0.2, 0.4)
    assert np.array_equal(out.pixels, s.pixels[:, :, ::-1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_flip_is_involution(seed):
    rng = np.random.default_rng(seed)
    boxes = [BoxAnnotation(0, *rng.uniform(0.3, 0.7, 2), *rng.uniform(0.1, 0.5, 2))]
    s = _sample(boxes, seed)
    twice = hflip(hflip(s))
    assert np.array_equal(twice.pixels, s.pixels)
    for a, b in zip(twice.boxes, s.boxes):
        assert a.cx == pytest.approx(b.cx, abs=1e-15) and (a.cy, a.w, a.h) == (b.cy, b.w, b.h)


def test_retention_over_random_augmentations():
    s = _sample()
    cfg = AugmentationConfig()
    rng = np.random.default_rng(11)
    worst = 1.0
    for _ in range(2000):
        _, params = augment_with_params(s, cfg, rng)
        for b in s.boxes:
            worst = min(worst, retained_fraction(b, params.crop, s.width, s.height))
    assert worst >= 0.80


def test_crop_renormalises_boxes():
    s = _sample([BoxAnnotation(0, 0.5, 0.5, 0.5, 0.5)], size=100)
    out = apply_crop(s, (25, 25, 75, 75))
    b = out.boxes[0]
    assert (out.width, out.height) == (50, 50)
    assert (b.cx, b.cy, b.w, b.h) == pytest.approx((0.5, 0.5, 1.0, 1.0))
    padded = apply_crop(s, (-10, 0, 100, 100))
    assert padded.width == 110 and np.all(padded.pixels[:, :, :10] == 0.5)
    assert padded.boxes[0].cx == pytest.approx(60 / 110)


def test_hue_zero_is_identity():
    px = np.random.default_rng(1).uniform(size=(3, 8, 8)).astype(np.float32)
    assert np.max(np.abs(hue_shift(px, 0.0) - px)) < 1e-6
    assert np.max(np.abs(hsv_adjust(px, 1e-9) - px)) < 1e-5


@pytest.mark.parametrize("delta", [-0.1, -0.03, 0.05, 0.1])
def test_hue_gray_unchanged(delta):
    px = np.full((3, 2, 2), 0.37, np.float32)
    np.testing.assert_allclose(hue_shift(px, delta), px, atol=1e-6)


def test_hue_wraps():
    r, g, b = colorsys.hsv_to_rgb(0.95, 0.8, 0.9)
    px = np.array([r, g, b], np.float32).reshape(3, 1, 1)
    out = hue_shift(px, 0.08)[:, 0, 0]
    h, s, v = colorsys.rgb_to_hsv(*map(float, out))
    assert h == pytest.approx(0.03, abs=1e-4)
    assert (s, v) == pytest.approx((0.8, 0.9), abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_hsv_outputs_stay_in_range(seed):
    rng = np.random.default_rng(seed)
    px = rng.uniform(size=(3, 6, 6)).astype(np.float32)
    out = hsv_adjust(px, rng.uniform(-0.1, 0.1), rng.uniform(1 / 1.5, 1.5), rng.uniform(1 / 1.5, 1.5))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_augment_params_within_ranges():
    s = _sample()
    rng = np.random.default_rng(5)
    for _ in range(500):
        _, p = augment_with_params(s, AugmentationConfig(), rng)
        assert -0.1 <= p.hue <= 0.1
        for f in (p.saturation, p.exposure):
            assert 1 / 1.5 - 1e-12 <= f <= 1.5


def test_input_dim_candidates():
    assert input_dim_candidates(416) == [320, 352, 384, 416, 448, 480, 512]
    assert input_dim_candidates(416, 0.0) == [416]
    assert all(choose_input_dim(416, 0.0, rng=np.random.default_rng(k)) == 416 for k in range(20))


def test_choose_input_dim_frequencies():
    rng = np.random.default_rng(0)
    counts = Counter(choose_input_dim(416, rng=rng) for _ in range(10_000))
    assert set(counts) == {320, 352, 384, 416, 448, 480, 512}
    # uniform: each of 7 candidates near 10000/7
    assert all(abs(c - 10_000 / 7) < 150 for c in counts.values())


def test_choose_input_dim_empty_returns_base():
    assert choose_input_dim(40, 0.1, 32, np.random.default_rng(0)) == 40


# batches -------------------------------------------------------------------------

def _mixed_dataset(pos, neg):
    img = np.zeros((3, 8, 8), np.float32)
    data = [AnnotatedImage(img, [BoxAnnotation(0, 0.5, 0.5, 0.5, 0.5)]) for _ in range(pos)]
    data += [AnnotatedImage(img, [], True) for _ in range(neg)]
    return data


def test_batch_cap_on_half_negative_dataset():
    data = _mixed_dataset(50, 50)
    rng = np.random.default_rng(0)
    most = 0
    for _ in range(1000):
        batch = compose_batch(data, 64, 0.25, rng)
        assert len(batch) == 64
        most = max(most, sum(b.is_hard_negative for b in batch))
    assert most == 16


def test_batch_without_negatives_is_all_positive():
    batch = compose_batch(_mixed_dataset(5, 0), 32, 0.25, np.random.default_rng(1))
    assert not any(b.is_hard_negative for b in batch)


def test_batch_errors():
    with pytest.raises(ConfigurationError):
        compose_batch(_mixed_dataset(0, 4), 8)
    with pytest.raises(ConfigurationError):
        compose_batch([], 8)


def test_batch_independent_of_threads():
    data = [_sample(seed=k) for k in range(6)]
    cfg = AugmentationConfig()
    a = compose_batch(data, 8, rng=np.random.default_rng(4), augment_cfg=cfg, threads=1)
    b = compose_batch(data, 8, rng=np.random.default_rng(4), augment_cfg=cfg, threads=3)
    assert all(np.array_equal(x.pixels, y.pixels) and x.boxes == y.boxes for x, y in zip(a, b))


# synthetic scenes ----------------------------------------------------------------

def test_scene_deterministic():
    spec = SyntheticSceneSpec(num_boxes=2, class_ids=(0, 1), num_distractors=1, seed=42)
    a, b = generate_synthetic_scene(spec), generate_synthetic_scene(spec)
    assert np.array_equal(a.pixels, b.pixels) and a.boxes == b.boxes


def test_scene_zero_case():
    s = generate_synthetic_scene(SyntheticSceneSpec(num_boxes=0, seed=3))
    assert s.boxes == [] and s.is_hard_negative
    assert s.pixels.shape == (3, 96, 96)


@pytest.mark.parametrize("seed", range(20))
def test_scene_boxes_inside_and_apart(seed):
    spec = SyntheticSceneSpec(width=256, height=256, num_boxes=3, class_ids=(0, 1, 2), seed=seed)
    s = generate_synthetic_scene(spec)
    assert len(s.boxes) == 3
    for b in s.boxes:
        assert b.cx - b.w / 2 >= 0 and b.cx + b.w / 2 <= 1 + 1e-12
        assert b.cy - b.h / 2 >= 0 and b.cy + b.h / 2 <= 1 + 1e-12
    for i in range(3):
        for j in range(i + 1, 3):
            assert iou(s.boxes[i].box, s.boxes[j].box) < 0.3


def test_scene_overcrowded_places_fewer(caplog):
    spec = SyntheticSceneSpec(width=32, height=32, num_boxes=12, size_range=(0.5, 0.6), seed=1)
    s = generate_synthetic_scene(spec)
    assert 0 < len(s.boxes) < 12
    assert "placed only" in caplog.text


def test_dataset_exact_counts(tmp_path):
    m = generate_synthetic_dataset({"classA": 15}, SyntheticSceneSpec(num_boxes=2), tmp_path, seed=3)
    assert len(m) == 15
    for i in range(15):
        lines = m.label_path(i).read_text().splitlines()
        assert lines and all(l.split()[0] == "0" for l in lines)
    assert (tmp_path / "classes.names").read_text() == "classA\n"


def test_dataset_empty(tmp_path):
    m = generate_synthetic_dataset({}, SyntheticSceneSpec(), tmp_path / "d")
    assert len(m) == 0 and not (tmp_path / "d").exists()


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_dataset_regeneration_identical(tmp_path):
    spec = SyntheticSceneSpec(num_boxes=2, num_distractors=1)
    generate_synthetic_dataset({"a": 3, "b": 2}, spec, tmp_path / "x", seed=5, hard_negatives=2)
    generate_synthetic_dataset({"a": 3, "b": 2}, spec, tmp_path / "y", seed=5, hard_negatives=2)
    assert _tree_digest(tmp_path / "x") == _tree_digest(tmp_path / "y")


def test_train_and_val_splits_disjoint(tmp_path):
    spec = SyntheticSceneSpec(num_boxes=1)
    tr = generate_synthetic_dataset({"a": 5}, spec, tmp_path, seed=1, split="train").load_all()
    va = generate_synthetic_dataset({"a": 5}, spec, tmp_path, seed=1, split="val").load_all()
    assert not any(np.array_equal(a.pixels, b.pixels) for a in tr for b in va)


def test_manifest_round_trip(tmp_path):
    spec = SyntheticSceneSpec(num_boxes=2, class_ids=(0, 1))
    written = generate_synthetic_dataset({"a": 4, "b": 3}, spec, tmp_path, seed=2, hard_negatives=2)
    m = read_manifest(tmp_path / "train.txt")
    assert m.class_names == ["a", "b"]
    assert [p.resolve() for p in m.image_paths] == [p.resolve() for p in written.image_paths]
    from transferdet.data.synthetic import generate_hard_negatives, generate_scenes
    expected = []
    for k in range(2):
        expected += [s.boxes for s in generate_scenes(spec, (4, 3)[k], 2, "train", k)]
    expected += [[] for _ in generate_hard_negatives(spec, 2, 2, "train")]
    loaded = m.load_all()
    assert [im.boxes for im in loaded] == expected
    assert sum(im.is_hard_negative for im in loaded) == 2


def test_missing_label_file_is_hard_negative(tmp_path):
    from transferdet.data.annotations import save_image
    save_image(tmp_path / "a.png", np.zeros((3, 4, 4), np.float32))
    (tmp_path / "m.txt").write_text("a.png\n")
    im = read_manifest(tmp_path / "m.txt").load(0)
    assert im.is_hard_negative and im.boxes == []


def test_missing_image_is_data_error(tmp_path):
    (tmp_path / "m.txt").write_text("nope.png\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "m.txt").load(0)
