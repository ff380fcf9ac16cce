"""Pre/post-processing around the classifier and detector."""

import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codexforge.backends import ModelIoError, StubBackend, load_backend
from codexforge.catalog import BoundingBox, PageLabel, PageRef
from codexforge.inference import (
    InferenceConfig,
    LetterboxTransform,
    classify_page,
    crop_illustrations,
    decode_detections,
    decode_image,
    iou,
    letterbox,
    nms,
    preprocess_classify,
)

PAGE = PageRef("vat", "lat", "ms001", 1)


def reference_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Textbook bilinear resampling with the half-pixel-center convention.

    Independent oracle for the fast resize path: per output pixel, gather
    the four neighbors and blend. No anti-aliasing, matching plain
    bilinear interpolation.
    """
    in_h, in_w = img.shape[:2]
    sy, sx = in_h / out_h, in_w / out_w
    out = np.empty((out_h, out_w, img.shape[2]), dtype=np.float64)
    for oy in range(out_h):
        src_y = (oy + 0.5) * sy - 0.5
        y0 = min(max(int(math.floor(src_y)), 0), in_h - 1)
        y1 = min(y0 + 1, in_h - 1)
        wy = min(max(src_y - y0, 0.0), 1.0)
        for ox in range(out_w):
            src_x = (ox + 0.5) * sx - 0.5
            x0 = min(max(int(math.floor(src_x)), 0), in_w - 1)
            x1 = min(x0 + 1, in_w - 1)
            wx = min(max(src_x - x0, 0.0), 1.0)
            top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
            bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
            out[oy, ox] = top * (1 - wy) + bot * wy
    return out


class TestPreprocessClassify:
    def test_mid_gray_with_half_normalization_is_zero(self):
        config = InferenceConfig(norm_mean=(0.5, 0.5, 0.5), norm_std=(0.5, 0.5, 0.5))
        image = np.full((224, 224, 3), 0.5, dtype=np.float32)
        tensor = preprocess_classify(image, config)
        assert tensor.shape == (3, 224, 224)
        assert np.abs(tensor).max() < 1e-6

    def test_output_shape_from_larger_input(self):
        image = np.random.default_rng(0).integers(0, 256, (448, 448, 3), dtype=np.uint8)
        tensor = preprocess_classify(np.asarray(image, dtype=np.uint8))
        assert tensor.shape == (3, 224, 224)
        assert tensor.dtype == np.float32

    def test_upscale_matches_reference_resampler(self):
        rng = np.random.default_rng(42)
        pattern = rng.random((2, 2, 3)).astype(np.float32)
        config = InferenceConfig(norm_mean=(0, 0, 0), norm_std=(1, 1, 1),
                                 classifier_input=224)
        tensor = preprocess_classify(pattern, config)
        expected = reference_bilinear(pattern.astype(np.float64), 224, 224)
        assert np.abs(tensor.transpose(1, 2, 0) - expected).max() < 1e-3

    def test_downscale_matches_reference_resampler(self):
        rng = np.random.default_rng(7)
        image = rng.random((30, 20, 3)).astype(np.float32)
        config = InferenceConfig(norm_mean=(0, 0, 0), norm_std=(1, 1, 1),
                                 classifier_input=12)
        tensor = preprocess_classify(image, config)
        expected = reference_bilinear(image.astype(np.float64), 12, 12)
        assert np.abs(tensor.transpose(1, 2, 0) - expected).max() < 1e-3


def _stub(tmp_path, kind="classifier", output_kind="logit", outputs=None, default=None):
    sidecar = tmp_path / f"{kind}.json"
    sidecar.write_text(json.dumps(
        {"kind": kind, "output_kind": output_kind, "outputs": outputs or {}, "default": default}
    ))
    return load_backend(sidecar, kind)


class TestClassifyPage:
    def test_logit_zero_ties_to_art(self, tmp_path):
        backend = _stub(tmp_path, output_kind="logit", default=0.0)
        image = np.zeros((32, 32, 3), dtype=np.uint8)
        result = classify_page(backend, PAGE, image)
        assert result.prob_art == pytest.approx(0.5)
        assert result.label == PageLabel.ART  # tie goes to art

    def test_prob_above_recall_threshold(self, tmp_path):
        backend = _stub(tmp_path, output_kind="probability", default=0.3)
        image = np.zeros((32, 32, 3), dtype=np.uint8)
        result = classify_page(backend, PAGE, image, threshold=0.2)
        assert result.label == PageLabel.ART

    def test_prob_below_default_threshold(self, tmp_path):
        backend = _stub(tmp_path, output_kind="probability", default=0.3)
        image = np.zeros((32, 32, 3), dtype=np.uint8)
        result = classify_page(backend, PAGE, image, threshold=0.5)
        assert result.label == PageLabel.NO_ART

    def test_keyed_stub_output(self, tmp_path):
        backend = _stub(tmp_path, output_kind="probability",
                        outputs={"vat_lat_ms001_p00001": 0.9}, default=0.1)
        image = np.zeros((32, 32, 3), dtype=np.uint8)
        assert classify_page(backend, PAGE, image).prob_art == pytest.approx(0.9)

    def test_monotone_logit_transform_preserves_ranking(self, tmp_path):
        rng = random.Random(5)
        logits = {f"vat_lat_ms001_p{i:05d}": rng.uniform(-4, 4) for i in range(1, 21)}
        scaled = {k: 2.5 * v + 1.0 for k, v in logits.items()}
        image = np.zeros((16, 16, 3), dtype=np.uint8)

        def ranking(outputs):
            backend = _stub(tmp_path, output_kind="logit", outputs=outputs)
            probs = {}
            for i in range(1, 21):
                page = PageRef("vat", "lat", "ms001", i)
                probs[i] = classify_page(backend, page, image).prob_art
            return sorted(probs, key=lambda i: probs[i])

        assert ranking(logits) == ranking(scaled)


class TestLetterbox:
    def test_identity_when_already_square(self):
        image = np.random.default_rng(1).random((640, 640, 3)).astype(np.float32)
        tensor, t = letterbox(image, 640)
        assert t.scale == 1.0 and t.pad_x == 0 and t.pad_y == 0
        assert tensor.shape == (3, 640, 640)

    def test_wide_image_arithmetic(self):
        image = np.zeros((100, 200, 3), dtype=np.uint8)  # 200 wide, 100 high
        _, t = letterbox(image, 640)
        assert t.scale == pytest.approx(3.2)
        assert t.pad_x == 0
        assert t.pad_y == 160

    def test_padding_value(self):
        image = np.ones((100, 200, 3), dtype=np.float32)
        tensor, t = letterbox(image, 640)
        assert tensor[0, 0, 0] == pytest.approx(114 / 255)
        assert tensor[0, 320, 320] == pytest.approx(1.0)

    def test_round_trip_within_half_pixel(self):
        rng = random.Random(3)
        for h, w in [(123, 457), (1000, 700), (33, 33)]:
            image = np.zeros((h, w, 3), dtype=np.uint8)
            _, t = letterbox(image, 640)
            for _ in range(20):
                x = rng.uniform(0, w)
                y = rng.uniform(0, h)
                lx, ly = t.apply_point(x, y)
                bx, by = t.invert_point(lx, ly)
                assert abs(bx - x) <= 0.5 and abs(by - y) <= 0.5

    def test_size_must_be_multiple_of_32(self):
        with pytest.raises(ValueError):
            letterbox(np.zeros((10, 10, 3), dtype=np.uint8), 100)


class TestIou:
    def test_identical(self):
        a = BoundingBox(0, 0, 10, 10)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) == 0.0

    def test_quarter_overlap_matches_pixel_counting(self):
        a = BoundingBox(0, 0, 10, 10)
        b = BoundingBox(5, 5, 15, 15)
        # pixel-counting oracle on the integer grid
        cells_a = {(x, y) for x in range(0, 10) for y in range(0, 10)}
        cells_b = {(x, y) for x in range(5, 15) for y in range(5, 15)}
        expected = len(cells_a & cells_b) / len(cells_a | cells_b)
        assert iou(a, b) == pytest.approx(expected)
        assert iou(a, b) == pytest.approx(25 / 175)

    def test_symmetry(self):
        a = BoundingBox(0, 0, 7, 3)
        b = BoundingBox(2, 1, 9, 8)
        assert iou(a, b) == pytest.approx(iou(b, a))


class TestNms:
    def test_single_box(self):
        box = BoundingBox(0, 0, 10, 10, 0.7)
        assert nms([box], 0.45) == [box]

    def test_duplicate_suppressed(self):
        hi = BoundingBox(0, 0, 10, 10, 0.9)
        lo = BoundingBox(0, 0, 10, 10, 0.8)
        # exhaustive 2-box oracle: IoU=1 > 0.45, keep only the higher one
        assert nms([lo, hi], 0.45) == [hi]

    def test_disjoint_kept(self):
        a = BoundingBox(0, 0, 10, 10, 0.9)
        b = BoundingBox(20, 20, 30, 30, 0.6)
        assert nms([b, a], 0.45) == [a, b]

    def test_output_is_subset_with_low_pairwise_iou(self):
        rng = random.Random(11)
        boxes = []
        for _ in range(40):
            x = rng.uniform(0, 80)
            y = rng.uniform(0, 80)
            boxes.append(BoundingBox(x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20),
                                     round(rng.uniform(0.05, 0.99), 3)))
        kept = nms(boxes, 0.3)
        assert all(k in boxes for k in kept)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert iou(a, b) <= 0.3

    @given(st.randoms(use_true_random=False))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariance(self, rnd):
        boxes = []
        for _ in range(12):
            x = rnd.uniform(0, 50)
            y = rnd.uniform(0, 50)
            boxes.append(BoundingBox(x, y, x + rnd.uniform(2, 15), y + rnd.uniform(2, 15),
                                     round(rnd.uniform(0.1, 0.9), 2)))
        shuffled = list(boxes)
        rnd.shuffle(shuffled)
        assert nms(boxes, 0.4) == nms(shuffled, 0.4)


def _identity_transform(size=640):
    return LetterboxTransform(scale=1.0, pad_x=0.0, pad_y=0.0, input_size=size,
                              orig_width=size, orig_height=size)


class TestDecodeDetections:
    def test_below_threshold_is_empty(self):
        raw = np.array([[320, 320, 100, 50, 0.1]])
        assert decode_detections(raw, _identity_transform(), 0.25) == []

    def test_center_size_arithmetic(self):
        raw = np.array([[320, 320, 100, 50, 0.9]])
        (box,) = decode_detections(raw, _identity_transform(), 0.25)
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (270, 295, 370, 345)
        assert box.confidence == pytest.approx(0.9)

    def test_clamped_to_page(self):
        raw = np.array([[630, 320, 100, 50, 0.9]])
        (box,) = decode_detections(raw, _identity_transform(), 0.25)
        assert box.x_max == 640
        assert box.x_min == pytest.approx(580)

    def test_letterbox_inversion(self):
        image = np.zeros((100, 200, 3), dtype=np.uint8)
        _, t = letterbox(image, 640)
        # a page-space box mapped into input space and decoded back
        page_box = (20.0, 30.0, 120.0, 80.0)
        x0, y0 = t.apply_point(page_box[0], page_box[1])
        x1, y1 = t.apply_point(page_box[2], page_box[3])
        raw = np.array([[(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0, 0.8]])
        (box,) = decode_detections(raw, t, 0.25)
        for got, want in zip((box.x_min, box.y_min, box.x_max, box.y_max), page_box):
            assert abs(got - want) <= 0.5

    def test_nms_applied_after_decode(self):
        raw = np.array([
            [320, 320, 100, 50, 0.9],
            [320, 320, 100, 50, 0.8],
        ])
        assert len(decode_detections(raw, _identity_transform(), 0.25, nms_iou=0.45)) == 1


class TestCropIllustrations:
    def test_full_page_box_is_identity(self):
        image = np.random.default_rng(2).integers(0, 256, (50, 40, 3), dtype=np.uint8)
        ((crop, _),) = crop_illustrations(image, [BoundingBox(0, 0, 40, 50)])
        assert np.array_equal(crop, image)

    def test_sub_image_pixels_match_source(self):
        image = np.random.default_rng(3).integers(0, 256, (80, 60, 3), dtype=np.uint8)
        ((crop, _),) = crop_illustrations(image, [BoundingBox(10, 10, 20, 20)])
        assert crop.shape == (10, 10, 3)
        assert np.array_equal(crop, image[10:20, 10:20])

    def test_zero_boxes(self):
        image = np.zeros((10, 10, 3), dtype=np.uint8)
        assert crop_illustrations(image, []) == []

    def test_order_matches_boxes(self):
        image = np.random.default_rng(4).integers(0, 256, (100, 100, 3), dtype=np.uint8)
        boxes = [BoundingBox(0, 0, 10, 10, 0.5), BoundingBox(50, 50, 70, 70, 0.9)]
        crops = crop_illustrations(image, boxes)
        assert [c[1] for c in crops] == boxes


class TestStubBackend:
    def test_missing_key_without_default_raises(self, tmp_path):
        backend = _stub(tmp_path, outputs={"known": 1.0})
        with pytest.raises(ModelIoError):
            backend.run(np.zeros((1, 3, 8, 8), dtype=np.float32), keys=["unknown"])

    def test_detector_rows_shape(self, tmp_path):
        backend = _stub(tmp_path, kind="detector",
                        outputs={"k": [[10, 10, 5, 5, 0.9], [50, 50, 9, 9, 0.4]]}, default=[])
        (rows,) = backend.run(np.zeros((1, 3, 8, 8), dtype=np.float32), keys=["k"])
        assert rows.shape == (2, 5)
        (empty,) = backend.run(np.zeros((1, 3, 8, 8), dtype=np.float32), keys=["other"])
        assert empty.shape == (0, 5)

    def test_unsupported_extension(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"\x00")
        with pytest.raises(ModelIoError):
            load_backend(path)


class TestDecodeImage:
    def test_decode_and_reduction(self, tmp_path):
        import cv2

        rng = np.random.default_rng(5)
        image = rng.integers(0, 256, (400, 300, 3), dtype=np.uint8)
        path = tmp_path / "page.jpg"
        cv2.imwrite(str(path), cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
        full = decode_image(path)
        assert full.shape == (400, 300, 3)
        reduced = decode_image(path, min_side=100)
        assert reduced.shape == (200, 150, 3)

    def test_missing_file(self, tmp_path):
        from codexforge.inference import DecodeError

        with pytest.raises(DecodeError):
            decode_image(tmp_path / "nope.jpg", min_side=100)
