"""Rebalancing, splitting, and YOLO annotation round trips."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codexforge.catalog import BoundingBox, PageLabel, PageRef
from codexforge.dataset_tools import (
    BadFractions,
    BoxAnnotation,
    LabeledPage,
    MalformedAnnotationLine,
    NotEnoughNegatives,
    SplitAssignment,
    read_label_manifest,
    read_yolo_annotations,
    rebalance,
    split,
    write_label_manifest,
    write_yolo_annotations,
)


def _pages(n_art, n_noart, seed=0):
    rng = random.Random(seed)
    labels = [PageLabel.ART] * n_art + [PageLabel.NO_ART] * n_noart
    rng.shuffle(labels)
    return [
        LabeledPage(PageRef("vat", "lat", f"ms{i // 1000:03d}", i % 1000 + 1), label)
        for i, label in enumerate(labels)
    ]


class TestRebalance:
    def test_downsampling_arithmetic(self):
        pages = _pages(1173, 20000 - 1173)
        kept = rebalance(pages, drop_negatives=9000, seed=7)
        assert len(kept) == 11000
        positives = sum(1 for p in kept if p.label == PageLabel.ART)
        assert positives == 1173
        assert abs(positives / len(kept) - 0.1066) < 1e-4

    def test_drop_zero_is_identity(self):
        pages = _pages(5, 5)
        assert rebalance(pages, 0, seed=1) == pages

    def test_all_positive_rejects_drop(self):
        pages = _pages(4, 0)
        with pytest.raises(NotEnoughNegatives):
            rebalance(pages, 1, seed=1)

    def test_never_drops_a_positive_and_preserves_order(self):
        pages = _pages(40, 160, seed=3)
        for seed in range(25):
            kept = rebalance(pages, 100, seed=seed)
            assert sum(1 for p in kept if p.label == PageLabel.ART) == 40
            # survivors appear in their original relative order
            positions = [pages.index(p) for p in kept]
            assert positions == sorted(positions)

    def test_seed_determinism(self):
        pages = _pages(10, 90)
        assert rebalance(pages, 30, seed=5) == rebalance(pages, 30, seed=5)
        assert rebalance(pages, 30, seed=5) != rebalance(pages, 30, seed=6)


class TestSplit:
    def test_sizes_11000(self):
        pages = _pages(1173, 9827)
        parts = split(pages, seed=11)
        assert len(parts.train) == 7700
        assert len(parts.val) == 2200
        assert len(parts.test) == 1100

    def test_sizes_10(self):
        parts = split(_pages(3, 7), seed=2)
        assert (len(parts.train), len(parts.val), len(parts.test)) == (7, 2, 1)

    def test_is_partition(self):
        pages = _pages(30, 70)
        parts = split(pages, seed=4)
        union = parts.train | parts.val | parts.test
        assert union == {p.page for p in pages}
        assert not (parts.train & parts.val)
        assert not (parts.train & parts.test)
        assert not (parts.val & parts.test)

    def test_stratified_counts_within_one(self):
        pages = _pages(117, 883)
        parts = split(pages, seed=9)
        art = {p.page for p in pages if p.label == PageLabel.ART}
        for bucket, frac in zip((parts.train, parts.val, parts.test), (0.7, 0.2, 0.1)):
            assert abs(len(bucket & art) - frac * 117) <= 1

    def test_determinism(self):
        pages = _pages(20, 80)
        assert split(pages, seed=42) == split(pages, seed=42)

    def test_bad_fractions(self):
        with pytest.raises(BadFractions):
            split(_pages(2, 8), fractions=(0.5, 0.4, 0.2))

    def test_artifact_round_trip(self, tmp_path):
        parts = split(_pages(5, 15), seed=3)
        path = tmp_path / "split.json"
        parts.save(path)
        import json

        loaded = SplitAssignment.from_json(json.loads(path.read_text()))
        assert loaded == parts


class TestYoloAnnotations:
    def test_full_image_box(self, tmp_path):
        f = tmp_path / "a.txt"
        f.write_text("0 0.5 0.5 1.0 1.0\n")
        (ann,) = read_yolo_annotations(f)
        box = ann.to_pixel_box(100, 200)
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (0, 0, 100, 200)

    def test_offset_box_arithmetic(self, tmp_path):
        f = tmp_path / "a.txt"
        f.write_text("0 0.25 0.25 0.1 0.2\n")
        (ann,) = read_yolo_annotations(f)
        box = ann.to_pixel_box(640, 640)
        # cx=160, cy=160, w=64, h=128
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (128, 96, 192, 224)

    def test_short_line_reports_line_number(self, tmp_path):
        f = tmp_path / "a.txt"
        f.write_text("0 0.5 0.5 1.0 1.0\n0 0.5\n")
        with pytest.raises(MalformedAnnotationLine) as info:
            read_yolo_annotations(f)
        assert info.value.line_number == 2

    def test_out_of_range_rejected(self, tmp_path):
        f = tmp_path / "a.txt"
        f.write_text("0 0.9 0.5 0.5 0.5\n")  # right edge at 1.15
        with pytest.raises(MalformedAnnotationLine):
            read_yolo_annotations(f)

    def test_round_trip_many_random_boxes(self, tmp_path):
        rng = random.Random(99)
        annotations = []
        while len(annotations) < 10_000:
            w = rng.uniform(0.01, 1.0)
            h = rng.uniform(0.01, 1.0)
            cx = rng.uniform(w / 2, 1 - w / 2)
            cy = rng.uniform(h / 2, 1 - h / 2)
            annotations.append(BoxAnnotation(0, cx, cy, w, h))
        f = tmp_path / "many.txt"
        write_yolo_annotations(f, annotations)
        loaded = read_yolo_annotations(f)
        assert len(loaded) == len(annotations)
        for a, b in zip(annotations, loaded):
            for field_name in ("cx", "cy", "w", "h"):
                assert abs(getattr(a, field_name) - getattr(b, field_name)) <= 1e-6
            # pixel conversion round trip stays within half a pixel
            box = b.to_pixel_box(1000, 800)
            back = BoxAnnotation.from_pixel_box(box, 1000, 800)
            assert abs(back.cx - b.cx) * 1000 <= 0.5
            assert abs(back.cy - b.cy) * 800 <= 0.5

    @given(
        cls=st.integers(0, 3),
        cx=st.floats(0.3, 0.7),
        cy=st.floats(0.3, 0.7),
        w=st.floats(0.05, 0.5),
        h=st.floats(0.05, 0.5),
    )
    @settings(max_examples=60, deadline=None)
    def test_write_read_identity_property(self, tmp_path_factory, cls, cx, cy, w, h):
        ann = BoxAnnotation(cls, cx, cy, w, h)
        f = tmp_path_factory.mktemp("yolo") / "a.txt"
        write_yolo_annotations(f, [ann])
        (back,) = read_yolo_annotations(f)
        assert back.class_id == cls
        for name in ("cx", "cy", "w", "h"):
            assert abs(getattr(back, name) - getattr(ann, name)) <= 1e-6


class TestLabelManifest:
    def test_csv_round_trip(self, tmp_path):
        pages = _pages(3, 4)
        path = tmp_path / "labels.csv"
        write_label_manifest(path, pages)
        loaded = read_label_manifest(path)
        assert loaded == pages
