"""The two neural stages and everything around them: page classification
pre/post-processing, detector letterboxing, box decoding, NMS, and
cropping. Model execution itself lives behind backends.InferenceBackend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .backends import InferenceBackend
from .catalog import BoundingBox, PageLabel, PageRef, make_page_id

# Canonical ImageNet per-channel statistics; overridable via InferenceConfig.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

LETTERBOX_FILL = 114 / 255


class DecodeError(Exception):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    classifier_input: int = 224
    detector_input: int = 640
    class_threshold: float = 0.5
    recall_mode_threshold: float = 0.2  # recall-over-precision operating point
    conf_threshold: float = 0.25
    nms_iou: float = 0.45
    norm_mean: tuple[float, float, float] = IMAGENET_MEAN
    norm_std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self) -> None:
        for name in ("class_threshold", "recall_mode_threshold", "conf_threshold", "nms_iou"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must be in (0,1), got {v}")
        if self.classifier_input <= 0 or self.detector_input <= 0:
            raise ValueError("input sizes must be positive")


@dataclass(frozen=True)
class PageClassification:
    page: PageRef
    prob_art: float
    label: PageLabel
    threshold_used: float

    def to_json(self) -> dict:
        return {
            "page": self.page.to_json(),
            "prob_art": self.prob_art,
            "label": self.label.value,
            "threshold_used": self.threshold_used,
        }


@dataclass(frozen=True)
class LetterboxTransform:
    """Affine map from original-page coordinates into detector-input space."""

    scale: float
    pad_x: float
    pad_y: float
    input_size: int
    orig_width: int
    orig_height: int

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        return x * self.scale + self.pad_x, y * self.scale + self.pad_y

    def invert_point(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale


def decode_image(path: str | Path, min_side: int | None = None) -> np.ndarray:
    """Decode a page JPEG to RGB uint8.

    With min_side set, JPEG DCT-domain reduction (1/2, 1/4, 1/8) is used
    when the result still has min(h, w) >= min_side; downstream stages only
    need model-input resolution and reduced decode is several times faster.
    """
    path = Path(path)
    factor = 1
    if min_side is not None:
        try:
            from PIL import Image  # header-only peek, no pixel decode

            with Image.open(path) as im:
                w, h = im.size
        except Exception as exc:  # noqa: BLE001
            raise DecodeError(f"cannot read image header {path}: {exc}") from exc
        while factor < 8 and min(w, h) / (factor * 2) >= min_side:
            factor *= 2
    flags = {
        1: cv2.IMREAD_COLOR,
        2: cv2.IMREAD_REDUCED_COLOR_2,
        4: cv2.IMREAD_REDUCED_COLOR_4,
        8: cv2.IMREAD_REDUCED_COLOR_8,
    }[factor]
    bgr = cv2.imread(str(path), flags)
    if bgr is None:
        raise DecodeError(f"cannot decode image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def _as_float_rgb(image: np.ndarray) -> np.ndarray:
    if image.ndim != 3 or image.shape[2] != 3:
        raise DecodeError(f"expected HxWx3 image, got shape {image.shape}")
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32)


def preprocess_classify(image: np.ndarray, config: InferenceConfig = InferenceConfig()) -> np.ndarray:
    """Bilinear resize to the classifier input, scale to [0,1], normalize
    per channel, and return a channel-major (3, S, S) float32 tensor."""
    img = _as_float_rgb(image)
    size = config.classifier_input
    if img.shape[:2] != (size, size):
        img = cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)
    mean = np.asarray(config.norm_mean, dtype=np.float32)
    std = np.asarray(config.norm_std, dtype=np.float32)
    img = (img - mean) / std
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def classify_page(
    backend: InferenceBackend,
    page: PageRef,
    image: np.ndarray,
    config: InferenceConfig = InferenceConfig(),
    threshold: float | None = None,
) -> PageClassification:
    """Classify one page as illustrated or not.

    The backend emits either a raw logit or a probability (declared by its
    output_kind); a probability at or above the threshold labels the page
    `art` — the tie goes to `art` because recall is the stated priority.
    """
    if threshold is None:
        threshold = config.class_threshold
    tensor = preprocess_classify(image, config)[None, ...]
    (out,) = backend.run(tensor, keys=[make_page_id(page)])
    value = float(np.asarray(out).reshape(()))
    if backend.output_kind == "probability":
        prob = value
    else:
        prob = 1.0 / (1.0 + math.exp(-value))
    prob = min(max(prob, 0.0), 1.0)
    label = PageLabel.ART if prob >= threshold else PageLabel.NO_ART
    return PageClassification(page=page, prob_art=prob, label=label, threshold_used=threshold)


def letterbox(
    image: np.ndarray, input_size: int
) -> tuple[np.ndarray, LetterboxTransform]:
    """Aspect-preserving resize onto a gray input_size x input_size canvas.

    Returns the channel-major float tensor in [0,1] and the recorded
    transform so detections can be mapped back to page space.
    """
    if input_size % 32 != 0:
        raise ValueError(f"input_size must be divisible by 32, got {input_size}")
    img = _as_float_rgb(image)
    h, w = img.shape[:2]
    scale = input_size / max(w, h)
    new_w = max(1, round(w * scale))
    new_h = max(1, round(h * scale))
    if (new_w, new_h) != (w, h):
        img = cv2.resize(img, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    pad_x = (input_size - new_w) // 2
    pad_y = (input_size - new_h) // 2
    canvas = np.full((input_size, input_size, 3), LETTERBOX_FILL, dtype=np.float32)
    canvas[pad_y : pad_y + new_h, pad_x : pad_x + new_w] = img
    transform = LetterboxTransform(
        scale=scale,
        pad_x=float(pad_x),
        pad_y=float(pad_y),
        input_size=input_size,
        orig_width=w,
        orig_height=h,
    )
    return np.ascontiguousarray(canvas.transpose(2, 0, 1)), transform


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter_w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    inter_h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (a.area + b.area - inter)


def _nms_sort_key(box: BoundingBox):
    # confidence descending, then geometry ascending: a total order, so the
    # result is invariant to input permutation
    return (-box.confidence, box.x_min, box.y_min, box.x_max, box.y_max)


def nms(boxes: Sequence[BoundingBox], iou_thresh: float) -> list[BoundingBox]:
    """Greedy non-maximum suppression; output sorted by confidence descending."""
    kept: list[BoundingBox] = []
    for box in sorted(boxes, key=_nms_sort_key):
        if all(iou(box, k) <= iou_thresh for k in kept):
            kept.append(box)
    return kept


def decode_detections(
    raw: np.ndarray,
    transform: LetterboxTransform,
    conf_threshold: float,
    nms_iou: float = 0.45,
) -> list[BoundingBox]:
    """Turn raw (cx, cy, w, h, objectness) rows in model-input space into
    NMS-filtered page-space boxes clamped to page bounds."""
    rows = np.asarray(raw, dtype=np.float64).reshape(-1, 5)
    boxes: list[BoundingBox] = []
    for cx, cy, w, h, obj in rows:
        if obj < conf_threshold or w <= 0 or h <= 0:
            continue
        x0, y0 = transform.invert_point(cx - w / 2, cy - h / 2)
        x1, y1 = transform.invert_point(cx + w / 2, cy + h / 2)
        try:
            box = BoundingBox(x0, y0, x1, y1, confidence=float(min(max(obj, 0.0), 1.0)))
        except Exception:  # noqa: BLE001 - degenerate after inversion
            continue
        clamped = box.clamped(transform.orig_width, transform.orig_height)
        if clamped is not None:
            boxes.append(clamped)
    return nms(boxes, nms_iou)


def detect_page(
    backend: InferenceBackend,
    page: PageRef,
    image: np.ndarray,
    config: InferenceConfig = InferenceConfig(),
) -> list[BoundingBox]:
    tensor, transform = letterbox(image, config.detector_input)
    (raw,) = backend.run(tensor[None, ...], keys=[make_page_id(page)])
    return decode_detections(raw, transform, config.conf_threshold, config.nms_iou)


def crop_illustrations(
    page_image: np.ndarray, boxes: Sequence[BoundingBox]
) -> list[tuple[np.ndarray, BoundingBox]]:
    """Pixel-exact sub-images for each box, in box order."""
    h, w = page_image.shape[:2]
    crops = []
    for box in boxes:
        x0 = max(0, int(math.floor(box.x_min)))
        y0 = max(0, int(math.floor(box.y_min)))
        x1 = min(w, int(math.ceil(box.x_max)))
        y1 = min(h, int(math.ceil(box.y_max)))
        if x1 <= x0 or y1 <= y0:
            continue
        crops.append((page_image[y0:y1, x0:x1].copy(), box))
    return crops


def save_crop(path: str | Path, crop_rgb: np.ndarray, quality: int = 90) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ok = cv2.imwrite(str(path), cv2.cvtColor(crop_rgb, cv2.COLOR_RGB2BGR),
                     [cv2.IMWRITE_JPEG_QUALITY, quality])
    if not ok:
        raise IOError(f"failed to write crop {path}")
