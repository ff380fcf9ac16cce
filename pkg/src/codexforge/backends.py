"""Model execution backends.

Exported model graphs run behind one narrow interface so the pipeline is
testable without GPUs or real weights: a deterministic stub backend reads
canned outputs from a JSON sidecar, and an ONNX Runtime backend loads
portable graph files when the runtime is installed.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np


class ModelIoError(Exception):
    pass


class ShapeMismatch(Exception):
    pass


class InferenceBackend(Protocol):
    """Runs an exported model on a CHW float batch.

    run() returns one array per sample: classifiers a scalar, detectors an
    (M, 5) row tensor (cx, cy, w, h, objectness) in model-input space,
    encoders a 1-D embedding. `keys` carry page/record ids so canned stub
    outputs can be looked up; real backends ignore them.
    """

    kind: str  # classifier | detector | encoder
    output_kind: str  # logit | probability | raw

    def run(
        self, batch: np.ndarray, keys: Sequence[str] | None = None
    ) -> list[np.ndarray]: ...


_VALID_KINDS = ("classifier", "detector", "encoder")


class StubBackend:
    """Deterministic canned-output backend.

    Sidecar schema:
        {"kind": "classifier", "output_kind": "probability",
         "outputs": {"<key>": 0.9, ...}, "default": 0.1}

    Detector outputs are lists of [cx, cy, w, h, objectness] rows; encoder
    outputs are flat float lists.
    """

    def __init__(self, sidecar_path: str | Path):
        try:
            spec = json.loads(Path(sidecar_path).read_text())
        except (OSError, ValueError) as exc:
            raise ModelIoError(f"cannot load stub sidecar {sidecar_path}: {exc}") from exc
        self.kind = spec.get("kind", "classifier")
        if self.kind not in _VALID_KINDS:
            raise ModelIoError(f"unknown stub kind {self.kind!r}")
        self.output_kind = spec.get("output_kind", "logit" if self.kind == "classifier" else "raw")
        self._outputs = spec.get("outputs", {})
        self._default = spec.get("default")
        self._path = str(sidecar_path)

    def _value_for(self, key: str | None) -> np.ndarray:
        value = self._outputs.get(key) if key is not None else None
        if value is None:
            value = self._default
        if value is None:
            raise ModelIoError(f"stub {self._path} has no output for key {key!r} and no default")
        arr = np.asarray(value, dtype=np.float32)
        if self.kind == "detector":
            arr = arr.reshape(-1, 5) if arr.size else arr.reshape(0, 5)
        elif self.kind == "classifier":
            arr = arr.reshape(())
        return arr

    def run(self, batch: np.ndarray, keys: Sequence[str] | None = None) -> list[np.ndarray]:
        n = int(batch.shape[0])
        if keys is not None and len(keys) != n:
            raise ShapeMismatch(f"{len(keys)} keys for a batch of {n}")
        return [self._value_for(keys[i] if keys is not None else None) for i in range(n)]


class OnnxBackend:
    """Thin wrapper over an onnxruntime session (CPU provider).

    The exported graph's `output_kind` metadata property declares whether a
    classifier emits logits or probabilities; absent metadata means logit.
    """

    def __init__(self, model_path: str | Path, kind: str = "classifier"):
        try:
            import onnxruntime  # noqa: PLC0415 - optional dependency
        except ImportError as exc:
            raise ModelIoError(
                "onnxruntime is not installed; install it or use a .json stub model"
            ) from exc
        if kind not in _VALID_KINDS:
            raise ModelIoError(f"unknown model kind {kind!r}")
        try:
            self._session = onnxruntime.InferenceSession(
                str(model_path), providers=["CPUExecutionProvider"]
            )
        except Exception as exc:  # noqa: BLE001
            raise ModelIoError(f"cannot load ONNX model {model_path}: {exc}") from exc
        self.kind = kind
        meta = self._session.get_modelmeta().custom_metadata_map or {}
        self.output_kind = meta.get("output_kind", "logit" if kind == "classifier" else "raw")
        self._input_name = self._session.get_inputs()[0].name

    def run(self, batch: np.ndarray, keys: Sequence[str] | None = None) -> list[np.ndarray]:
        del keys
        out = self._session.run(None, {self._input_name: batch.astype(np.float32)})[0]
        return [np.asarray(out[i]) for i in range(out.shape[0])]


def load_backend(model_path: str | Path, kind: str = "classifier") -> InferenceBackend:
    """Pick a backend from the model file extension (.json stub, .onnx graph)."""
    path = Path(model_path)
    if path.suffix == ".json":
        backend = StubBackend(path)
        if backend.kind != kind:
            raise ModelIoError(f"stub {path} is a {backend.kind}, expected {kind}")
        return backend
    if path.suffix == ".onnx":
        return OnnxBackend(path, kind)
    raise ModelIoError(f"unsupported model file {path} (expected .json or .onnx)")
