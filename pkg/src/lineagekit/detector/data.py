"""Detector inputs: vectorize weights/features and reshape them into
stacked parent/child planes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nncore import ContractError, forward
from ..zoo import ZooManifest, make_dataset

__all__ = ["StackedInput", "DetectorSample", "reshape_to_planes",
           "most_square_shape", "PlaneBuilder"]


@dataclass(frozen=True)
class StackedInput:
    """Parent plane stacked on child plane, per modality."""
    weights: np.ndarray | None     # (2, H_w, W_w)
    features: np.ndarray | None    # (2, H_f, W_f)

    def __post_init__(self):
        if self.weights is None and self.features is None:
            raise ContractError("at least one modality must be present")
        for name, plane in (("weights", self.weights), ("features", self.features)):
            if plane is not None and (plane.ndim != 3 or plane.shape[0] != 2):
                raise ContractError(f"{name} plane must be (2, H, W)")


@dataclass(frozen=True)
class DetectorSample:
    child_id: str
    candidates: tuple[StackedInput, ...]   # one per parent candidate
    label: int                             # true parent index, or M for no-parent

    def __post_init__(self):
        limit = len(self.candidates) + 1   # index M allowed in no-parent mode
        if not (0 <= self.label < limit):
            raise ContractError(f"label {self.label} out of range")


def most_square_shape(count: int) -> tuple[int, int]:
    """Most-square (H, W) with H*W >= count and minimal padding."""
    h = int(np.floor(np.sqrt(count)))
    while h > 1 and count % h != 0:
        h -= 1
    if h == 1 and count > 3:
        # Prime count: pad one cell to make it composite.
        return most_square_shape(count + 1)
    return h, count // h


def reshape_to_planes(values: np.ndarray, h: int, w: int,
                      pad: bool = True) -> tuple[np.ndarray, int]:
    """Row-major fill into (H, W); returns (plane, n_padded)."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if h * w < flat.size:
        raise ContractError(f"target {h}x{w} smaller than {flat.size} elements")
    n_pad = h * w - flat.size
    if n_pad and not pad:
        raise ContractError(f"{n_pad} cells short without padding enabled")
    if n_pad:
        flat = np.concatenate([flat, np.zeros(n_pad)])
    return flat.reshape(h, w), n_pad


class PlaneBuilder:
    """Precomputes per-model weight and feature planes for a manifest.

    Default modalities for MLP subjects: weights = first linear layer matrix,
    features = batch of post-first-activation outputs on a fixed input sample.
    """

    def __init__(self, manifest: ZooManifest, n_feature_samples: int = 128,
                 input_seed: int = 0, weight_block: str = "layer1.weight",
                 feature_tap: str = "act1",
                 use_weights: bool = True, use_features: bool = True):
        if not (use_weights or use_features):
            raise ContractError("at least one modality must be enabled")
        self.manifest = manifest
        self.use_weights = use_weights
        self.use_features = use_features
        self.weight_block = weight_block
        self.feature_tap = feature_tap

        task_names = sorted(t for t in manifest.tasks if t.startswith("target"))
        task = manifest.tasks[task_names[0] if task_names else "source"]
        data = make_dataset(task)
        rng = np.random.default_rng(input_seed)
        idx = rng.permutation(len(data.train_x))[:n_feature_samples]
        self.inputs = data.train_x[idx]

        self._weight_planes: dict[str, np.ndarray] = {}
        self._feature_planes: dict[str, np.ndarray] = {}
        self.weight_shape: tuple[int, int] | None = None
        self.feature_shape: tuple[int, int] | None = None

    def _weight_plane(self, record) -> np.ndarray:
        if record.id not in self._weight_planes:
            block = record.params.block(self.weight_block)
            if self.weight_shape is None:
                self.weight_shape = most_square_shape(block.size)
            plane, _ = reshape_to_planes(block, *self.weight_shape)
            self._weight_planes[record.id] = plane
        return self._weight_planes[record.id]

    def _feature_plane(self, record) -> np.ndarray:
        if record.id not in self._feature_planes:
            res = forward(record.arch, record.params, self.inputs,
                          taps=(self.feature_tap,))
            feat = res.features[self.feature_tap]
            if self.feature_shape is None:
                self.feature_shape = most_square_shape(feat.size)
            plane, _ = reshape_to_planes(feat, *self.feature_shape)
            self._feature_planes[record.id] = plane
        return self._feature_planes[record.id]

    def stacked(self, parent, child) -> StackedInput:
        weights = None
        features = None
        if self.use_weights:
            weights = np.stack([self._weight_plane(parent),
                                self._weight_plane(child)])
        if self.use_features:
            features = np.stack([self._feature_plane(parent),
                                 self._feature_plane(child)])
        return StackedInput(weights=weights, features=features)

    def sample_for(self, child, candidates, label: int) -> DetectorSample:
        stacks = tuple(self.stacked(parent, child) for parent in candidates)
        return DetectorSample(child_id=child.id, candidates=stacks, label=label)
