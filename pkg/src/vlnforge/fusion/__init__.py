"""Cross-view fusion of 2D semantic predictions into 3D objects."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from ..scene.geometry import lift_view
from ..scene.types import PanoramaNode
from ..scene.vocab import CLASSES
from .accuracy import AccuracyResult, box_iou, label_accuracy, match_to_truth
from .objects import Object3D, ViewMap, extract_instances, map_2d_to_3d, single_view_objects
from .voxels import (DEFAULT_ORIGIN, LabeledVoxels, SemanticVoxelGrid, accumulate, accumulate_many,
                     finalize_labels, merge_grids)


@dataclass(frozen=True)
class FusionParams:
    voxel_size: float = 0.1
    connectivity: int = 26
    min_voxels: int = 5
    stride: int = 2
    overlap_threshold: float = 0.3

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.connectivity not in (6, 18, 26):
            raise ValueError("connectivity must be 6, 18 or 26")
        if self.min_voxels < 1 or self.stride < 1:
            raise ValueError("min_voxels and stride must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FusionResult:
    grid: SemanticVoxelGrid
    labeled: LabeledVoxels
    objects: list
    view_map: ViewMap


def view_refs(panoramas: list[PanoramaNode]):
    """(reference, view) pairs with references ``"<node>:<view>"``."""
    return [(f"{p.id}:{k}", v) for p in panoramas for k, v in enumerate(p.views)]


def fuse_panoramas(panoramas: list[PanoramaNode], params: FusionParams = FusionParams(),
                   n_classes: int = len(CLASSES)) -> FusionResult:
    """Lift all views, vote in voxels, group instances and map 2D instances to them."""
    refs = view_refs(panoramas)
    grid = SemanticVoxelGrid(params.voxel_size, n_classes, DEFAULT_ORIGIN)
    grid = accumulate_many(grid, (lift_view(v, params.stride) for _, v in refs))
    labeled = finalize_labels(grid)
    objects = extract_instances(labeled, params.connectivity, params.min_voxels)
    vmap = map_2d_to_3d(refs, objects, params.voxel_size, DEFAULT_ORIGIN, params.stride, params.overlap_threshold)
    return FusionResult(grid, labeled, vmap.objects, vmap)


def single_view_baseline(panoramas: list[PanoramaNode], params: FusionParams = FusionParams()) -> list:
    """Objects from every view independently (no cross-view merging)."""
    out = []
    for ref, view in view_refs(panoramas):
        out.extend(single_view_objects(view, params.voxel_size, DEFAULT_ORIGIN, params.stride,
                                       start_id=len(out), view_ref=ref))
    return out


__all__ = [
    "AccuracyResult", "FusionParams", "FusionResult", "LabeledVoxels", "Object3D", "SemanticVoxelGrid",
    "ViewMap", "accumulate", "accumulate_many", "box_iou", "extract_instances", "finalize_labels",
    "fuse_panoramas", "label_accuracy", "map_2d_to_3d", "match_to_truth", "merge_grids",
    "single_view_baseline", "single_view_objects", "view_refs",
]
