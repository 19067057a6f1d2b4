"""Multi-max pooling: multi-scale part proposals from one feature map.

Every MxM window of the NxN grid is max-pooled channelwise, for M from 1
to N, giving sum((N-M+1)^2) part descriptors per feature map. Pooling is
incremental (scale M+1 from overlapping scale-M windows) but bitwise equal
to the naive definition since max is associative. Part boxes are receptive
boxes in the proposal crop, clipped, then mapped affinely into the object
proposal's own box so they land in original-image pixels.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry
from .featio import ProposalRecord
from .kernels import pool_pyramid, pyramid_total


class PoolingError(ValueError):
    pass


@dataclass
class PartProposal:
    """One pooled window: its scale, grid origin, descriptor, and box."""

    scale: int
    origin: tuple
    descriptor: np.ndarray
    box: tuple


@dataclass
class PooledParts:
    """Array bundle of all parts of one feature map, in (scale, row, col) order."""

    descriptors: np.ndarray  # (T, d)
    scales: np.ndarray  # (T,) window side M
    origins: np.ndarray  # (T, 2) window (row, col)
    boxes: np.ndarray  # (T, 4) original-image pixel boxes

    def __len__(self):
        return self.descriptors.shape[0]


_GRID_CACHE = {}


def _grid_tables(stack: geometry.LayerStack, grid: int):
    """Per-(stack, grid) tables: scales, origins, and clipped crop-space boxes."""
    key = (stack, grid)
    cached = _GRID_CACHE.get(key)
    if cached is not None:
        return cached
    total = pyramid_total(grid)
    scales = np.empty(total, dtype=np.int64)
    origins = np.empty((total, 2), dtype=np.int64)
    boxes = np.empty((total, 4), dtype=np.int64)
    step = stack.stride_product
    size = stack.input_size
    pos = 0
    for m in range(1, grid + 1):
        k = grid - m + 1
        side = geometry.receptive_extent(stack, m)
        rows, cols = np.divmod(np.arange(k * k), k)
        sl = slice(pos, pos + k * k)
        scales[sl] = m
        origins[sl, 0] = rows
        origins[sl, 1] = cols
        x0 = cols * step
        y0 = rows * step
        boxes[sl, 0] = np.minimum(x0, size)
        boxes[sl, 1] = np.minimum(y0, size)
        boxes[sl, 2] = np.minimum(x0 + side, size)
        boxes[sl, 3] = np.minimum(y0 + side, size)
        pos += k * k
    tables = (scales, origins, boxes)
    _GRID_CACHE[key] = tables
    return tables


def _check_consistent(stack: geometry.LayerStack, grid: int):
    if grid < 1:
        raise PoolingError("grid must be >= 1")
    if (grid - 1) * stack.stride_product >= stack.input_size:
        raise PoolingError(
            f"grid {grid} inconsistent with stack: window origins exceed the "
            f"{stack.input_size}px input"
        )


def _map_boxes(crop_boxes: np.ndarray, prop_box: tuple, input_size: int) -> np.ndarray:
    """Affine map from crop space [0, input_size)^2 into the proposal's box."""
    x0, y0, x1, y1 = prop_box
    sx = (x1 - x0) / input_size
    sy = (y1 - y0) / input_size
    out = np.empty_like(crop_boxes)
    out[:, 0] = np.floor(crop_boxes[:, 0] * sx + 0.5).astype(np.int64) + x0
    out[:, 2] = np.floor(crop_boxes[:, 2] * sx + 0.5).astype(np.int64) + x0
    out[:, 1] = np.floor(crop_boxes[:, 1] * sy + 0.5).astype(np.int64) + y0
    out[:, 3] = np.floor(crop_boxes[:, 3] * sy + 0.5).astype(np.int64) + y0
    # tiny proposals can round a window to zero width; keep boxes non-degenerate
    out[:, 2] = np.minimum(np.maximum(out[:, 2], out[:, 0] + 1), x1)
    out[:, 3] = np.minimum(np.maximum(out[:, 3], out[:, 1] + 1), y1)
    return out


def pool_record(fm: ProposalRecord, stack: geometry.LayerStack) -> PooledParts:
    """All multi-max-pooled parts of one feature map, as arrays."""
    _check_consistent(stack, fm.grid)
    values = np.ascontiguousarray(fm.values, dtype=np.float32)
    if values.shape != (fm.grid, fm.grid, fm.channels):
        raise PoolingError(
            f"values shape {values.shape} != ({fm.grid}, {fm.grid}, {fm.channels})"
        )
    descriptors = pool_pyramid(values)
    scales, origins, crop_boxes = _grid_tables(stack, fm.grid)
    boxes = _map_boxes(crop_boxes, fm.box, stack.input_size)
    return PooledParts(descriptors=descriptors, scales=scales, origins=origins, boxes=boxes)


def multi_max_pool(fm: ProposalRecord, stack: geometry.LayerStack) -> list:
    """Part proposals of one feature map, scale-major then row-major."""
    pooled = pool_record(fm, stack)
    return [
        PartProposal(
            scale=int(pooled.scales[t]),
            origin=(int(pooled.origins[t, 0]), int(pooled.origins[t, 1])),
            descriptor=pooled.descriptors[t],
            box=tuple(int(v) for v in pooled.boxes[t]),
        )
        for t in range(len(pooled))
    ]
