"""Object-proposal generation.

Segmentation is delegated to scikit-image's Felzenszwalb implementation
(the same primitive classic selective search builds on); proposals are
the segment bounding boxes over a few segmentation scales plus one round
of adjacent-segment merges, which approximates the hierarchical grouping
step. Boxes are deduplicated in generation order and capped.
"""

import numpy as np
from scipy.ndimage import find_objects
from skimage.segmentation import felzenszwalb

FELZENSZWALB_SCALES = (50, 150, 300)
MIN_BOX_SIDE = 8


def _segment_boxes(labels):
    """Bounding box per segment id, ordered by segment id."""
    boxes = {}
    for seg, slices in enumerate(find_objects(labels + 1)):
        if slices is not None:
            ys, xs = slices
            boxes[seg] = (int(xs.start), int(ys.start), int(xs.stop), int(ys.stop))
    return boxes


def _neighbor_pairs(labels):
    """Segment ids that touch horizontally or vertically."""
    pairs = set()
    a, b = labels[:, :-1], labels[:, 1:]
    for u, v in zip(a[a != b], b[a != b]):
        pairs.add((min(int(u), int(v)), max(int(u), int(v))))
    a, b = labels[:-1, :], labels[1:, :]
    for u, v in zip(a[a != b], b[a != b]):
        pairs.add((min(int(u), int(v)), max(int(u), int(v))))
    return sorted(pairs)


def _union(box_a, box_b):
    return (
        min(box_a[0], box_b[0]),
        min(box_a[1], box_b[1]),
        max(box_a[2], box_b[2]),
        max(box_a[3], box_b[3]),
    )


def propose_boxes(image: np.ndarray, cap: int) -> list:
    """Candidate object boxes for an RGB uint8 image, full frame first.

    Deterministic for a given image: scales, segment ids, and merge pairs
    are enumerated in fixed order; duplicates keep their first position.
    """
    height, width = image.shape[:2]
    full = (0, 0, width, height)
    seen = {full}
    out = [full]
    if min(height, width) < MIN_BOX_SIDE:
        return out
    img = image.astype(np.float64) / 255.0
    for scale in FELZENSZWALB_SCALES:
        labels = felzenszwalb(img, scale=scale, sigma=0.8, min_size=20)
        boxes = _segment_boxes(labels)
        candidates = list(boxes.values())
        candidates.extend(
            _union(boxes[u], boxes[v])
            for u, v in _neighbor_pairs(labels)
            if u in boxes and v in boxes
        )
        for box in candidates:
            if box[2] - box[0] < MIN_BOX_SIDE or box[3] - box[1] < MIN_BOX_SIDE:
                continue
            if box not in seen:
                seen.add(box)
                out.append(box)
                if len(out) >= cap:
                    return out
    return out
