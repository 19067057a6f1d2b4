"""Key-part detection for a pair of classes.

For each selected cluster, the parts an image assigns to that cluster
(argmax posterior) are aggregated by summing their centered descriptors
(descriptor minus the component mean), l2 normalized, and used to train a
max-margin binary scorer on image labels. A test part's score is then the
dot product between its cluster's scorer and its centered descriptor;
large positive scores mark parts essential to the positive class, large
negative ones to the negative class.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry
from .classify import svm_train
from .codebook import ScaleGrouping, responsibilities
from .mmp import pool_record
from .reduce import PcaModel, pca_apply

DEFAULT_TOP_K = 20
DEDUP_IOU = 0.7


class KeypartError(ValueError):
    pass


@dataclass
class PartScorerSet:
    positive: str
    negative: str
    scorers: dict  # (group, component) -> (p,) weight vector, bias dropped
    centers: dict  # (group, component) -> (p,) component mean


@dataclass
class ScoredPart:
    image_id: str
    box: tuple
    scale: int
    origin: tuple
    cluster: tuple
    score: float


def aggregate_cluster_feature(parts, center) -> np.ndarray:
    """Sum of centered part descriptors, l2 normalized; empty set -> zeros."""
    center = np.asarray(center, dtype=np.float64)
    parts = np.asarray(parts, dtype=np.float64).reshape(-1, center.shape[0])
    if parts.shape[0] == 0:
        return np.zeros(center.shape[0])
    agg = np.sum(parts - center, axis=0)
    norm = np.linalg.norm(agg)
    return agg / norm if norm > 0.0 else agg


def _image_parts(record, stack, pca):
    """PCA-reduced descriptors plus (scale, origin, box) metadata arrays."""
    descs, scales, origins, boxes = [], [], [], []
    for prop in record.proposals:
        pooled = pool_record(prop, stack)
        descs.append(pooled.descriptors)
        scales.append(pooled.scales)
        origins.append(pooled.origins)
        boxes.append(pooled.boxes)
    return (
        pca_apply(pca, np.concatenate(descs, axis=0)),
        np.concatenate(scales),
        np.concatenate(origins, axis=0),
        np.concatenate(boxes, axis=0),
    )


def _hard_assignments(descriptors, scales, grouping, gmms):
    """Argmax-posterior component per part, under its scale group's codebook."""
    group_ids = grouping.group_of_scales(scales)
    comp = np.empty(descriptors.shape[0], dtype=np.int64)
    for j in range(grouping.m):
        rows = group_ids == j
        if np.any(rows):
            comp[rows] = np.argmax(responsibilities(gmms[j], descriptors[rows]), axis=1)
    return group_ids, comp


def image_cluster_features(record, kept, grouping, pca, gmms, stack=geometry.VGG_M) -> dict:
    """Aggregated, normalized per-cluster features of one image."""
    descriptors, scales, _, _ = _image_parts(record, stack, pca)
    group_ids, comp = _hard_assignments(descriptors, scales, grouping, gmms)
    out = {}
    for g, c in kept:
        rows = (group_ids == g) & (comp == c)
        out[(g, c)] = aggregate_cluster_feature(descriptors[rows], gmms[g].means[c])
    return out


def train_pair_scorers(
    records,
    class_a: int,
    class_b: int,
    kept,
    grouping: ScaleGrouping,
    pca: PcaModel,
    gmms,
    stack=geometry.VGG_M,
    c_reg: float = 1.0,
    seed: int = 0,
    class_names=None,
) -> PartScorerSet:
    """Per kept cluster, a binary max-margin scorer for class_a (positive)
    vs class_b (negative), trained on aggregated train-image features."""
    kept = sorted(kept)
    feats = {key: [] for key in kept}
    labels = []
    for rec in records:
        if rec.split != "train" or rec.label not in (class_a, class_b):
            continue
        per_cluster = image_cluster_features(rec, kept, grouping, pca, gmms, stack=stack)
        for key in kept:
            feats[key].append(per_cluster[key])
        labels.append(1 if rec.label == class_a else 0)
    labels = np.asarray(labels)
    if not np.any(labels == 1) or not np.any(labels == 0):
        missing = class_a if not np.any(labels == 1) else class_b
        raise KeypartError(f"no training images for class {missing}")
    scorers = {}
    centers = {}
    for key in kept:
        g, c = key
        x = np.vstack(feats[key])
        model = svm_train(x, labels, c_reg=c_reg, seed=seed)
        scorers[key] = model.weights[1]  # class 1 == positive; bias dropped
        centers[key] = gmms[g].means[c].copy()
    names = class_names or {}
    return PartScorerSet(
        positive=names.get(class_a, f"class_{class_a}"),
        negative=names.get(class_b, f"class_{class_b}"),
        scorers=scorers,
        centers=centers,
    )


def score_parts(record, scorer_set: PartScorerSet, grouping, pca, gmms, stack=geometry.VGG_M) -> list:
    """Scores for every part of `record` that falls in a kept cluster;
    parts assigned to unkept clusters are omitted."""
    descriptors, scales, origins, boxes = _image_parts(record, stack, pca)
    group_ids, comp = _hard_assignments(descriptors, scales, grouping, gmms)
    out = []
    for t in range(descriptors.shape[0]):
        key = (int(group_ids[t]), int(comp[t]))
        scorer = scorer_set.scorers.get(key)
        if scorer is None:
            continue
        score = float(scorer @ (descriptors[t] - scorer_set.centers[key]))
        out.append(
            ScoredPart(
                image_id=record.image_id,
                box=tuple(int(v) for v in boxes[t]),
                scale=int(scales[t]),
                origin=(int(origins[t, 0]), int(origins[t, 1])),
                cluster=key,
                score=score,
            )
        )
    return out


def box_iou(a, b) -> float:
    """IoU of two half-open pixel boxes."""
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _take_extreme(parts, k, sign):
    """Greedy top-k in `sign`-descending score order with per-image box
    suppression (IoU > DEDUP_IOU keeps only the most extreme part)."""
    ranked = sorted(parts, key=lambda s: (-sign * s.score, s.image_id, s.scale, s.origin))
    taken = []
    kept_boxes = {}
    for part in ranked:
        if len(taken) == k:
            break
        boxes = kept_boxes.setdefault(part.image_id, [])
        if any(box_iou(part.box, b) > DEDUP_IOU for b in boxes):
            continue
        boxes.append(part.box)
        taken.append(part)
    return taken


def top_parts_report(scored_parts, k: int = DEFAULT_TOP_K) -> dict:
    """Top-k most positive and most negative parts, as a JSON-ready dict."""
    if k < 1:
        raise KeypartError("k must be >= 1")
    parts = list(scored_parts)

    def jsonable(items):
        return [
            {
                "image_id": s.image_id,
                "box": list(s.box),
                "scale": s.scale,
                "origin": list(s.origin),
                "cluster": list(s.cluster),
                "score": s.score,
            }
            for s in items
        ]

    return {
        "top": jsonable(_take_extreme(parts, k, sign=1.0)),
        "bottom": jsonable(_take_extreme(parts, k, sign=-1.0)),
    }
