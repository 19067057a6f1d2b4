"""Shared pipeline driver for tests: fit models in-process, encode, evaluate."""

from dataclasses import dataclass

import numpy as np

from scpm.classify import evaluate, svm_train
from scpm.codebook import ScaleGrouping, default_grouping, gmm_fit
from scpm.encoder import FvLayout, encode_image
from scpm.geometry import VGG_M
from scpm.mmp import pool_record
from scpm.reduce import pca_apply, pca_fit
from scpm.select import cluster_importance, mi_per_dimension, select_clusters


@dataclass
class EncodedDataset:
    matrix: np.ndarray  # (n_images, total_length) unmasked
    labels: np.ndarray
    splits: list
    layout: FvLayout
    grouping: ScaleGrouping
    pca: object
    gmms: list

    @property
    def train_rows(self):
        return np.array([i for i, s in enumerate(self.splits) if s == "train"])

    @property
    def test_rows(self):
        return np.array([i for i, s in enumerate(self.splits) if s == "test"])


def fit_and_encode(
    records,
    p: int = 16,
    k: int = 16,
    seed: int = 0,
    grouping: ScaleGrouping | None = None,
    stack=VGG_M,
    gmm_sample: int = 15000,
    pca_sample: int = 200_000,
) -> EncodedDataset:
    grid = records[0].proposals[0].grid
    if grouping is None:
        grouping = default_grouping(grid)
    train = [r for r in records if r.split == "train"]
    chunks = [pool_record(prop, stack).descriptors for rec in train for prop in rec.proposals]
    sample = np.concatenate(chunks, axis=0)
    pca = pca_fit(sample, p=p, seed=seed, max_sample=pca_sample)

    buckets = [[] for _ in range(grouping.m)]
    for rec in train:
        for prop in rec.proposals:
            pooled = pool_record(prop, stack)
            reduced = pca_apply(pca, pooled.descriptors)
            group_ids = grouping.group_of_scales(pooled.scales)
            for j in range(grouping.m):
                rows = reduced[group_ids == j]
                if rows.size:
                    buckets[j].append(rows)
    gmms = [
        gmm_fit(np.concatenate(buckets[j], axis=0), k=k, seed=seed + j, group=j, max_sample=gmm_sample)
        for j in range(grouping.m)
    ]

    rows = []
    labels = []
    splits = []
    layout = None
    for rec in records:
        fv = encode_image(rec, grouping, pca, gmms, stack=stack)
        layout = fv.layout
        rows.append(fv.values)
        labels.append(rec.label)
        splits.append(rec.split)
    return EncodedDataset(
        matrix=np.vstack(rows),
        labels=np.array(labels),
        splits=splits,
        layout=layout,
        grouping=grouping,
        pca=pca,
        gmms=gmms,
    )


def accuracy_at(
    encoded: EncodedDataset,
    fraction: float | None = None,
    c_reg: float = 1.0,
    seed: int = 0,
    mi_bins: int = 8,
    mi_smoothing: float = 0.1,
) -> float:
    """Test accuracy, optionally after MI cluster selection at `fraction`."""
    matrix = encoded.matrix
    tr, te = encoded.train_rows, encoded.test_rows
    if fraction is not None and fraction < 1.0:
        mi = mi_per_dimension(matrix[tr], encoded.labels[tr], bins=mi_bins, smoothing=mi_smoothing)
        mask = select_clusters(cluster_importance(mi, encoded.layout), fraction)
        matrix = matrix[:, mask.columns()]
    model = svm_train(matrix[tr], encoded.labels[tr], c_reg=c_reg, seed=seed)
    return evaluate(model, matrix[te], encoded.labels[te])["accuracy"]
