"""Per-scale-group Fisher-vector encoding of pooled part proposals.

Each scale group contributes one raw block: per mixture component, a mean
gradient part followed by a std gradient part (p dims each, components in
model order). Blocks are signed-power and l2 normalized independently and
concatenated in group order; with the default configuration
(p=128, K=128, m=8) the full vector has 128*2*128*8 = 262144 dimensions.
A selection mask drops whole clusters' dimensions after normalization.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry
from .codebook import GmmModel, ScaleGrouping, responsibilities
from .kernels import fv_accumulate
from .mmp import pool_record
from .reduce import PcaModel, pca_apply

POWER_EXPONENT = 0.5

MEAN_PART = 0
STD_PART = 1


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class FvLayout:
    """Maps (group, component, part, dim) to a flat index and back."""

    m: int
    n_components: int
    dim: int

    @property
    def block_length(self) -> int:
        return 2 * self.dim * self.n_components

    @property
    def total_length(self) -> int:
        return self.m * self.block_length

    @property
    def n_clusters(self) -> int:
        return self.m * self.n_components

    def flat_index(self, group: int, component: int, part: int, dim: int) -> int:
        if not (0 <= group < self.m and 0 <= component < self.n_components):
            raise EncodeError(f"cluster ({group}, {component}) outside layout")
        if part not in (MEAN_PART, STD_PART) or not (0 <= dim < self.dim):
            raise EncodeError(f"(part={part}, dim={dim}) outside layout")
        return (
            group * self.block_length
            + component * 2 * self.dim
            + part * self.dim
            + dim
        )

    def cluster_slice(self, group: int, component: int) -> slice:
        start = self.flat_index(group, component, MEAN_PART, 0)
        return slice(start, start + 2 * self.dim)

    def columns_for(self, kept) -> np.ndarray:
        """Flat columns of the kept clusters, in (group, component) order."""
        cols = np.empty(len(kept) * 2 * self.dim, dtype=np.int64)
        for i, (g, c) in enumerate(sorted(kept)):
            sl = self.cluster_slice(g, c)
            cols[i * 2 * self.dim : (i + 1) * 2 * self.dim] = np.arange(sl.start, sl.stop)
        return cols

    def to_jsonable(self):
        return {"m": self.m, "K": self.n_components, "p": self.dim}

    @classmethod
    def from_jsonable(cls, obj):
        return cls(m=int(obj["m"]), n_components=int(obj["K"]), dim=int(obj["p"]))


@dataclass
class FisherVector:
    values: np.ndarray
    layout: FvLayout
    kept: tuple | None = None  # kept clusters when masked, else None

    def __len__(self):
        return self.values.shape[0]


def encode_group(descriptors, model: GmmModel, scales=None, grouping: ScaleGrouping | None = None) -> np.ndarray:
    """Raw (unnormalized) Fisher block for one scale group.

    `descriptors` are PCA-reduced part vectors, rows in accumulation
    order. When `scales` and `grouping` are given, every part's scale is
    checked to belong to the model's group. An empty part set yields the
    zero block.
    """
    x = np.ascontiguousarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(-1, model.dim) if x.size else np.empty((0, model.dim))
    if x.shape[0] and x.shape[1] != model.dim:
        raise EncodeError(f"descriptor dim {x.shape[1]} != codebook dim {model.dim}")
    if scales is not None and grouping is not None:
        groups = grouping.group_of_scales(np.asarray(scales))
        if x.shape[0] != groups.shape[0]:
            raise EncodeError("scales and descriptors disagree in length")
        if np.any(groups != model.group):
            bad = int(np.asarray(scales)[groups != model.group][0])
            raise EncodeError(f"part at scale {bad} does not belong to group {model.group}")
    if x.shape[0] == 0:
        return np.zeros(2 * model.dim * model.n_components)
    resp = responsibilities(model, x)
    return fv_accumulate(x, resp, model.means, model.stds, model.weights)


def power_normalize(block: np.ndarray, exponent: float = POWER_EXPONENT) -> np.ndarray:
    return np.sign(block) * np.abs(block) ** exponent


def normalize_and_concat(blocks, layout: FvLayout | None = None) -> FisherVector:
    """Signed-power then l2 normalization per block, concatenated in order.

    All-zero blocks pass through unchanged (no division by zero).
    """
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    if not blocks:
        raise EncodeError("need at least one block")
    length = blocks[0].shape[0]
    if any(b.shape != (length,) for b in blocks):
        raise EncodeError("blocks have inconsistent layouts")
    out = []
    for block in blocks:
        z = power_normalize(block)
        norm = np.linalg.norm(z)
        if norm > 0.0:
            z = z / norm
        out.append(z)
    if layout is None:
        layout = FvLayout(m=len(blocks), n_components=1, dim=length // 2)
    return FisherVector(values=np.concatenate(out), layout=layout)


def encode_image(
    record,
    grouping: ScaleGrouping,
    pca: PcaModel,
    gmms,
    mask=None,
    stack: geometry.LayerStack = geometry.VGG_M,
) -> FisherVector:
    """Full image encoding: MMP over every proposal, PCA, per-group Fisher
    blocks, per-block normalization, optional cluster masking."""
    if len(gmms) != grouping.m:
        raise EncodeError(f"{len(gmms)} codebooks for {grouping.m} groups")
    layout = FvLayout(m=grouping.m, n_components=gmms[0].n_components, dim=gmms[0].dim)
    for j, g in enumerate(gmms):
        if g.group != j:
            raise EncodeError(f"codebook at position {j} claims group {g.group}")
        if g.n_components != layout.n_components or g.dim != layout.dim:
            raise EncodeError("codebooks disagree on K or p")
    parts = []
    scales = []
    for prop in record.proposals:
        pooled = pool_record(prop, stack)
        parts.append(pooled.descriptors)
        scales.append(pooled.scales)
    descriptors = pca_apply(pca, np.concatenate(parts, axis=0))
    group_ids = grouping.group_of_scales(np.concatenate(scales))
    blocks = []
    for j in range(grouping.m):
        rows = descriptors[group_ids == j]  # keeps (proposal, scale, origin) order
        blocks.append(encode_group(rows, gmms[j]))
    fv = normalize_and_concat(blocks, layout=layout)
    if mask is not None:
        if mask.layout != layout:
            raise EncodeError("selection mask layout does not match encoder layout")
        fv = FisherVector(
            values=fv.values[layout.columns_for(mask.kept)],
            layout=layout,
            kept=tuple(sorted(mask.kept)),
        )
    return fv
