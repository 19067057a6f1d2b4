import math

import numpy as np
import pytest

from scpm.encoder import FvLayout
from scpm.select import (
    ClusterImportance,
    SelectError,
    SelectionMask,
    cluster_importance,
    mi_per_dimension,
    quantize_column,
    select_clusters,
)


def oracle_mi(bins, labels, smoothing):
    """Independent plug-in estimator over the (bin, label) histogram,
    written with plain dict counting."""
    cells = {}
    for b, y in zip(bins, labels):
        cells[(int(b), int(y))] = cells.get((int(b), int(y)), 0) + 1
    bs = sorted({b for b, _ in cells})
    ys = sorted({y for _, y in cells})
    total = sum(cells.values()) + smoothing * len(bs) * len(ys)
    mi = 0.0
    for b in bs:
        pb = sum(cells.get((b, y), 0) + smoothing for y in ys) / total
        for y in ys:
            p = (cells.get((b, y), 0) + smoothing) / total
            py = sum(cells.get((bb, y), 0) + smoothing for bb in bs) / total
            if p > 0:
                mi += p * math.log(p / (pb * py))
    return mi


class TestMi:
    def test_perfectly_informative_dimension(self):
        y = np.array([0, 1] * 500)
        x = y.astype(float).reshape(-1, 1)
        assert mi_per_dimension(x, y, smoothing=0.0)[0] == pytest.approx(math.log(2), abs=1e-6)
        assert mi_per_dimension(x, y)[0] == pytest.approx(math.log(2), abs=2e-3)

    def test_constant_dimension_is_zero(self):
        x = np.full((100, 1), 7.7)
        y = np.array([0, 1] * 50)
        assert mi_per_dimension(x, y)[0] == 0.0

    def test_independent_dimension_is_tiny(self):
        rng = np.random.default_rng(0)
        y = np.array([0, 1] * 5000)
        x = rng.normal(size=(10000, 1))
        assert mi_per_dimension(x, y)[0] < 0.01

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(300, 8))
        x[:, 0] += np.repeat([0.0, 2.0], 150)
        y = np.repeat([0, 1], 150)
        got = mi_per_dimension(x, y, bins=8, smoothing=0.1)
        for d in range(8):
            bins = quantize_column(x[:, d], bins=8)
            assert got[d] == pytest.approx(oracle_mi(bins, y, 0.1), abs=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(200, 5))
        y = rng.integers(0, 3, size=200)
        perm = rng.permutation(200)
        a = mi_per_dimension(x, y)
        b = mi_per_dimension(x[perm], y[perm])
        np.testing.assert_array_equal(a, b)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(400, 20))
        y = rng.integers(0, 4, size=400)
        assert np.all(mi_per_dimension(x, y) >= 0.0)

    def test_single_class_rejected(self):
        with pytest.raises(SelectError):
            mi_per_dimension(np.zeros((10, 2)), np.zeros(10, dtype=int))

    def test_tiny_class_warns(self):
        x = np.random.default_rng(4).normal(size=(11, 2))
        y = np.array([0] * 10 + [1])
        with pytest.warns(UserWarning):
            mi_per_dimension(x, y)


class TestQuantize:
    def test_equal_frequency_on_continuous_data(self):
        rng = np.random.default_rng(5)
        col = rng.normal(size=8000)
        bins = quantize_column(col, bins=8)
        counts = np.bincount(bins)
        assert len(counts) == 8
        assert counts.min() > 8000 / 8 * 0.9

    def test_degenerate_values_collapse(self):
        col = np.array([1.0] * 90 + [2.0] * 10)
        bins = quantize_column(col, bins=8)
        assert set(bins) == {0, 1}


class TestClusterImportance:
    def test_uniform_mi(self):
        layout = FvLayout(m=2, n_components=3, dim=4)
        imp = cluster_importance(np.full(layout.total_length, 0.25), layout)
        np.testing.assert_allclose(imp.values, 2 * 4 * 0.25)

    def test_single_cluster_concentration(self):
        layout = FvLayout(m=3, n_components=4, dim=2)
        mi = np.zeros(layout.total_length)
        mi[layout.cluster_slice(1, 3)] = 1.0
        imp = cluster_importance(mi, layout)
        assert imp.values[1, 3] == pytest.approx(4.0)
        assert imp.values.sum() == pytest.approx(4.0)

    def test_matches_regroup_and_sum_oracle(self):
        rng = np.random.default_rng(6)
        layout = FvLayout(m=4, n_components=5, dim=3)
        mi = rng.uniform(size=layout.total_length)
        imp = cluster_importance(mi, layout)
        for g in range(4):
            for c in range(5):
                dims = [
                    layout.flat_index(g, c, part, d) for part in (0, 1) for d in range(3)
                ]
                assert imp.values[g, c] == np.sum(mi[np.sort(dims)])

    def test_layout_mismatch(self):
        layout = FvLayout(m=2, n_components=2, dim=2)
        with pytest.raises(SelectError):
            cluster_importance(np.zeros(layout.total_length + 1), layout)


class TestSelect:
    def layout(self):
        return FvLayout(m=2, n_components=2, dim=3)

    def test_fraction_one_keeps_all(self):
        imp = ClusterImportance(values=np.arange(4.0).reshape(2, 2), layout=self.layout())
        mask = select_clusters(imp, 1.0)
        assert mask.n_kept == 4

    def test_tie_break_by_cluster_index(self):
        imp = ClusterImportance(
            values=np.array([[3.0, 2.0], [2.0, 1.0]]), layout=self.layout()
        )
        mask = select_clusters(imp, 0.5)
        assert mask.kept == ((0, 0), (0, 1))

    def test_default_config_quarter_keeps_256(self):
        layout = FvLayout(m=8, n_components=128, dim=128)
        rng = np.random.default_rng(7)
        imp = ClusterImportance(values=rng.uniform(size=(8, 128)), layout=layout)
        mask = select_clusters(imp, 0.25)
        assert mask.n_kept == 256
        assert mask.columns().shape == (256 * 2 * 128,)

    def test_selection_monotone_in_fraction(self):
        rng = np.random.default_rng(8)
        layout = FvLayout(m=3, n_components=8, dim=2)
        imp = ClusterImportance(values=rng.uniform(size=(3, 8)), layout=layout)
        kept_prev = None
        for fraction in (0.125, 0.25, 0.5, 0.75, 1.0):
            kept = set(select_clusters(imp, fraction).kept)
            if kept_prev is not None:
                assert kept_prev <= kept
            kept_prev = kept

    def test_masked_length(self):
        rng = np.random.default_rng(9)
        layout = FvLayout(m=2, n_components=8, dim=5)
        imp = ClusterImportance(values=rng.uniform(size=(2, 8)), layout=layout)
        mask = select_clusters(imp, 0.5)
        assert len(mask.columns()) == mask.n_kept * 2 * 5

    def test_fraction_bounds(self):
        imp = ClusterImportance(values=np.ones((2, 2)), layout=self.layout())
        with pytest.raises(SelectError):
            select_clusters(imp, 0.0)
        with pytest.raises(SelectError):
            select_clusters(imp, 1.5)

    def test_mask_json_roundtrip(self):
        imp = ClusterImportance(
            values=np.array([[3.0, 2.0], [2.0, 1.0]]), layout=self.layout()
        )
        mask = select_clusters(imp, 0.5)
        back = SelectionMask.from_jsonable(mask.to_jsonable())
        assert back == mask
