"""Tests for the counter-based Gaussian increment generator."""

import numpy as np
import pytest

from uvpricer.rng import chunk_ranges, normal_increments


class TestNormalIncrements:
    def test_shape_and_dtype(self):
        """Output is (n_paths, n_steps, 2) float64."""
        z = normal_increments(seed=123, n_paths=7, n_steps=5)
        assert z.shape == (7, 5, 2)
        assert z.dtype == np.float64
        assert np.all(np.isfinite(z))

    def test_deterministic_in_seed(self):
        """Same seed gives identical draws; different seeds differ."""
        a = normal_increments(seed=42, n_paths=16, n_steps=8)
        b = normal_increments(seed=42, n_paths=16, n_steps=8)
        c = normal_increments(seed=43, n_paths=16, n_steps=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_batch_extension_keeps_existing_paths(self):
        """Growing the batch never changes previously generated paths."""
        small = normal_increments(seed=9, n_paths=5, n_steps=12)
        large = normal_increments(seed=9, n_paths=50, n_steps=12)
        assert np.array_equal(large[:5], small)

    def test_chunked_generation_matches_monolithic(self):
        """Concatenating chunks reproduces the single-shot batch exactly."""
        full = normal_increments(seed=2024, n_paths=23, n_steps=9)
        parts = [
            normal_increments(seed=2024, n_paths=n, n_steps=9, first_path=i0)
            for i0, n in chunk_ranges(23, 7)
        ]
        assert np.array_equal(np.concatenate(parts, axis=0), full)

    def test_disjoint_ranges_do_not_overlap(self):
        """Different path indices consume different counter blocks."""
        a = normal_increments(seed=5, n_paths=4, n_steps=6, first_path=0)
        b = normal_increments(seed=5, n_paths=4, n_steps=6, first_path=4)
        assert not np.array_equal(a, b)

    def test_moments_are_standard_normal(self):
        """Sample mean, variance, skew, kurtosis match N(0,1) within MC error."""
        z = normal_increments(seed=77, n_paths=2000, n_steps=32).ravel()
        n = z.size
        assert z.mean() == pytest.approx(0.0, abs=4.0 / np.sqrt(n))
        assert z.var() == pytest.approx(1.0, abs=6.0 / np.sqrt(n))
        assert np.mean(z**3) == pytest.approx(0.0, abs=10.0 / np.sqrt(n))
        assert np.mean(z**4) == pytest.approx(3.0, abs=20.0 / np.sqrt(n))

    def test_components_uncorrelated(self):
        """The two increment channels are uncorrelated."""
        z = normal_increments(seed=31, n_paths=4000, n_steps=16)
        z1 = z[:, :, 0].ravel()
        z2 = z[:, :, 1].ravel()
        corr = np.corrcoef(z1, z2)[0, 1]
        assert corr == pytest.approx(0.0, abs=4.0 / np.sqrt(z1.size))

    @pytest.mark.parametrize("bad", [dict(n_paths=0), dict(n_steps=0), dict(first_path=-1)])
    def test_invalid_arguments_rejected(self, bad):
        """Non-positive sizes and negative offsets raise ValueError."""
        kwargs = dict(seed=1, n_paths=3, n_steps=3)
        kwargs.update(bad)
        with pytest.raises(ValueError):
            normal_increments(**kwargs)


class TestChunkRanges:
    def test_covers_exactly(self):
        """Chunks tile the path range without gaps or overlap."""
        ranges = list(chunk_ranges(10, 4))
        assert ranges == [(0, 4), (4, 4), (8, 2)]

    def test_single_chunk_when_large(self):
        """A chunk size above the total yields one range."""
        assert list(chunk_ranges(5, 100)) == [(0, 5)]
