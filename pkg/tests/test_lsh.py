import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qwlsh.core import GaussianMixture
from qwlsh.lsh import (
    HEADER,
    HashFunction,
    IndexFormatError,
    build_index,
    collision_probability,
    derive_params,
    open_index,
    project,
    read_header,
    sample_functions,
)
from qwlsh.storage import DATA_FILE, BufferCache, CacheConfig

# frozen from scipy.integrate.quad before the hand-written integrator existed
P1_FROZEN = 0.7072848854799297
P2_FROZEN = 0.47204360277229923


def monte_carlo_collision(r, width, samples, seed=0):
    rng = np.random.default_rng(seed)
    s = rng.normal(0.0, r, samples)
    b = rng.uniform(0.0, width, samples)
    return float(np.mean(np.floor((s + b) / width) == np.floor(b / width)))


def quad_collision(r, width):
    f = lambda t: (1 / r) * 2 / math.sqrt(2 * math.pi) * math.exp(-t * t / (2 * r * r)) * (1 - t / width)
    return quad(f, 0.0, width, epsabs=1e-12)[0]


class TestCollisionProbability:
    @pytest.mark.parametrize("r,expected", [(1.0, P1_FROZEN), (2.0, P2_FROZEN)])
    def test_frozen_values(self, r, expected):
        assert collision_probability(r, 2.719) == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("r", [0.3, 1.0, 2.0, 5.0, 40.0])
    def test_matches_scipy(self, r):
        assert collision_probability(r, 2.719) == pytest.approx(quad_collision(r, 2.719), abs=1e-6)

    @pytest.mark.parametrize("r", [1.0, 2.0])
    def test_matches_simulation(self, r):
        assert abs(collision_probability(r, 2.719) - monte_carlo_collision(r, 2.719, 200_000)) <= 0.01

    def test_limits(self):
        assert collision_probability(1e-6, 2.719) == pytest.approx(1.0, abs=1e-4)
        assert collision_probability(1e6, 2.719) < 1e-5

    @pytest.mark.parametrize("bad", [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            collision_probability(*bad)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.05, 20.0), st.floats(1.01, 3.0), st.floats(0.5, 8.0))
    def test_monotone(self, r, ratio, width):
        p = collision_probability(r, width)
        assert 0.0 <= p <= 1.0
        assert collision_probability(r * ratio, width) < p
        assert collision_probability(r, width * ratio) > p


class TestDeriveParams:
    def test_defaults(self):
        params = derive_params()
        assert params.m == 37 and params.threshold == 22
        assert params.p1 == pytest.approx(P1_FROZEN, abs=1e-6)
        assert params.max_candidates == 200
        assert params.candidate_budget(50) == 150

    def test_formula(self):
        params = derive_params()
        alpha = (P1_FROZEN + P2_FROZEN) / 2
        assert params.m == math.ceil(1.0 / (2 * (P1_FROZEN - alpha) ** 2))
        assert params.threshold == math.ceil(alpha * params.m)

    def test_smaller_delta_needs_more_projections(self):
        assert derive_params(delta=0.05).m > derive_params().m

    @pytest.mark.parametrize("kwargs", [{"c": 1.0}, {"delta": 0.0}, {"delta": 1.0}, {"n": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            derive_params(**kwargs)


class TestProjection:
    def test_linear(self):
        a, b = sample_functions(8, 3, 2.719, seed=1)
        h = HashFunction(a[0], float(b[0]), 2.719)
        rng = np.random.default_rng(0)
        p, q = rng.standard_normal(8), rng.standard_normal(8)
        assert project(h, p) - project(h, q) == pytest.approx(float(a[0] @ (p - q)) / 2.719)

    def test_zero_vector_gives_offset(self):
        h = HashFunction(np.ones(4), 1.5, 3.0)
        assert project(h, np.zeros(4)) == 0.5

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            project(HashFunction(np.ones(4), 0.0, 1.0), np.ones(3))

    def test_seeded(self):
        a1, b1 = sample_functions(5, 4, 2.0, 3)
        a2, b2 = sample_functions(5, 4, 2.0, 3)
        assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
        assert np.all((b1 >= 0) & (b1 < 2.0))


class TestIndexFiles:
    def test_layout(self, small_index_dir, small_ds, params):
        files = sorted(p.name for p in small_index_dir.iterdir())
        assert sum(name.endswith(".tree") for name in files) == params.m
        assert "header" in files and "data.bin" in files
        assert (small_index_dir / "data.bin").stat().st_size == small_ds.n * small_ds.d * 8
        h = read_header(small_index_dir)
        assert (h["n"], h["d"], h["m"], h["seed"]) == (small_ds.n, small_ds.d, params.m, 1)

    def test_every_tree_holds_all_ids(self, tmp_path):
        params = derive_params(delta=0.9)
        ds = GaussianMixture(8, seed=0).dataset(500, 8)
        build_index(ds, params, 0, tmp_path)
        cache = BufferCache(CacheConfig(400 * 4096, 0.5), params.m)
        idx = open_index(tmp_path, cache)
        assert len(idx.trees) == params.m
        for tree in idx.trees:
            ids = np.concatenate([i for _, i in tree.iter_all(cache)])
            assert sorted(ids) == list(range(500))
        cache.close()

    def test_open_round_trip(self, small_cache, small_ds):
        idx, cache = small_cache
        np.testing.assert_array_equal(idx.read_record(123), small_ds.vectors[123])
        assert cache.io_report().data_misses >= 1
        assert set(cache.registered) == set(range(idx.m)) | {DATA_FILE}

    def test_keys_match_projection(self, small_cache, small_ds):
        idx, cache = small_cache
        keys, ids = next(idx.trees[0].iter_all(cache))
        expected = idx.project_all(small_ds.vectors[ids])[:, 0]
        np.testing.assert_allclose(keys, expected, rtol=0, atol=1e-12)

    def test_corrupt_magic(self, tmp_path, small_ds, params):
        build_index(small_ds, params, 0, tmp_path)
        raw = bytearray((tmp_path / "header").read_bytes())
        raw[:4] = b"NOPE"
        (tmp_path / "header").write_bytes(bytes(raw))
        with pytest.raises(IndexFormatError):
            open_index(tmp_path)

    def test_missing_header(self, tmp_path):
        with pytest.raises(IndexFormatError):
            open_index(tmp_path)

    def test_header_struct_size(self):
        assert HEADER.size == struct.calcsize("<4sQQIdddQI")

    def test_mismatched_cache(self, small_index_dir):
        cache = BufferCache(CacheConfig(100 * 4096, 0.5), 5)
        with pytest.raises(ValueError):
            open_index(small_index_dir, cache)
