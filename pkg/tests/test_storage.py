import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwlsh.storage import (
    DATA_FILE,
    BufferCache,
    CacheConfig,
    CacheConfigError,
    MruCache,
    PagedFile,
    Strategy,
    replay_trace,
)

MB = 1024 * 1024


def reference_mru(trace, capacity):
    """List-based MRU: the list tail is the most recent page."""
    resident: list = []
    out = []
    for key in trace:
        if key in resident:
            resident.remove(key)
            resident.append(key)
            out.append(True)
            continue
        if len(resident) >= capacity:
            resident.pop()
        resident.append(key)
        out.append(False)
    return out, resident


class TestCacheConfig:
    def test_sixteen_mb_split(self):
        cfg = CacheConfig(16 * MB, 0.4, Strategy.STRATEGY2)
        assert cfg.total_pages == 4096
        assert cfg.partition_pages(37) == ([1638], 2458)

    def test_strategy1_remainder(self):
        cfg = CacheConfig(20 * 4096, 0.5, Strategy.STRATEGY1)
        assert cfg.partition_pages(4) == ([3, 3, 2, 2], 10)

    def test_max_fraction_keeps_data_page(self):
        cfg = CacheConfig(100 * 4096, 0.99, Strategy.STRATEGY2)
        index, data = cfg.partition_pages(4)
        assert data >= 1 and index[0] + data == 100

    def test_strategy1_minimum_one_page_per_projection(self):
        index, data = CacheConfig(50 * 4096, 0.01, Strategy.STRATEGY1).partition_pages(10)
        assert index == [1] * 10 and data == 40

    def test_unified(self):
        assert CacheConfig(8 * 4096, 0.3, Strategy.UNIFIED).partition_pages(5) == ([], 8)

    @pytest.mark.parametrize("frac", [0.0, 1.0, 0.005])
    def test_fraction_out_of_range(self, frac):
        with pytest.raises(CacheConfigError):
            CacheConfig(MB, frac)

    def test_too_small(self):
        with pytest.raises(CacheConfigError):
            CacheConfig(4 * 4096, 0.5, Strategy.STRATEGY1).partition_pages(4)

    def test_from_mb(self):
        assert CacheConfig.from_mb(16).total_bytes == 16 * MB

    @pytest.mark.parametrize("text,expected", [("1", Strategy.STRATEGY1), ("2", Strategy.STRATEGY2),
                                               ("unified", Strategy.UNIFIED)])
    def test_strategy_parse(self, text, expected):
        assert Strategy.parse(text) is expected

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 10_000), st.sampled_from([0.01, 0.1, 0.5, 0.9, 0.99]),
           st.sampled_from(list(Strategy)), st.integers(1, 40))
    def test_pages_conserved(self, pages, frac, strategy, m):
        cfg = CacheConfig(pages * 4096, frac, strategy)
        if strategy is Strategy.STRATEGY1 and pages < m + 1:
            return
        index, data = cfg.partition_pages(m)
        assert sum(index) + data == pages
        assert data >= 1 and all(size >= 1 for size in index)
        if strategy is Strategy.STRATEGY1:
            assert len(index) == m and max(index) - min(index) <= 1


class TestMru:
    def test_evicts_most_recent(self):
        cache = MruCache(2)
        for key in "ABC":
            cache.access(key)
        assert set(cache.recency()) == {"A", "C"}

    def test_hit_refreshes_recency(self):
        cache = MruCache(2)
        results = [cache.access(key)[0] for key in "ABAC"]
        assert results == [False, False, True, False]
        assert set(cache.recency()) == {"B", "C"}

    def test_evicted_key_reported(self):
        cache = MruCache(1)
        cache.access("x")
        assert cache.access("y")[2] == "x"

    def test_loader_called_on_miss_only(self):
        calls = []
        cache = MruCache(2)
        cache.access(1, lambda: calls.append(1) or "page")
        hit, value, _ = cache.access(1, lambda: calls.append(2) or "other")
        assert hit and value == "page" and calls == [1]

    def test_zero_capacity_rejected(self):
        with pytest.raises(CacheConfigError):
            MruCache(0)

    def test_long_trace_matches_reference(self):
        rng = random.Random(3)
        trace = [rng.randrange(40) for _ in range(10_000)]
        cache = MruCache(16)
        got = [cache.access(k)[0] for k in trace]
        expected, resident = reference_mru(trace, 16)
        assert got == expected
        assert cache.recency() == resident


class TestBufferCache:
    def _cache(self, strategy=Strategy.STRATEGY1, pages=12, frac=0.5, m=2):
        cache = BufferCache(CacheConfig(pages * 4096, frac, strategy), m)
        cache.register_sizes({0: 100, 1: 100, DATA_FILE: 100})
        return cache

    def test_attribution(self):
        cache = self._cache()
        cache.touch(0, 0)
        cache.touch(0, 0)
        cache.touch(DATA_FILE, 5)
        io = cache.io_report()
        assert (io.index_io_bytes, io.data_io_bytes) == (4096, 4096)
        assert (io.index_hits, io.index_misses, io.data_misses) == (1, 1, 1)
        assert io.total_io_bytes == 8192

    def test_reset(self):
        cache = self._cache()
        for p in range(10):
            cache.touch(DATA_FILE, p)
        cache.reset()
        assert cache.io_report().total_io_bytes == 0
        assert cache.resident() == []
        assert cache.capacities() == [3, 3, 6]

    def test_unregistered_and_out_of_range(self):
        cache = BufferCache(CacheConfig(12 * 4096), 2)
        with pytest.raises(KeyError):
            cache.touch(0, 0)
        cache.register_sizes({0: 3})
        with pytest.raises(IndexError):
            cache.touch(0, 3)

    def test_unknown_file_id(self):
        cache = BufferCache(CacheConfig(12 * 4096), 2)
        with pytest.raises(KeyError):
            cache.register_sizes({5: 1})

    def test_read_page_bytes(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(bytes(range(256)) * 32)  # two pages
        cache = BufferCache(CacheConfig(12 * 4096), 2)
        cache.register(DATA_FILE, PagedFile(path))
        assert cache.read_page(DATA_FILE, 1) == (bytes(range(256)) * 32)[4096:]
        assert cache.read_page(DATA_FILE, 1) == (bytes(range(256)) * 32)[4096:]
        assert cache.io_report().data_misses == 1
        cache.close()

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0, 1]), st.integers(0, 30)), max_size=300),
           st.lists(st.integers(0, 30), max_size=300))
    def test_index_traffic_does_not_disturb_data(self, index_trace, data_trace):
        # same data accesses, with and without interleaved index accesses
        alone = self._cache()
        for p in data_trace:
            alone.touch(DATA_FILE, p)
        mixed = self._cache()
        rest = list(index_trace)
        for p in data_trace:
            if rest:
                mixed.touch(*rest.pop())
            mixed.touch(DATA_FILE, p)
        for key in rest:
            mixed.touch(*key)
        assert mixed.io_report().data_io_bytes == alone.io_report().data_io_bytes
        assert mixed.resident(DATA_FILE) == alone.resident(DATA_FILE)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0, 1, DATA_FILE]), st.integers(0, 30)),
                    max_size=400),
           st.sampled_from(list(Strategy)))
    def test_hits_plus_misses(self, trace, strategy):
        cache = self._cache(strategy)
        for key in trace:
            cache.touch(*key)
        io = cache.io_report()
        assert io.index_hits + io.index_misses + io.data_hits + io.data_misses == len(trace)
        assert io.total_io_bytes == 4096 * (io.index_misses + io.data_misses)
        for part in cache.partitions:
            assert len(part.cache) <= part.cache.capacity

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0, 1, DATA_FILE]), st.integers(0, 30)),
                    max_size=400),
           st.sampled_from(list(Strategy)), st.sampled_from([0.1, 0.5, 0.9]))
    def test_replay_equals_touch(self, trace, strategy, frac):
        cfg = CacheConfig(12 * 4096, frac, strategy)
        cache = BufferCache(cfg, 2)
        cache.register_sizes({0: 100, 1: 100, DATA_FILE: 100})
        for key in trace:
            cache.touch(*key)
        fast = replay_trace(trace, {0: 100, 1: 100, DATA_FILE: 100}, cfg, 2)
        assert fast == cache.io_report()
