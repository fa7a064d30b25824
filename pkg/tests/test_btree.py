import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwlsh.btree import (
    ForeignCursorError,
    PagedTree,
    TreeFormatError,
    TreeHeader,
    leaf_capacity,
    range_scan,
    write_tree,
)
from qwlsh.storage import BufferCache, CacheConfig, PagedFile, Strategy


def open_tree(tmp_path, keys, ids=None, page_size=4096, name="t.tree", cache=None):
    keys = np.asarray(keys, dtype=float)
    ids = np.arange(keys.size) if ids is None else np.asarray(ids)
    path = tmp_path / name
    write_tree(path, keys, ids, page_size)
    if cache is None:
        cache = BufferCache(CacheConfig(4096 * page_size, 0.5, Strategy.UNIFIED, page_size), 2)
    file_id = 0 if name == "t.tree" else 1
    paged = PagedFile(path, page_size)
    cache.register(file_id, paged)
    return PagedTree(file_id, TreeHeader.unpack(paged.read(0)), path), cache


class TestLayout:
    def test_leaf_capacity(self):
        assert leaf_capacity(4096) == 254

    def test_header_fields(self, tmp_path):
        tree, cache = open_tree(tmp_path, np.arange(1000.0))
        h = tree.header
        assert h.entries == 1000 and h.leaf_count == 4 and h.height == 2
        cache.close()

    def test_bad_magic(self):
        with pytest.raises(TreeFormatError):
            TreeHeader.unpack(b"XXXX" + bytes(60))

    def test_rebuild_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        keys = rng.standard_normal(3000)
        write_tree(tmp_path / "a", keys, np.arange(3000), 4096)
        write_tree(tmp_path / "b", keys, np.arange(3000), 4096)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


class TestRangeScan:
    def test_small_example(self, tmp_path):
        keys = np.arange(1.0, 11.0)
        tree, cache = open_tree(tmp_path, keys)
        ids, cursor = range_scan(tree, cache, 3.5, 6.2)
        assert sorted(keys[ids]) == [4.0, 5.0, 6.0]
        more, _ = range_scan(tree, cache, 2.5, 7.2, cursor)
        assert sorted(keys[more]) == [3.0, 7.0]
        cache.close()

    def test_inclusive_bounds(self, tmp_path):
        tree, cache = open_tree(tmp_path, [1.0, 2.0, 3.0])
        ids, _ = range_scan(tree, cache, 1.0, 3.0)
        assert sorted(ids) == [0, 1, 2]
        cache.close()

    def test_outside_range_is_empty(self, tmp_path):
        tree, cache = open_tree(tmp_path, [1.0, 2.0, 3.0])
        assert range_scan(tree, cache, 5.0, 6.0)[0].size == 0
        assert range_scan(tree, cache, -6.0, -5.0)[0].size == 0
        cache.close()

    def test_foreign_cursor(self, tmp_path):
        tree_a, cache = open_tree(tmp_path, [1.0, 2.0])
        tree_b, _ = open_tree(tmp_path, [1.0, 2.0], name="u.tree", cache=cache)
        _, cursor = range_scan(tree_a, cache, 0.0, 1.5)
        with pytest.raises(ForeignCursorError):
            range_scan(tree_b, cache, 0.0, 3.0, cursor)
        cache.close()

    def test_full_scan_chain(self, tmp_path):
        rng = np.random.default_rng(7)
        keys = rng.standard_normal(5000)
        tree, cache = open_tree(tmp_path, keys)
        seen_keys, seen_ids = zip(*tree.iter_all(cache))
        all_keys = np.concatenate(seen_keys)
        all_ids = np.concatenate(seen_ids)
        assert np.all(np.diff(all_keys) >= 0)
        assert sorted(all_ids) == list(range(5000))
        cache.close()

    def test_scans_go_through_cache(self, tmp_path):
        tree, cache = open_tree(tmp_path, np.arange(2000.0))
        range_scan(tree, cache, 0.0, 1999.0)
        io = cache.io_report()
        # root + every leaf, each read once
        assert io.index_misses == 1 + tree.header.leaf_count
        cache.close()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 1500),
           st.lists(st.floats(0.01, 3.0), min_size=1, max_size=5))
    def test_widening_equals_single_scan(self, tmp_path_factory, seed, n, steps):
        tmp = tmp_path_factory.mktemp("widen")
        rng = np.random.default_rng(seed)
        keys = np.round(rng.standard_normal(n), 1)  # many duplicate keys
        tree, cache = open_tree(tmp, keys)
        centre = float(rng.standard_normal())
        half = 0.05
        ids, cursor = range_scan(tree, cache, centre - half, centre + half)
        collected = list(ids)
        for step in steps:
            half += step
            more, cursor = range_scan(tree, cache, centre - half, centre + half, cursor)
            collected.extend(more)
        assert len(collected) == len(set(collected))
        expected = np.flatnonzero((keys >= centre - half) & (keys <= centre + half))
        assert sorted(collected) == sorted(expected)
        cache.close()
