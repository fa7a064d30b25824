"""Static paged B+-tree over (float64 key, uint64 id) pairs.

Layout, all little-endian, one node per page:

* page 0, tree header: magic ``QWBT``, page size, entry count, root page,
  first leaf, last leaf, height, leaf count.
* leaf page: ``kind=1 (u32) | count (u32) | prev (i64) | next (i64)`` then
  ``count`` entries of ``key (f64) | id (u64)`` sorted by (key, id).
* internal page: ``kind=2 (u32) | count (u32) | pad (8)`` then ``count``
  entries of ``min key of child (f64) | child page (u64)``.

Trees are bulk-loaded bottom-up and never modified afterwards.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .storage import BufferCache

MAGIC = b"QWBT"
LEAF = 1
INTERNAL = 2
NO_PAGE = -1

TREE_HEADER = struct.Struct("<4sIQqqqII")
NODE_HEADER = struct.Struct("<IIqq")
NODE_HEADER_SIZE = NODE_HEADER.size  # 24
ENTRY = np.dtype([("key", "<f8"), ("id", "<u8")])
CHILD = np.dtype([("key", "<f8"), ("child", "<u8")])


class TreeFormatError(ValueError):
    pass


def leaf_capacity(page_size: int) -> int:
    return (page_size - NODE_HEADER_SIZE) // ENTRY.itemsize


def internal_capacity(page_size: int) -> int:
    return (page_size - NODE_HEADER_SIZE) // CHILD.itemsize


@dataclass(frozen=True)
class TreeHeader:
    page_size: int
    entries: int
    root: int
    first_leaf: int
    last_leaf: int
    height: int
    leaf_count: int

    def pack(self) -> bytes:
        return TREE_HEADER.pack(MAGIC, self.page_size, self.entries, self.root,
                                self.first_leaf, self.last_leaf, self.height, self.leaf_count)

    @classmethod
    def unpack(cls, page: bytes) -> "TreeHeader":
        if len(page) < TREE_HEADER.size:
            raise TreeFormatError("tree header page is truncated")
        magic, *fields = TREE_HEADER.unpack_from(page, 0)
        if magic != MAGIC:
            raise TreeFormatError(f"bad tree magic {magic!r}")
        return cls(*fields)


def build_tree_bytes(keys: np.ndarray, ids: np.ndarray, page_size: int) -> bytes:
    """Bulk-load a tree and return the complete file image."""
    keys = np.asarray(keys, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.uint64)
    if keys.shape != ids.shape or keys.ndim != 1 or keys.size == 0:
        raise ValueError("keys and ids must be equal-length non-empty vectors")
    order = np.lexsort((ids, keys))
    entries = np.empty(keys.size, dtype=ENTRY)
    entries["key"] = keys[order]
    entries["id"] = ids[order]

    lcap = leaf_capacity(page_size)
    icap = internal_capacity(page_size)
    n_leaves = (keys.size + lcap - 1) // lcap
    pages: list[np.ndarray] = []  # one uint8 row per page after the header

    # leaves occupy pages 1..n_leaves
    leaf_img = np.zeros((n_leaves, page_size), dtype=np.uint8)
    level_keys = np.empty(n_leaves)
    for j in range(n_leaves):
        chunk = entries[j * lcap:(j + 1) * lcap]
        page_no = 1 + j
        prev = page_no - 1 if j > 0 else NO_PAGE
        nxt = page_no + 1 if j < n_leaves - 1 else NO_PAGE
        NODE_HEADER.pack_into(leaf_img[j], 0, LEAF, chunk.size, prev, nxt)
        leaf_img[j, NODE_HEADER_SIZE:NODE_HEADER_SIZE + chunk.nbytes] = chunk.view(np.uint8)
        level_keys[j] = chunk["key"][0]
    pages.append(leaf_img)

    level_pages = np.arange(1, n_leaves + 1)
    next_page = 1 + n_leaves
    height = 1
    while level_pages.size > 1:
        count = (level_pages.size + icap - 1) // icap
        img = np.zeros((count, page_size), dtype=np.uint8)
        parent_keys = np.empty(count)
        for j in range(count):
            child = np.empty(min(icap, level_pages.size - j * icap), dtype=CHILD)
            child["key"] = level_keys[j * icap:j * icap + child.size]
            child["child"] = level_pages[j * icap:j * icap + child.size]
            NODE_HEADER.pack_into(img[j], 0, INTERNAL, child.size, 0, 0)
            img[j, NODE_HEADER_SIZE:NODE_HEADER_SIZE + child.nbytes] = child.view(np.uint8)
            parent_keys[j] = child["key"][0]
        pages.append(img)
        level_pages = np.arange(next_page, next_page + count)
        level_keys = parent_keys
        next_page += count
        height += 1

    header = TreeHeader(page_size, int(keys.size), int(level_pages[0]), 1, n_leaves,
                        height, n_leaves)
    head = np.zeros(page_size, dtype=np.uint8)
    packed = header.pack()
    head[:len(packed)] = np.frombuffer(packed, dtype=np.uint8)
    return head.tobytes() + b"".join(img.tobytes() for img in pages)


def write_tree(path: str | Path, keys: np.ndarray, ids: np.ndarray, page_size: int) -> None:
    Path(path).write_bytes(build_tree_bytes(keys, ids, page_size))


def parse_node(page: bytes):
    """Return ``(kind, prev, next, entries)`` for a leaf or internal page."""
    kind, count, prev, nxt = NODE_HEADER.unpack_from(page, 0)
    if kind == LEAF:
        return kind, prev, nxt, np.frombuffer(page, dtype=ENTRY, count=count, offset=NODE_HEADER_SIZE)
    if kind == INTERNAL:
        return kind, prev, nxt, np.frombuffer(page, dtype=CHILD, count=count, offset=NODE_HEADER_SIZE)
    raise TreeFormatError(f"unknown node kind {kind}")


class ForeignCursorError(ValueError):
    pass


class ScanCursor:
    """Bidirectional resume point for widening range scans on one tree.

    ``right`` is the next (page, slot) to examine moving up the key order,
    ``left`` the next one moving down. A position with ``page == NO_PAGE``
    means that end of the leaf chain is exhausted. Entries between the two
    positions have already been yielded.
    """

    __slots__ = ("tree", "left_page", "left_slot", "right_page", "right_slot")

    def __init__(self, tree: "PagedTree", left: tuple[int, int], right: tuple[int, int]):
        self.tree = tree
        self.left_page, self.left_slot = left
        self.right_page, self.right_slot = right

    @property
    def exhausted(self) -> bool:
        return self.left_page == NO_PAGE and self.right_page == NO_PAGE

    def __repr__(self) -> str:
        return (f"ScanCursor(left=({self.left_page}, {self.left_slot}), "
                f"right=({self.right_page}, {self.right_slot}))")


class PagedTree:
    """Read handle whose page reads are all routed through a buffer cache."""

    def __init__(self, file_id: int, header: TreeHeader, path: Path | None = None):
        self.file_id = file_id
        self.header = header
        self.path = path

    @property
    def entries(self) -> int:
        return self.header.entries

    def _node(self, cache: BufferCache, page_no: int):
        return parse_node(cache.read_page(self.file_id, page_no))

    def seek(self, cache: BufferCache, key: float) -> ScanCursor:
        """Position a cursor at the first entry with entry key >= ``key``."""
        page_no = self.header.root
        while True:
            kind, prev, nxt, entries = self._node(cache, page_no)
            if kind == LEAF:
                break
            # last child whose minimum key is strictly below ``key``
            j = int(np.searchsorted(entries["key"], key, side="left")) - 1
            page_no = int(entries["child"][max(j, 0)])
        slot = int(np.searchsorted(entries["key"], key, side="left"))
        if slot < entries.size:
            right = (page_no, slot)
            left = (page_no, slot - 1) if slot > 0 else (prev, -1)
        else:
            # every key on this leaf is below ``key``; start on the next leaf
            right = (nxt, 0)
            left = (page_no, entries.size - 1)
        return ScanCursor(self, left, right)

    def scan_right(self, cache: BufferCache, cursor: ScanCursor, hi: float):
        """Yield id arrays, one per leaf, for entries with key <= ``hi``."""
        page_no, slot = cursor.right_page, cursor.right_slot
        while page_no != NO_PAGE:
            _, _, nxt, entries = self._node(cache, page_no)
            keys = entries["key"]
            end = int(np.searchsorted(keys, hi, side="right"))
            if end > slot:
                yield entries["id"][slot:end].astype(np.intp)
            if end < keys.size:
                slot = max(slot, end)
                break
            page_no, slot = nxt, 0
        cursor.right_page, cursor.right_slot = page_no, slot

    def scan_left(self, cache: BufferCache, cursor: ScanCursor, lo: float):
        """Yield id arrays, one per leaf, for entries with key >= ``lo``."""
        page_no, slot = cursor.left_page, cursor.left_slot
        while page_no != NO_PAGE:
            _, prev, _, entries = self._node(cache, page_no)
            keys = entries["key"]
            if slot < 0:
                slot = keys.size - 1
            start = int(np.searchsorted(keys, lo, side="left"))
            if start <= slot:
                yield entries["id"][start:slot + 1][::-1].astype(np.intp)
            if start > 0:
                slot = min(slot, start - 1)
                break
            page_no, slot = prev, -1
        cursor.left_page, cursor.left_slot = page_no, slot

    def scan(self, cache: BufferCache, lo: float, hi: float, cursor: ScanCursor | None = None):
        """Yield id chunks for keys in ``[lo, hi]`` not yielded through ``cursor`` before."""
        if lo > hi:
            raise ValueError(f"empty range [{lo}, {hi}]")
        if cursor is None:
            cursor = self.seek(cache, lo)
        elif cursor.tree is not self:
            raise ForeignCursorError("cursor belongs to a different tree")
        yield from self.scan_right(cache, cursor, hi)
        yield from self.scan_left(cache, cursor, lo)

    def iter_all(self, cache: BufferCache):
        """Walk the leaf chain from the first leaf, yielding (keys, ids) per leaf."""
        page_no = self.header.first_leaf
        while page_no != NO_PAGE:
            _, _, nxt, entries = self._node(cache, page_no)
            yield entries["key"].copy(), entries["id"].astype(np.intp)
            page_no = nxt


def range_scan(tree: PagedTree, cache: BufferCache, lo: float, hi: float,
               cursor: ScanCursor | None = None) -> tuple[np.ndarray, ScanCursor]:
    """Collect all ids with key in ``[lo, hi]`` that ``cursor`` has not yet covered.

    Without a cursor the scan is anchored at ``lo``. The returned cursor can be
    passed back with a wider range to receive only the new ids.
    """
    if cursor is None:
        if lo > hi:
            raise ValueError(f"empty range [{lo}, {hi}]")
        cursor = tree.seek(cache, lo)
    chunks = list(tree.scan(cache, lo, hi, cursor))
    ids = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.intp)
    return ids, cursor
