"""Paged files and the partitioned MRU buffer cache.

Every disk page that the engine touches goes through a :class:`BufferCache`.
The cache is split into an index partition and a data partition (or one
unified partition), each evicting its most-recently-used page when full.
Misses are charged to IndexIO or DataIO by the kind of file they belong to.
"""

from __future__ import annotations

import enum
import mmap
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, NamedTuple

DEFAULT_PAGE_SIZE = 4096
DATA_FILE = -1
MIN_FRACTION = 0.01
MAX_FRACTION = 0.99


class CacheConfigError(ValueError):
    pass


class Strategy(enum.Enum):
    """How the index partition is organised.

    STRATEGY1 gives each projection its own MRU sub-cache, STRATEGY2 shares
    one MRU list across all projections, and UNIFIED puts index and data
    pages into a single MRU list (the naive baseline).
    """

    STRATEGY1 = "1"
    STRATEGY2 = "2"
    UNIFIED = "unified"

    @classmethod
    def parse(cls, value: "Strategy | str | int") -> "Strategy":
        if isinstance(value, cls):
            return value
        text = str(value).lower()
        aliases = {"1": cls.STRATEGY1, "strategy1": cls.STRATEGY1,
                   "2": cls.STRATEGY2, "strategy2": cls.STRATEGY2,
                   "unified": cls.UNIFIED, "naive": cls.UNIFIED}
        try:
            return aliases[text]
        except KeyError:
            raise ValueError(f"unknown strategy {value!r}") from None


class PageId(NamedTuple):
    file: int
    page_no: int


@dataclass(frozen=True)
class CacheConfig:
    total_bytes: int
    index_fraction: float = 0.5
    strategy: Strategy = Strategy.STRATEGY1
    page_size: int = DEFAULT_PAGE_SIZE

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.page_size <= 0:
            raise CacheConfigError("page_size must be positive")
        if self.strategy is not Strategy.UNIFIED and not (
            MIN_FRACTION <= self.index_fraction <= MAX_FRACTION
        ):
            raise CacheConfigError(
                f"index_fraction must be in [{MIN_FRACTION}, {MAX_FRACTION}], "
                f"got {self.index_fraction}"
            )

    @classmethod
    def from_mb(cls, megabytes: float, index_fraction: float = 0.5,
                strategy: Strategy | str = Strategy.STRATEGY1,
                page_size: int = DEFAULT_PAGE_SIZE) -> "CacheConfig":
        return cls(int(megabytes * 1024 * 1024), index_fraction, Strategy.parse(strategy), page_size)

    @property
    def total_pages(self) -> int:
        return self.total_bytes // self.page_size

    def partition_pages(self, m: int) -> tuple[list[int], int]:
        """Return ``(index sub-cache sizes, data pages)`` in pages.

        The index share is floored to whole pages and then clamped so every
        partition keeps at least one page (one per projection under
        Strategy 1). Unified mode returns ``([], total_pages)``.
        """
        total = self.total_pages
        if self.strategy is Strategy.UNIFIED:
            if total < 1:
                raise CacheConfigError("cache smaller than one page")
            return [], total
        min_index = m if self.strategy is Strategy.STRATEGY1 else 1
        if total < min_index + 1:
            raise CacheConfigError(
                f"{total} pages cannot hold {min_index} index page(s) plus one data page"
            )
        index_pages = int(total * self.index_fraction)
        index_pages = min(max(index_pages, min_index), total - 1)
        data_pages = total - index_pages
        if self.strategy is Strategy.STRATEGY2:
            return [index_pages], data_pages
        base, extra = divmod(index_pages, m)
        return [base + (1 if i < extra else 0) for i in range(m)], data_pages


@dataclass
class IoCounters:
    index_io_bytes: int = 0
    data_io_bytes: int = 0
    index_hits: int = 0
    data_hits: int = 0
    index_misses: int = 0
    data_misses: int = 0

    @property
    def total_io_bytes(self) -> int:
        return self.index_io_bytes + self.data_io_bytes

    def __sub__(self, other: "IoCounters") -> "IoCounters":
        return IoCounters(
            self.index_io_bytes - other.index_io_bytes,
            self.data_io_bytes - other.data_io_bytes,
            self.index_hits - other.index_hits,
            self.data_hits - other.data_hits,
            self.index_misses - other.index_misses,
            self.data_misses - other.data_misses,
        )


class MruCache:
    """Fixed-capacity page store that evicts the most recently used entry.

    Backed by an ``OrderedDict`` (a hash map threaded by a doubly linked
    list): the last entry is always the most recent one.
    """

    __slots__ = ("capacity", "_entries", "hits", "misses")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise CacheConfigError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: Hashable) -> bool:
        return key in self._entries

    def recency(self) -> list:
        """Resident keys from least to most recently used."""
        return list(self._entries)

    def access(self, key: Hashable, load=None):
        """Look ``key`` up, loading and inserting it on a miss.

        Returns ``(hit, value, evicted_key)``. ``load`` is called with no
        arguments to produce the value on a miss; without it the cache only
        tracks residency.
        """
        entries = self._entries
        if key in entries:
            entries.move_to_end(key)
            self.hits += 1
            return True, entries[key], None
        self.misses += 1
        evicted = None
        if len(entries) >= self.capacity:
            evicted, _ = entries.popitem(last=True)
        value = load() if load is not None else None
        entries[key] = value
        return False, value, evicted

    def clear(self) -> None:
        self._entries.clear()
        self.hits = 0
        self.misses = 0


class PagedFile:
    """Read-only page view over a file on disk."""

    def __init__(self, path: str | Path, page_size: int = DEFAULT_PAGE_SIZE):
        self.path = Path(path)
        self.page_size = page_size
        self.size = os.path.getsize(self.path)
        self.page_count = (self.size + page_size - 1) // page_size
        self._fh = open(self.path, "rb")
        self._map = mmap.mmap(self._fh.fileno(), 0, access=mmap.ACCESS_READ) if self.size else b""

    def read(self, page_no: int) -> bytes:
        start = page_no * self.page_size
        return self._map[start:start + self.page_size]

    def close(self) -> None:
        if isinstance(self._map, mmap.mmap):
            self._map.close()
        self._fh.close()

    def __repr__(self) -> str:
        return f"PagedFile({self.path.name!r}, pages={self.page_count})"


@dataclass
class _Partition:
    name: str
    cache: MruCache
    files: set = field(default_factory=set)


class BufferCache:
    """Partitioned page cache with exact IO accounting.

    Files are registered under integer ids: ``0 .. m-1`` are projection
    index files and :data:`DATA_FILE` is the record file. A cache built
    without backing files (``register_sizes``) only tracks residency, which
    is what trace replay uses.
    """

    def __init__(self, config: CacheConfig, m: int):
        if m < 1:
            raise CacheConfigError("m must be >= 1")
        self.config = config
        self.m = m
        self.page_size = config.page_size
        index_sizes, data_pages = config.partition_pages(m)
        self.partitions: list[_Partition] = []
        self._route: dict[int, MruCache] = {}
        if config.strategy is Strategy.UNIFIED:
            unified = _Partition("unified", MruCache(data_pages))
            self.partitions.append(unified)
            for i in range(m):
                self._route[i] = unified.cache
            self._route[DATA_FILE] = unified.cache
        else:
            if config.strategy is Strategy.STRATEGY1:
                for i, size in enumerate(index_sizes):
                    part = _Partition(f"index[{i}]", MruCache(size), {i})
                    self.partitions.append(part)
                    self._route[i] = part.cache
            else:
                shared = _Partition("index", MruCache(index_sizes[0]), set(range(m)))
                self.partitions.append(shared)
                for i in range(m):
                    self._route[i] = shared.cache
            data = _Partition("data", MruCache(data_pages), {DATA_FILE})
            self.partitions.append(data)
            self._route[DATA_FILE] = data.cache
        self.index_pages = sum(index_sizes)
        self.data_pages = data_pages
        self._files: dict[int, PagedFile | None] = {}
        self._page_counts: dict[int, int] = {}
        self._counters = IoCounters()
        self.trace: list[tuple[int, int]] | None = None

    # -- registration -----------------------------------------------------

    def register(self, file_id: int, paged: PagedFile) -> None:
        if file_id not in self._route:
            raise KeyError(f"file id {file_id} has no partition (m={self.m})")
        if paged.page_size != self.page_size:
            raise CacheConfigError(
                f"file page size {paged.page_size} != cache page size {self.page_size}"
            )
        previous = self._files.get(file_id)
        if previous is not None and previous is not paged:
            previous.close()
        self._files[file_id] = paged
        self._page_counts[file_id] = paged.page_count

    def register_sizes(self, page_counts: dict[int, int]) -> None:
        for file_id, count in page_counts.items():
            if file_id not in self._route:
                raise KeyError(f"file id {file_id} has no partition (m={self.m})")
            self._files[file_id] = None
            self._page_counts[file_id] = count

    @property
    def registered(self) -> dict[int, int]:
        return dict(self._page_counts)

    # -- access -------------------------------------------------------------

    def _check(self, file_id: int, page_no: int) -> None:
        count = self._page_counts.get(file_id)
        if count is None:
            raise KeyError(f"file {file_id} is not registered with this cache")
        if not 0 <= page_no < count:
            raise IndexError(f"page {page_no} out of range for file {file_id} ({count} pages)")

    def read_page(self, file_id: int, page_no: int) -> bytes:
        """Return page bytes, charging a miss to IndexIO or DataIO."""
        self._check(file_id, page_no)
        paged = self._files[file_id]
        loader = None if paged is None else (lambda: paged.read(page_no))
        hit, page, _ = self._access(file_id, page_no, loader)
        return page

    def touch(self, file_id: int, page_no: int) -> bool:
        """Account for one access without reading bytes; returns True on a hit."""
        self._check(file_id, page_no)
        return self._access(file_id, page_no, None)[0]

    def _access(self, file_id, page_no, loader):
        key = (file_id, page_no)
        if self.trace is not None:
            self.trace.append(key)
        hit, page, evicted = self._route[file_id].access(key, loader)
        c = self._counters
        if file_id == DATA_FILE:
            if hit:
                c.data_hits += 1
            else:
                c.data_misses += 1
                c.data_io_bytes += self.page_size
        else:
            if hit:
                c.index_hits += 1
            else:
                c.index_misses += 1
                c.index_io_bytes += self.page_size
        return hit, page, evicted

    def replay(self, trace: Iterable[tuple[int, int]]) -> IoCounters:
        """Feed an access trace through the cache and return the counters."""
        for file_id, page_no in trace:
            self.touch(file_id, page_no)
        return self.io_report()

    def resident(self, file_id: int | None = None) -> list[PageId]:
        pages = [PageId(*key) for part in self.partitions for key in part.cache.recency()]
        if file_id is None:
            return pages
        return [p for p in pages if p.file == file_id]

    # -- reporting ----------------------------------------------------------

    def io_report(self) -> IoCounters:
        c = self._counters
        return IoCounters(c.index_io_bytes, c.data_io_bytes, c.index_hits,
                          c.data_hits, c.index_misses, c.data_misses)

    def reset(self) -> None:
        """Drain every partition and zero the counters; configuration is kept."""
        for part in self.partitions:
            part.cache.clear()
        self._counters = IoCounters()
        if self.trace is not None:
            self.trace = []

    def start_trace(self) -> None:
        self.trace = []

    def stop_trace(self) -> list[tuple[int, int]]:
        trace, self.trace = self.trace or [], None
        return trace

    def capacities(self) -> list[int]:
        return [part.cache.capacity for part in self.partitions]

    def close(self) -> None:
        for paged in self._files.values():
            if paged is not None:
                paged.close()
        self._files.clear()
        self._page_counts.clear()


def replay_trace(trace: list[tuple[int, int]], page_counts: dict[int, int],
                 config: CacheConfig, m: int) -> IoCounters:
    """Cold-cache replay of a recorded page trace under ``config``."""
    cache = BufferCache(config, m)
    cache.register_sizes(page_counts)
    route = cache._route
    page_size = config.page_size
    index_miss = data_miss = index_hit = data_hit = 0
    # tight loop equivalent to BufferCache.touch, without per-access checks
    for key in trace:
        part = route[key[0]]
        entries = part._entries
        if key in entries:
            entries.move_to_end(key)
            part.hits += 1
            if key[0] == DATA_FILE:
                data_hit += 1
            else:
                index_hit += 1
            continue
        part.misses += 1
        if len(entries) >= part.capacity:
            entries.popitem(last=True)
        entries[key] = None
        if key[0] == DATA_FILE:
            data_miss += 1
        else:
            index_miss += 1
    return IoCounters(index_miss * page_size, data_miss * page_size,
                      index_hit, data_hit, index_miss, data_miss)
