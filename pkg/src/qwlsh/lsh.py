"""Euclidean LSH family, collision-counting parameters, and the on-disk index."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .btree import PagedTree, TreeHeader, write_tree
from .core import MAX_K, Dataset
from .storage import DATA_FILE, DEFAULT_PAGE_SIZE, BufferCache, PagedFile

DEFAULT_C = 2.0
DEFAULT_W = 2.719
DEFAULT_DELTA = 1.0 / math.e
FALSE_POSITIVES = 100

HEADER_MAGIC = b"QWL1"
# magic, n, d, m, c, W, delta, seed, page size
HEADER = struct.Struct("<4sQQIdddQI")

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class IndexFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Collision probability
# ---------------------------------------------------------------------------


def _adaptive_simpson(f, a: float, b: float, tol: float, max_depth: int = 50) -> float:
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def collision_probability(r: float, width: float, tol: float = 1e-6) -> float:
    """Probability that two points at distance ``r`` share a bucket of width ``width``.

    Integrates ``(1/r) * 2/sqrt(2*pi) * exp(-t^2 / (2 r^2)) * (1 - t/width)``
    over ``[0, width]``.
    """
    if not r > 0 or not width > 0:
        raise ValueError(f"r and width must be positive, got r={r}, width={width}")

    def integrand(t: float) -> float:
        return 2.0 / (r * _SQRT_2PI) * math.exp(-t * t / (2.0 * r * r)) * (1.0 - t / width)

    # split at a few multiples of r so the Gaussian bump is never skipped
    knots = sorted({0.0, width, *(x for x in (r, 4.0 * r, 10.0 * r) if x < width)})
    total = 0.0
    for a, b in zip(knots, knots[1:]):
        total += _adaptive_simpson(integrand, a, b, tol / len(knots))
    return min(1.0, max(0.0, total))


@dataclass(frozen=True)
class LshParams:
    c: float
    width: float
    delta: float
    p1: float
    p2: float
    m: int
    threshold: int
    false_positives: int = FALSE_POSITIVES
    k_max: int = MAX_K

    @property
    def alpha(self) -> float:
        return 0.5 * (self.p1 + self.p2)

    @property
    def max_candidates(self) -> int:
        return self.k_max + self.false_positives

    def candidate_budget(self, k: int) -> int:
        return k + self.false_positives


def derive_params(c: float = DEFAULT_C, width: float = DEFAULT_W, delta: float = DEFAULT_DELTA,
                  n: int | None = None, k_max: int = MAX_K,
                  false_positives: int = FALSE_POSITIVES) -> LshParams:
    """Projection count and collision threshold for collision counting.

    Uses the midpoint threshold ``alpha = (p1 + p2) / 2`` and a Hoeffding
    bound, ``m = ceil(ln(1/delta) / (2 (p1 - alpha)^2))`` and
    ``threshold = ceil(alpha * m)``. ``n`` does not enter the formulas; it is
    accepted for call-site symmetry with the index builder.
    """
    if not c > 1:
        raise ValueError(f"approximation ratio must exceed 1, got {c}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if n is not None and n < 1:
        raise ValueError("n must be >= 1")
    p1 = collision_probability(1.0, width)
    p2 = collision_probability(c, width)
    if not p1 > p2:
        raise ValueError(f"family is not sensitive: p1={p1} <= p2={p2}")
    alpha = 0.5 * (p1 + p2)
    m = math.ceil(math.log(1.0 / delta) / (2.0 * (p1 - alpha) ** 2))
    threshold = min(m, max(1, math.ceil(alpha * m)))
    return LshParams(c, width, delta, p1, p2, m, threshold, false_positives, k_max)


# ---------------------------------------------------------------------------
# Hash functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HashFunction:
    a: np.ndarray
    b: float
    width: float

    def __call__(self, p: np.ndarray) -> float:
        return project(self, p)


def project(h: HashFunction, p: np.ndarray) -> float:
    """Unfloored hash value ``(a . p + b) / width``."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != h.a.shape:
        raise ValueError(f"dimension mismatch: point {p.shape} vs function {h.a.shape}")
    return (float(h.a @ p) + h.b) / h.width


def sample_functions(d: int, m: int, width: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Projection matrix (m x d) and offsets, fixed by ``seed``."""
    rng = np.random.default_rng([seed, d, m])
    a = rng.standard_normal((m, d))
    b = rng.uniform(0.0, width, size=m)
    return a, b


# ---------------------------------------------------------------------------
# Index build / open
# ---------------------------------------------------------------------------


def tree_name(i: int) -> str:
    return f"proj_{i}.tree"


@dataclass
class LshIndex:
    params: LshParams
    a: np.ndarray
    b: np.ndarray
    n: int
    d: int
    name: str
    seed: int
    directory: Path
    page_size: int = DEFAULT_PAGE_SIZE
    trees: list[PagedTree] | None = None
    cache: BufferCache | None = None

    @property
    def m(self) -> int:
        return self.params.m

    @property
    def record_bytes(self) -> int:
        return self.d * 8

    @property
    def functions(self) -> list[HashFunction]:
        return [HashFunction(self.a[i], float(self.b[i]), self.params.width) for i in range(self.m)]

    def project_all(self, coords: np.ndarray) -> np.ndarray:
        """Keys of one point (or a batch of points) under all m functions."""
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[-1] != self.d:
            raise ValueError(f"dimension mismatch: {coords.shape[-1]} != {self.d}")
        return (coords @ self.a.T + self.b) / self.params.width

    def record_pages(self, point_id: int) -> range:
        start = point_id * self.record_bytes
        return range(start // self.page_size, (start + self.record_bytes - 1) // self.page_size + 1)

    def page_counts(self) -> dict[int, int]:
        """Pages per registered file id, read from the files on disk."""
        counts = {}
        for i in range(self.m):
            size = (self.directory / tree_name(i)).stat().st_size
            counts[i] = -(-size // self.page_size)
        counts[DATA_FILE] = -(-(self.directory / "data.bin").stat().st_size // self.page_size)
        return counts

    def total_bytes(self) -> int:
        return sum(self.page_counts().values()) * self.page_size

    def read_record(self, point_id: int) -> np.ndarray:
        """Fetch one record through the attached cache's data partition."""
        if not 0 <= point_id < self.n:
            raise IndexError(f"point id {point_id} out of range [0, {self.n})")
        start = point_id * self.record_bytes
        first = start // self.page_size
        last = (start + self.record_bytes - 1) // self.page_size
        read = self.cache.read_page
        if first == last:
            page = read(DATA_FILE, first)
            off = start - first * self.page_size
            return np.frombuffer(page, dtype="<f8", count=self.d, offset=off)
        buf = b"".join(read(DATA_FILE, p) for p in range(first, last + 1))
        return np.frombuffer(buf, dtype="<f8", count=self.d, offset=start - first * self.page_size)


def _write_header(path: Path, n: int, d: int, params: LshParams, seed: int, page_size: int) -> None:
    path.write_bytes(HEADER.pack(HEADER_MAGIC, n, d, params.m, params.c, params.width,
                                 params.delta, seed, page_size))


def read_header(directory: str | Path) -> dict:
    path = Path(directory) / "header"
    if not path.exists():
        raise IndexFormatError(f"missing index header in {directory}")
    raw = path.read_bytes()
    if len(raw) != HEADER.size:
        raise IndexFormatError(f"corrupt header: {len(raw)} bytes, expected {HEADER.size}")
    magic, n, d, m, c, width, delta, seed, page_size = HEADER.unpack(raw)
    if magic != HEADER_MAGIC:
        raise IndexFormatError(f"bad magic {magic!r}")
    return dict(n=n, d=d, m=m, c=c, width=width, delta=delta, seed=seed, page_size=page_size)


def build_index(ds: Dataset, params: LshParams | None = None, seed: int = 0,
                directory: str | Path = "index", page_size: int = DEFAULT_PAGE_SIZE) -> LshIndex:
    """Write header, ``m`` projection trees and the record file into ``directory``."""
    if ds.n < 1:
        raise ValueError("cannot index an empty dataset")
    params = params or derive_params()
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    a, b = sample_functions(ds.d, params.m, params.width, seed)
    ids = np.arange(ds.n, dtype=np.uint64)
    # row blocks keep the projection buffer small for large n*d
    keys = np.empty((params.m, ds.n))
    step = max(1, (1 << 22) // max(ds.d, 1))
    for lo in range(0, ds.n, step):
        hi = min(ds.n, lo + step)
        keys[:, lo:hi] = ((ds.vectors[lo:hi] @ a.T + b) / params.width).T
    for i in range(params.m):
        write_tree(out / tree_name(i), keys[i], ids, page_size)
    with open(out / "data.bin", "wb") as fh:
        for lo in range(0, ds.n, step):
            fh.write(ds.vectors[lo:lo + step].astype("<f8", copy=False).tobytes())
    _write_header(out / "header", ds.n, ds.d, params, seed, page_size)
    return LshIndex(params, a, b, ds.n, ds.d, ds.name, seed, out, page_size)


def open_index(directory: str | Path, cache: BufferCache | None = None,
               k_max: int = MAX_K, false_positives: int = FALSE_POSITIVES) -> LshIndex:
    """Open a built index; with a cache, register all files so reads go through it."""
    out = Path(directory)
    h = read_header(out)
    params = derive_params(h["c"], h["width"], h["delta"], h["n"], k_max, false_positives)
    if params.m != h["m"]:
        raise IndexFormatError(f"header m={h['m']} disagrees with derived m={params.m}")
    a, b = sample_functions(h["d"], params.m, params.width, h["seed"])
    idx = LshIndex(params, a, b, h["n"], h["d"], out.name, h["seed"], out, h["page_size"])
    if cache is not None:
        attach(idx, cache)
    return idx


def attach(idx: LshIndex, cache: BufferCache) -> LshIndex:
    """Register the index files with ``cache`` and route all page reads through it."""
    if cache.m != idx.m:
        raise ValueError(f"cache configured for m={cache.m}, index has m={idx.m}")
    if cache.page_size != idx.page_size:
        raise ValueError(f"cache page size {cache.page_size} != index page size {idx.page_size}")
    trees = []
    for i in range(idx.m):
        paged = PagedFile(idx.directory / tree_name(i), idx.page_size)
        cache.register(i, paged)
        header = TreeHeader.unpack(paged.read(0))
        if header.entries != idx.n:
            raise IndexFormatError(f"tree {i} holds {header.entries} entries, expected {idx.n}")
        trees.append(PagedTree(i, header, paged.path))
    cache.register(DATA_FILE, PagedFile(idx.directory / "data.bin", idx.page_size))
    idx.trees = trees
    idx.cache = cache
    return idx

