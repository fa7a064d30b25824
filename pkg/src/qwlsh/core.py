"""Domain types, dataset loaders, workload generation and the exact k-NN oracle."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

# Tie-breaking everywhere is by ascending point id.
DENSITY_SAMPLE = 1000
DENSITY_NEIGHBOR = 10
MAX_K = 100


class DatasetFormatError(ValueError):
    """Raised when an input file cannot be parsed into a dataset."""


@dataclass(frozen=True)
class Point:
    id: int
    coords: np.ndarray

    @property
    def d(self) -> int:
        return int(self.coords.shape[0])


@dataclass(frozen=True)
class Neighbor:
    id: int
    dist: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable n x d matrix of float64 coordinates.

    Point ids are the row positions, so they are dense in ``[0, n)`` by
    construction.
    """

    vectors: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        # read-only view; copies only when dtype/layout demand it
        v = np.ascontiguousarray(self.vectors, dtype=np.float64).view()
        if v.ndim != 2:
            raise ValueError(f"expected a 2-d matrix, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"dataset needs n >= 1 and d >= 1, got {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Point:
        if not 0 <= i < self.n:
            raise IndexError(f"point id {i} out of range [0, {self.n})")
        return Point(int(i), self.vectors[i])

    @property
    def points(self) -> Iterator[Point]:
        return (self[i] for i in range(self.n))

    def __repr__(self) -> str:
        return f"Dataset(name={self.name!r}, n={self.n}, d={self.d})"


@dataclass(frozen=True)
class QueryWorkload:
    queries: tuple[Point, ...]
    k: int
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.queries) < 1:
            raise ValueError("a workload needs at least one query")
        if not 1 <= self.k <= MAX_K:
            raise ValueError(f"k must be in [1, {MAX_K}], got {self.k}")

    def __len__(self) -> int:
        return len(self.queries)

    @property
    def ids(self) -> list[int]:
        return [q.id for q in self.queries]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{i}\n" for i in self.ids))

    @classmethod
    def load(cls, path: str | Path, ds: Dataset, k: int) -> "QueryWorkload":
        ids = [int(tok) for tok in Path(path).read_text().split()]
        return cls(tuple(ds[i] for i in ids), k)

    def prefix(self, count: int) -> "QueryWorkload":
        return QueryWorkload(self.queries[:count], self.k, self.seed)


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------


def load_fvecs(path: str | Path, name: str | None = None) -> Dataset:
    """Read a ``.fvecs`` file (int32 dimension header + float32 values per record)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DatasetFormatError("truncated file: missing dimension field")
    (d,) = struct.unpack_from("<i", raw, 0)
    if d <= 0:
        raise DatasetFormatError(f"invalid dimension {d}")
    record = 4 + 4 * d
    if len(raw) % record:
        raise DatasetFormatError(
            f"truncated file: {len(raw)} bytes is not a multiple of record size {record}"
        )
    words = np.frombuffer(raw, dtype="<i4").reshape(-1, d + 1)
    bad = np.flatnonzero(words[:, 0] != d)
    if bad.size:
        raise DatasetFormatError(
            f"inconsistent dimension at record {bad[0]}: {words[bad[0], 0]} != {d}"
        )
    values = words[:, 1:].view("<f4")
    return Dataset(values.astype(np.float64), name or Path(path).stem)


def write_fvecs(path: str | Path, vectors: np.ndarray) -> None:
    v = np.asarray(vectors, dtype="<f4")
    n, d = v.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = v.view("<i4")
    Path(path).write_bytes(out.tobytes())


def load_csv(path: str | Path, has_header: bool = False, name: str | None = None) -> Dataset:
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetFormatError(f"ragged row at line {lineno}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise DatasetFormatError(f"non-numeric cell at line {lineno}: {exc}") from None
    if not rows:
        raise DatasetFormatError("no data rows")
    return Dataset(np.array(rows), name or Path(path).stem)


def write_csv(path: str | Path, vectors: np.ndarray, header: Sequence[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in np.asarray(vectors):
            writer.writerow([repr(float(x)) for x in row])


def truncate_dims(ds: Dataset, d_new: int) -> Dataset:
    if not 1 <= d_new <= ds.d:
        raise ValueError(f"d_new must be in [1, {ds.d}], got {d_new}")
    if d_new == ds.d:
        return ds
    return Dataset(ds.vectors[:, :d_new], ds.name)


def subset(ds: Dataset, n_new: int, d_new: int | None = None) -> Dataset:
    """First ``n_new`` points, optionally truncated to ``d_new`` coordinates."""
    if not 1 <= n_new <= ds.n:
        raise ValueError(f"n_new must be in [1, {ds.n}], got {n_new}")
    d_new = ds.d if d_new is None else d_new
    if not 1 <= d_new <= ds.d:
        raise ValueError(f"d_new must be in [1, {ds.d}], got {d_new}")
    return Dataset(ds.vectors[:n_new, :d_new], f"{ds.name}-{n_new}x{d_new}")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


class GaussianMixture:
    """Deterministic Gaussian-mixture generator with the prefix property.

    Each cluster is ``center + U z + noise``: a ``latent_dim``-dimensional
    Gaussian mapped through a fixed random ``max_d x latent_dim`` basis plus
    small isotropic noise, which gives the low intrinsic dimensionality of
    real feature vectors. ``latent_dim=None`` gives isotropic clusters.

    ``dataset(n, d)`` returns the first n points and first d coordinates of
    one conceptual ``max_n x max_d`` matrix, so smaller lattice points are
    exact sub-datasets of larger ones. Rows are generated in fixed-size
    blocks, each from its own seeded stream.
    """

    BLOCK = 2048

    def __init__(
        self,
        max_d: int,
        seed: int = 0,
        clusters: int = 20,
        latent_dim: int | None = 8,
        center_scale: float = 4.0,
        sigma_range: tuple[float, float] = (0.5, 2.0),
        noise: float = 0.3,
    ):
        self.max_d = max_d
        self.seed = seed
        self.latent_dim = latent_dim
        self.noise = noise
        rng = np.random.default_rng([seed, 0xC0FFEE])
        self.centers = rng.normal(0.0, center_scale, size=(clusters, max_d))
        self.sigmas = rng.uniform(*sigma_range, size=clusters)
        weights = rng.uniform(0.5, 1.5, size=clusters)
        self.weights = weights / weights.sum()
        self.bases = (rng.standard_normal((clusters, max_d, latent_dim))
                      if latent_dim else None)

    def _block(self, b: int, d: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, b])
        labels = rng.choice(len(self.weights), size=self.BLOCK, p=self.weights)
        noise = rng.standard_normal((self.BLOCK, self.max_d))[:, :d]
        if self.bases is None:
            return self.centers[labels, :d] + noise * self.sigmas[labels, None]
        z = rng.standard_normal((self.BLOCK, self.latent_dim)) * self.sigmas[labels, None]
        out = self.centers[labels, :d] + self.noise * noise
        for c in np.unique(labels):
            rows = labels == c
            out[rows] += z[rows] @ self.bases[c, :d, :].T
        return out

    def dataset(self, n: int, d: int, name: str | None = None) -> Dataset:
        if not 1 <= d <= self.max_d:
            raise ValueError(f"d must be in [1, {self.max_d}], got {d}")
        if n < 1:
            raise ValueError("n must be >= 1")
        out = np.empty((n, d))
        for b in range((n + self.BLOCK - 1) // self.BLOCK):
            lo = b * self.BLOCK
            hi = min(n, lo + self.BLOCK)
            out[lo:hi] = self._block(b, d)[: hi - lo]
        return Dataset(out, name or f"mixture-{n}x{d}")


# ---------------------------------------------------------------------------
# Workloads and the exact oracle
# ---------------------------------------------------------------------------


def euclidean(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance; shared by the oracle and candidate verification."""
    diff = np.atleast_2d(rows) - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def density_scores(ds: Dataset, sample_ids: np.ndarray, neighbor: int = DENSITY_NEIGHBOR) -> np.ndarray:
    """Distance from each sampled point to its ``neighbor``-th nearest other sample."""
    x = ds.vectors[sample_ids]
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, np.inf)
    kth = min(neighbor, len(sample_ids) - 1)
    if kth < 1:
        return np.zeros(len(sample_ids))
    return np.sqrt(np.partition(d2, kth - 1, axis=1)[:, kth - 1])


def generate_workload(ds: Dataset, q_count: int, k: int, seed: int) -> QueryWorkload:
    """Draw ``q_count`` queries from the densest quartile of a density-ranked sample."""
    if q_count < 1:
        raise ValueError("q_count must be >= 1")
    rng = np.random.default_rng(seed)
    size = min(DENSITY_SAMPLE, ds.n)
    sample = np.sort(rng.choice(ds.n, size=size, replace=False))
    scores = density_scores(ds, sample)
    order = np.lexsort((sample, scores))
    dense = sample[order[: max(1, size // 4)]]
    picks = rng.choice(dense, size=q_count, replace=True)
    return QueryWorkload(tuple(ds[int(i)] for i in picks), k, seed)


def brute_force_knn(ds: Dataset, q: Point | np.ndarray, k: int) -> list[Neighbor]:
    if not 1 <= k <= ds.n:
        raise ValueError(f"k must be in [1, {ds.n}], got {k}")
    coords = q.coords if isinstance(q, Point) else np.asarray(q, dtype=np.float64)
    if coords.shape != (ds.d,):
        raise ValueError(f"query has shape {coords.shape}, dataset has d={ds.d}")
    dist = euclidean(ds.vectors, coords)
    order = np.argsort(dist, kind="stable")[:k]
    return [Neighbor(int(i), float(dist[i])) for i in order]
