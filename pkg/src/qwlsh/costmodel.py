"""Offline-trained map from (cardinality, dimensionality) to the best index-cache fraction."""

from __future__ import annotations

import logging
import math
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bench import FRACTIONS, best_of, record_trace, sweep_report
from .core import Dataset, GaussianMixture, generate_workload, subset
from .lsh import LshParams, build_index, derive_params
from .storage import DEFAULT_PAGE_SIZE, Strategy

log = logging.getLogger(__name__)

MODEL_VERSION = "v1"


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelEntry:
    cardinality: int
    dimensionality: int
    best_fraction: float
    total_io_at_best: int


@dataclass
class CostModel:
    cards: tuple[int, ...]
    dims: tuple[int, ...]
    entries: dict[tuple[int, int], ModelEntry]
    trained_cache_bytes: int
    trained_q_count: int
    alpha_card: float = 0.0
    alpha_dim: float = 0.0
    # per-lattice-point sweep tables, kept in memory only
    sweeps: dict[tuple[int, int], list] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.cards = tuple(int(c) for c in self.cards)
        self.dims = tuple(int(d) for d in self.dims)
        if not self.cards or not self.dims:
            raise ValueError("model lattice is empty")
        for axis in (self.cards, self.dims):
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"lattice axis must be strictly increasing: {axis}")
        missing = [(c, d) for c in self.cards for d in self.dims if (c, d) not in self.entries]
        if missing:
            raise ValueError(f"lattice incomplete, missing {missing}")

    def entry(self, card: int, dim: int) -> ModelEntry:
        return self.entries[(card, dim)]

    def grid(self) -> np.ndarray:
        return np.array([[self.entries[(c, d)].best_fraction for d in self.dims]
                         for c in self.cards])

    def interpolate(self, n: float, d: float) -> float:
        """Bilinear interpolation of best fractions in log2(n) x log2(d), clamped."""
        grid = self.grid()
        i, ti = _bracket(self.cards, n)
        j, tj = _bracket(self.dims, d)
        i2, j2 = min(i + 1, len(self.cards) - 1), min(j + 1, len(self.dims) - 1)
        top = (1 - tj) * grid[i, j] + tj * grid[i, j2]
        bottom = (1 - tj) * grid[i2, j] + tj * grid[i2, j2]
        return float((1 - ti) * top + ti * bottom)

    def lookup_fraction(self, n: float, d: float) -> float:
        return round_to_setting(self.interpolate(n, d))


def _bracket(axis: Sequence[int], x: float) -> tuple[int, float]:
    """Lower lattice index and weight of ``x`` along ``axis`` in log2 space."""
    if len(axis) == 1 or x <= axis[0]:
        return 0, 0.0
    if x >= axis[-1]:
        return len(axis) - 1, 0.0
    logs = np.log2(axis)
    lx = math.log2(x)
    i = int(np.searchsorted(logs, lx, side="right")) - 1
    return i, float((lx - logs[i]) / (logs[i + 1] - logs[i]))


def round_to_setting(fraction: float, settings: Sequence[float] = FRACTIONS) -> float:
    """Nearest sweep setting; exact midpoints go to the larger setting."""
    best = settings[0]
    best_gap = abs(fraction - best)
    for s in settings[1:]:
        gap = abs(fraction - s)
        if gap < best_gap - 1e-12 or abs(gap - best_gap) <= 1e-12:
            best, best_gap = s, gap
    return best


def _as_source(base) -> Callable[[int, int], Dataset]:
    if isinstance(base, Dataset):
        return lambda n, d: subset(base, n, d)
    if isinstance(base, GaussianMixture):
        return base.dataset
    if callable(base):
        return base
    raise TypeError(f"cannot derive sub-datasets from {type(base).__name__}")


def _slope(x: Sequence[float], y: Sequence[float]) -> float:
    if len(set(x)) < 2:
        return 0.0
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def train(base, cards: Sequence[int], dims: Sequence[int], cache_bytes: int, q_count: int,
          k: int, seed: int = 0, workdir: str | Path | None = None,
          params: LshParams | None = None, strategy: Strategy | str = Strategy.STRATEGY1,
          page_size: int = DEFAULT_PAGE_SIZE, keep_indexes: bool = False) -> CostModel:
    """Sweep all index-cache fractions on every (card, dim) lattice point.

    ``base`` is a :class:`Dataset` (sub-datasets are its first ``card`` rows
    and first ``dim`` columns), a :class:`GaussianMixture`, or any callable
    ``(n, d) -> Dataset``.
    """
    cards, dims = sorted(int(c) for c in cards), sorted(int(d) for d in dims)
    if isinstance(base, Dataset):
        if cards[-1] > base.n or dims[-1] > base.d:
            raise ValueError(f"lattice ({cards[-1]} x {dims[-1]}) exceeds source "
                             f"({base.n} x {base.d})")
    if isinstance(base, GaussianMixture) and dims[-1] > base.max_d:
        raise ValueError(f"dimensionality {dims[-1]} exceeds generator max_d {base.max_d}")
    source = _as_source(base)
    params = params or derive_params()
    root = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="qwlsh-train-"))
    entries: dict[tuple[int, int], ModelEntry] = {}
    sweeps = {}
    index_obs: list[tuple[int, float]] = []
    data_obs: list[tuple[int, float]] = []
    try:
        for card in cards:
            for dim in dims:
                ds = source(card, dim)
                where = root / f"{card}x{dim}"
                idx = build_index(ds, params, seed, where, page_size)
                wl = generate_workload(ds, q_count, k, seed)
                rows = sweep_report(idx, wl, cache_bytes, strategy, record_trace(idx, wl))
                best = best_of(rows)
                entries[(card, dim)] = ModelEntry(card, dim, best.fraction, best.total_io)
                sweeps[(card, dim)] = rows
                index_obs.append((card, float(np.mean([r.index_io for r in rows]))))
                data_obs.append((dim, float(np.mean([r.data_io for r in rows]))))
                log.info("trained %dx%d best=%.2f total_io=%d", card, dim, best.fraction,
                         best.total_io)
                if not keep_indexes:
                    shutil.rmtree(where, ignore_errors=True)
    finally:
        if workdir is None and not keep_indexes:
            shutil.rmtree(root, ignore_errors=True)
    model = CostModel(tuple(cards), tuple(dims), entries, cache_bytes, q_count,
                      _slope(*zip(*index_obs)), _slope(*zip(*data_obs)))
    model.sweeps = sweeps
    return model


def save_model(model: CostModel, path: str | Path) -> None:
    lines = [f"qwlsh-model {MODEL_VERSION} cache={model.trained_cache_bytes} "
             f"q={model.trained_q_count}"]
    for card in model.cards:
        for dim in model.dims:
            e = model.entries[(card, dim)]
            lines.append(f"{card} {dim} {e.best_fraction!r} {e.total_io_at_best} "
                         f"{model.alpha_card!r} {model.alpha_dim!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> CostModel:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ModelFormatError("empty model file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "qwlsh-model":
        raise ModelFormatError(f"bad model header: {lines[0]!r}")
    if head[1] != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {head[1]!r}")
    try:
        cache = int(head[2].removeprefix("cache="))
        q_count = int(head[3].removeprefix("q="))
    except ValueError:
        raise ModelFormatError(f"bad model header: {lines[0]!r}") from None
    entries = {}
    alpha_card = alpha_dim = 0.0
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 6:
            raise ModelFormatError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        try:
            card, dim, total = int(parts[0]), int(parts[1]), int(parts[3])
            frac, alpha_card, alpha_dim = float(parts[2]), float(parts[4]), float(parts[5])
        except ValueError:
            raise ModelFormatError(f"line {lineno}: malformed number") from None
        if not any(math.isclose(frac, f) for f in FRACTIONS):
            raise ModelFormatError(f"line {lineno}: {frac} is not a sweep setting")
        entries[(card, dim)] = ModelEntry(card, dim, frac, total)
    if not entries:
        raise ModelFormatError("model has no entries")
    cards = sorted({c for c, _ in entries})
    dims = sorted({d for _, d in entries})
    try:
        return CostModel(tuple(cards), tuple(dims), entries, cache, q_count, alpha_card, alpha_dim)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def lookup_fraction(model: CostModel, n: float, d: float) -> float:
    """Index-cache fraction for a dataset of cardinality ``n`` and dimensionality ``d``."""
    return model.lookup_fraction(n, d)
