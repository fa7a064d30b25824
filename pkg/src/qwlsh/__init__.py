"""Cache-partitioned external-memory LSH for c-k-ANN query workloads."""

from .core import (
    Dataset,
    GaussianMixture,
    Neighbor,
    Point,
    QueryWorkload,
    brute_force_knn,
    generate_workload,
    load_csv,
    load_fvecs,
    truncate_dims,
)
from .costmodel import CostModel, load_model, lookup_fraction, save_model, train
from .lsh import LshIndex, LshParams, build_index, collision_probability, derive_params, open_index
from .query import knn_query, range_scan, verify_candidates
from .storage import BufferCache, CacheConfig, IoCounters, MruCache, Strategy

__version__ = "0.1.0"
