"""fleec: a lock-free bounded cache.

A hash table of lock-free linked-list buckets with a per-bucket recency
counter drives second-chance eviction; retired memory is handed back through
epoch-based reclamation that advances only under memory pressure.  Ships as a
library, a Memcached-text-protocol server (fleec-server), and a benchmark
harness (fleec-bench).
"""

from .cache import (
    Cache,
    CacheConfig,
    Item,
    ITEM_OVERHEAD,
    MAX_KEY_LEN,
    OutOfMemory,
    Stats,
)
from .clock_table import ClockTable, bucket_of, fnv1a_64
from .lockfree_list import Moved, UseAfterFree
from .reclamation import EpochManager, EpochRecord

__version__ = "0.1.0"

__all__ = [
    "Cache",
    "CacheConfig",
    "Item",
    "ITEM_OVERHEAD",
    "MAX_KEY_LEN",
    "OutOfMemory",
    "Stats",
    "ClockTable",
    "bucket_of",
    "fnv1a_64",
    "Moved",
    "UseAfterFree",
    "EpochManager",
    "EpochRecord",
    "__version__",
]
