"""Compressed learned multidimensional Bloom filters."""

from .bloom import WILDCARD, BloomFilter, index_tuple_subsets, serialize_tuple_subset
from .codec import (
    CompressionPlan,
    Dictionary,
    PassThrough,
    Split,
    build_dictionary,
    compress_value,
    decompress_value,
    input_dimension,
    plan_compression,
)
from .filter import FilterConfig, LearnedFilter, Metrics
from .nn import Embedding, Model, ModelConfig, OneHot, init_model, train

__version__ = "0.1.0"
