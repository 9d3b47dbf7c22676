"""rqrec: hierarchical item indices, trie-constrained retrieval, and rank-list fusion."""

__version__ = "0.1.0"
