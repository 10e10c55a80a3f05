"""Speaker-invariant speech emotion embeddings.

Learns fixed-dimension emotion embeddings from speech while adversarially
erasing speaker identity by maximizing the entropy of a speaker
classifier's output, and quantifies the erasure with probe classifiers
and cross-speaker generalization metrics.
"""

__version__ = "0.1.0"
