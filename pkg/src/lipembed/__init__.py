"""lipembed: visual word embeddings for lipreading at desk scale.

Spatiotemporal-convolutional + residual + bidirectional-recurrent embedding
network, PLDA modelling of the embeddings, low-shot evaluation protocols
(closed-set identification and word matching by likelihood ratio), and a
synthetic clip generator that stands in for a real lipreading corpus.
"""

__version__ = "0.1.0"
