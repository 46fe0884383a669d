"""Multiscale symptom-herb representation learning and formula recommendation.

The package is organized around one module per pipeline stage:

- ``dataio``      corpora, vocabularies, the heterogeneous graph, splits,
                  synthetic corpus generators
- ``hgre``        graph embedding: per-subgraph GCN + degree-ordered
                  bidirectional selective-scan enhancement
- ``mlfie``       molecular feature pooling, gated fusion with a learnable
                  holistic embedding, and VAE imputation for missing data
- ``refine``      feature assembly and autoencoder compression to 64-d
                  unified embeddings
- ``recsys``      ranked top-K recommendation head
- ``seqgen``      autoregressive herb-sequence generation head
- ``evalkit``     precision/recall/F1@K and best-matched-precision reports
- ``pipeline``    stage wiring with ablation switches
- ``config``      run configuration, ``checkpoint`` parameter archives,
                  ``cli`` the command-line surface
"""

from .dataio import (HerbRecord, HeteroGraph, PrescriptionInstance,
                     SymptomRecord, build_graph, generate_conflicting_corpus,
                     generate_synthetic, load_corpus, split_dataset)
from .evalkit import MetricReport, bmp_at_k, evaluate_run, topk_metrics
from .refine import UnifiedEmbedding
from .tape import Tensor

__all__ = [
    "HerbRecord", "HeteroGraph", "MetricReport", "PrescriptionInstance",
    "SymptomRecord", "Tensor", "UnifiedEmbedding", "bmp_at_k", "build_graph",
    "evaluate_run", "generate_conflicting_corpus", "generate_synthetic",
    "load_corpus", "split_dataset", "topk_metrics",
]

__version__ = "0.1.0"
