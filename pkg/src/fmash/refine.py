"""Assembly of multiscale per-node features and compression to 64-d.

Herb rows concatenate [graph embedding | molecular representation |
property vector]; symptom rows concatenate [graph embedding | text
embedding], where symptoms without a provided text embedding fall back to a
learned per-symptom table.  A small autoencoder per node type (the two
assembled widths differ) is trained on reconstruction MSE and its encoder
provides the unified 64-d embeddings; with refinement disabled a trained
linear projection (a linear autoencoder) takes its place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataio import HerbRecord, SymptomRecord
from .errors import DataError, SchemaError
from .nn import Adam, Embedding, Linear, Module, stage_rng
from .tape import Tensor, no_grad

UNIFIED_DIM = 64


@dataclass
class UnifiedEmbedding:
    """The shared per-node table both recommendation heads consume.

    Rows are symptoms then herbs, matching the global node order.
    """
    matrix: np.ndarray
    n_sym: int

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)

    @property
    def n_herb(self) -> int:
        return self.matrix.shape[0] - self.n_sym

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def sym(self) -> np.ndarray:
        return self.matrix[:self.n_sym]

    def herb(self) -> np.ndarray:
        return self.matrix[self.n_sym:]


@dataclass
class FeatureLayout:
    """Names and widths of the blocks concatenated into one assembled row."""
    blocks: list[tuple[str, int]]

    @property
    def total(self) -> int:
        return sum(w for _, w in self.blocks)

    def to_json(self) -> str:
        return json.dumps({"blocks": [[n, w] for n, w in self.blocks]},
                          sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "FeatureLayout":
        obj = json.loads(text)
        return FeatureLayout(blocks=[(str(n), int(w)) for n, w in obj["blocks"]])


class SymptomTextTable(Module):
    """Learned fallback rows for symptoms without provided text embeddings."""

    def __init__(self, n_sym: int, d_text: int, seed: int):
        self.table = Embedding(n_sym, d_text, stage_rng(seed, "refine.text_table"),
                               std=0.1)

    def rows(self, symptoms: list[SymptomRecord]) -> np.ndarray:
        d_text = self.table.weight.data.shape[1]
        out = np.empty((len(symptoms), d_text))
        for i, rec in enumerate(symptoms):
            if rec.text_embedding is not None:
                if rec.text_embedding.shape != (d_text,):
                    raise SchemaError(
                        f"symptom {rec.name}: text embedding has shape "
                        f"{rec.text_embedding.shape}, expected ({d_text},)")
                out[i] = rec.text_embedding
            else:
                out[i] = self.table.weight.data[rec.id]
        return out


def assemble_features(hgre_out: np.ndarray, symptoms: list[SymptomRecord],
                      herbs: list[HerbRecord], text_rows: np.ndarray,
                      herb_reprs: np.ndarray | None,
                      ) -> tuple[np.ndarray, np.ndarray, FeatureLayout, FeatureLayout]:
    """Build the assembled matrices for both node types.

    ``herb_reprs`` is the molecular block; ``None`` drops it (the molecular
    stage was ablated).  Returns (sym_matrix, herb_matrix, sym_layout,
    herb_layout).
    """
    hgre_out = np.asarray(hgre_out, dtype=np.float64)
    s, h = len(symptoms), len(herbs)
    if hgre_out.shape[0] != s + h:
        raise SchemaError(f"graph embedding has {hgre_out.shape[0]} rows for "
                          f"{s} symptoms + {h} herbs")
    if text_rows.shape[0] != s:
        raise SchemaError("text embedding row count does not match symptoms")
    d = hgre_out.shape[1]
    sym_matrix = np.concatenate([hgre_out[:s], text_rows], axis=1)
    sym_layout = FeatureLayout([("graph", d), ("text", text_rows.shape[1])])

    prop_matrix = np.asarray([rec.properties for rec in herbs])
    parts = [hgre_out[s:]]
    herb_blocks = [("graph", d)]
    if herb_reprs is not None:
        herb_reprs = np.asarray(herb_reprs)
        if herb_reprs.shape[0] != h:
            raise SchemaError("molecular representation row count does not match herbs")
        parts.append(herb_reprs)
        herb_blocks.append(("molecular", herb_reprs.shape[1]))
    parts.append(prop_matrix)
    herb_blocks.append(("properties", prop_matrix.shape[1]))
    herb_matrix = np.concatenate(parts, axis=1)
    return sym_matrix, herb_matrix, sym_layout, FeatureLayout(herb_blocks)


class AutoencoderParams(Module):
    """Encoder to a fixed 64-d latent and mirror decoder.

    ``hidden=None`` gives the linear variant (one matrix each way), used as
    the learned projection when refinement is switched off.
    """

    def __init__(self, d_in: int, rng: np.random.Generator, hidden: int | None = 128,
                 latent: int = UNIFIED_DIM):
        self.hidden = hidden
        self.latent = latent
        if hidden is None:
            self.enc = Linear(d_in, latent, rng)
            self.dec = Linear(latent, d_in, rng)
        else:
            self.enc1 = Linear(d_in, hidden, rng)
            self.enc2 = Linear(hidden, latent, rng)
            self.dec1 = Linear(latent, hidden, rng)
            self.dec2 = Linear(hidden, d_in, rng)

    def encode(self, x: Tensor) -> Tensor:
        if self.hidden is None:
            return self.enc(x)
        return self.enc2(self.enc1(x).silu())

    def decode(self, z: Tensor) -> Tensor:
        if self.hidden is None:
            return self.dec(z)
        return self.dec2(self.dec1(z).silu())


def reconstruction_mse(matrix: np.ndarray, params: AutoencoderParams) -> float:
    with no_grad():
        x = Tensor(matrix)
        err = params.decode(params.encode(x)) - x
        return (err * err).mean().item()


def train_autoencoder(matrix: np.ndarray, *, seed: int = 42, epochs: int = 200,
                      lr: float = 1e-2, hidden: int | None = 128,
                      rng_name: str = "refine.ae",
                      params: AutoencoderParams | None = None,
                      ) -> tuple[AutoencoderParams, list[float]]:
    """Fit the compression autoencoder on assembled rows by MSE."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] < 8:
        raise DataError(f"need at least 8 rows to train, got {matrix.shape[0]}")
    if np.allclose(matrix, matrix[0]):
        import warnings
        warnings.warn("all assembled rows are identical; training anyway",
                      stacklevel=2)
    if params is None:
        params = AutoencoderParams(matrix.shape[1], stage_rng(seed, rng_name),
                                   hidden=hidden)
    opt = Adam(params.parameters(), lr=lr)
    losses = []
    x = Tensor(matrix)
    for _ in range(epochs):
        opt.zero_grad()
        err = params.decode(params.encode(x)) - x
        loss = (err * err).mean()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return params, losses


def compress(matrix: np.ndarray, params: AutoencoderParams) -> np.ndarray:
    """Row-wise encoding to the unified 64-d space; pure function."""
    matrix = np.asarray(matrix, dtype=np.float64)
    with no_grad():
        return params.encode(Tensor(matrix)).data.copy()


def export_unified(path, unified: np.ndarray, n_sym: int) -> None:
    """Write the unified table: header ``dim=64`` then
    ``node_type,node_id,f1..f64`` rows."""
    unified = np.asarray(unified)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={unified.shape[1]}\n")
        for i, row in enumerate(unified):
            node_type = "symptom" if i < n_sym else "herb"
            node_id = i if i < n_sym else i - n_sym
            vals = ",".join(repr(float(x)) for x in row)
            fh.write(f"{node_type},{node_id},{vals}\n")


def load_unified(path) -> tuple[np.ndarray, int]:
    """Read a unified-table export; returns (matrix, n_sym)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise SchemaError(f"{path}: expected 'dim=' header, got {header!r}")
        dim = int(header[4:])
        sym_rows, herb_rows = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            node_type, node_id, vals = line.split(",", 2)
            vec = np.asarray([float(x) for x in vals.split(",")])
            if vec.size != dim:
                raise SchemaError(f"{path}:{lineno}: row width {vec.size} != {dim}")
            (sym_rows if node_type == "symptom" else herb_rows).append(
                (int(node_id), vec))
    sym_rows.sort(key=lambda t: t[0])
    herb_rows.sort(key=lambda t: t[0])
    matrix = np.asarray([v for _, v in sym_rows] + [v for _, v in herb_rows])
    return matrix, len(sym_rows)
