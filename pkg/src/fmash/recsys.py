"""Ranked top-K recommendation head.

A first-pass inner-product matcher turns the aggregated symptom vector into
occurrence probabilities over herbs; the probability-weighted herb vector is
concatenated with the symptom vector, projected, and prepended as a [CLS]
position to the per-symptom token sequence.  A small transformer encoder
fuses the sequence and a per-herb sigmoid head reads the selection scores
off the [CLS] state.  With the fusion encoder ablated, a trainable bilinear
inner-product scorer takes its place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .nn import Adam, EncoderLayer, Linear, Module, stage_rng
from .refine import UnifiedEmbedding
from .tape import Tensor, bce_with_logits, concat, no_grad, softmax


# ---------------------------------------------------------------------------
# first-pass matcher
# ---------------------------------------------------------------------------

def base_probabilities(s: np.ndarray | Tensor, herb_table: np.ndarray | Tensor,
                       temperature: float = 1.0) -> Tensor:
    """softmax(herb_table . s / sqrt(d)); a soft first-pass ranking."""
    s = Tensor.ensure(s)
    table = Tensor.ensure(herb_table)
    d = table.shape[1]
    logits = (table @ s.reshape(-1, 1)) / (math.sqrt(d) * temperature)
    return softmax(logits.reshape(1, -1), axis=-1).reshape(-1)


def weighted_herb(herb_table: np.ndarray | Tensor, p: np.ndarray | Tensor) -> Tensor:
    """Probability-weighted herb vector sum_i p_i h_i."""
    table = Tensor.ensure(herb_table)
    p = Tensor.ensure(p)
    if np.any(p.data < 0):
        raise DataError("herb probabilities must be non-negative")
    if abs(float(p.data.sum()) - 1.0) > 1e-6:
        raise DataError(f"herb probabilities must sum to 1, got {p.data.sum()}")
    return (p.reshape(1, -1) @ table).reshape(-1)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class GelramParams(Module):
    def __init__(self, d: int, n_herb: int, seed: int, d_enc: int = 64,
                 n_layers: int = 2, n_heads: int = 4, temperature: float = 1.0,
                 base_prob_mode: str = "matcher"):
        if base_prob_mode not in ("matcher", "frequency"):
            raise DataError(f"unknown base probability mode {base_prob_mode!r}")
        self.d = d
        self.n_herb = n_herb
        self.temperature = temperature
        self.base_prob_mode = base_prob_mode
        rng = stage_rng(seed, "rs.gelram")
        self.input_proj = Linear(2 * d, d_enc, rng)
        self.tok_proj = Linear(d, d_enc, rng)
        self.layers = [EncoderLayer(d_enc, n_heads, 4 * d_enc, rng)
                       for _ in range(n_layers)]
        self.out = Linear(d_enc, n_herb, rng)
        # filled from the training split when base_prob_mode == "frequency"
        self.herb_frequency = Tensor(np.full(n_herb, 1.0 / n_herb))


class PlainScorerParams(Module):
    """Bilinear inner-product scorer used when the fusion encoder is off."""

    def __init__(self, d: int, n_herb: int, seed: int):
        rng = stage_rng(seed, "rs.plain")
        self.d = d
        self.n_herb = n_herb
        self.bilinear = Linear(d, d, rng)
        self.bias = Tensor(np.zeros(n_herb), requires_grad=True)


RsParams = GelramParams | PlainScorerParams


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def _canonical_batch(symptom_sets: list[list[int] | frozenset[int]], n_sym: int,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Sorted, padded id matrix plus validity mask.

    Canonical ascending order makes scores exactly invariant to the order
    the caller lists the symptoms in.
    """
    canon = []
    for ids in symptom_sets:
        ids = sorted(set(int(i) for i in ids))
        if not ids:
            raise DataError("empty symptom set")
        if ids[0] < 0 or ids[-1] >= n_sym:
            raise DataError(f"unknown symptom id in {ids}")
        canon.append(ids)
    width = max(len(ids) for ids in canon)
    padded = np.zeros((len(canon), width), dtype=np.intp)
    mask = np.zeros((len(canon), width), dtype=bool)
    for i, ids in enumerate(canon):
        padded[i, :len(ids)] = ids
        mask[i, :len(ids)] = True
    return padded, mask


def rs_logits(symptom_sets: list, emb: UnifiedEmbedding, params: RsParams,
              sym_table: Tensor | None = None,
              herb_table: Tensor | None = None) -> Tensor:
    """Batched pre-sigmoid scores, one row per symptom set.

    ``sym_table`` / ``herb_table`` may be passed explicitly (as gradient
    leaves) to fine-tune the embeddings; by default the tables in ``emb``
    are treated as constants.
    """
    sym_t = sym_table if sym_table is not None else Tensor(emb.sym())
    herb_t = herb_table if herb_table is not None else Tensor(emb.herb())
    ids, mask = _canonical_batch(symptom_sets, sym_t.shape[0])
    b, width = ids.shape
    d = sym_t.shape[1]

    tokens = sym_t[ids]                                   # (B, W, d)
    masked = tokens * mask[:, :, None]
    s = masked.sum(axis=1)                                # (B, d)

    if isinstance(params, PlainScorerParams):
        return params.bilinear(s) @ herb_t.transpose(1, 0) + params.bias

    if params.base_prob_mode == "frequency":
        p = Tensor(np.broadcast_to(params.herb_frequency.data, (b, params.n_herb)))
    else:
        logits = (s @ herb_t.transpose(1, 0)) / (math.sqrt(d) * params.temperature)
        p = softmax(logits, axis=-1)                      # (B, H)
    h_w = p @ herb_t                                      # (B, d)

    cls = params.input_proj(concat([h_w, s], axis=1))     # (B, d_enc)
    tok = params.tok_proj(tokens)                         # (B, W, d_enc)
    seq = concat([cls.reshape(b, 1, -1), tok], axis=1)
    key_mask = np.concatenate([np.ones((b, 1), dtype=bool), mask], axis=1)
    for layer in params.layers:
        seq = layer(seq, key_mask=key_mask)
    z = seq[:, 0, :]                                      # (B, d_enc)
    return params.out(z)


@dataclass
class RecommendationResult:
    scores: np.ndarray    # (H,), each in (0, 1)
    ranking: np.ndarray   # herb ids by descending score, ties by id

    def topk(self, k: int) -> list[tuple[int, float]]:
        return [(int(h), float(self.scores[h])) for h in self.ranking[:k]]


def gelram_score(symptom_ids, emb: UnifiedEmbedding, params: RsParams,
                 ) -> RecommendationResult:
    with no_grad():
        logits = rs_logits([list(symptom_ids)], emb, params)
        scores = 1.0 / (1.0 + np.exp(-logits.data[0]))
    if not np.isfinite(scores).all():
        raise NumericError("non-finite recommendation scores")
    ranking = np.argsort(-scores, kind="stable")
    return RecommendationResult(scores=scores, ranking=ranking)


def recommend(symptom_ids, k: int, params: RsParams, emb: UnifiedEmbedding,
              ) -> list[tuple[int, float]]:
    n_herb = emb.n_herb
    if not 1 <= k <= n_herb:
        raise ValueError(f"k must be in [1, {n_herb}], got {k}")
    return gelram_score(symptom_ids, emb, params).topk(k)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class RsTrainResult:
    params: RsParams
    losses: list[float] = field(default_factory=list)


def multi_hot(herb_lists: list[list[int]], n_herb: int) -> np.ndarray:
    t = np.zeros((len(herb_lists), n_herb))
    for i, herbs in enumerate(herb_lists):
        t[i, list(herbs)] = 1.0
    return t


def herb_frequencies(instances, n_herb: int) -> np.ndarray:
    counts = np.zeros(n_herb)
    for inst in instances:
        counts[list(inst.herbs)] += 1.0
    total = counts.sum()
    if total == 0:
        return np.full(n_herb, 1.0 / n_herb)
    return counts / total


def train_rs(instances, emb: UnifiedEmbedding, *, epochs: int = 300,
             lr: float = 3e-3, batch_size: int | None = None, seed: int = 42,
             gelram: bool = True, d_enc: int = 64, n_layers: int = 2,
             n_heads: int = 4, base_prob_mode: str = "matcher",
             params: RsParams | None = None,
             targets: np.ndarray | None = None) -> RsTrainResult:
    """Fit the head with multi-label binary cross-entropy over all herbs."""
    if not instances:
        raise DataError("cannot train on an empty split")
    d, n_herb = emb.dim, emb.n_herb
    if params is None:
        if gelram:
            params = GelramParams(d, n_herb, seed, d_enc=d_enc, n_layers=n_layers,
                                  n_heads=n_heads, base_prob_mode=base_prob_mode)
            params.herb_frequency.data = herb_frequencies(instances, n_herb)
        else:
            params = PlainScorerParams(d, n_herb, seed)
    symptom_sets = [sorted(inst.symptoms) for inst in instances]
    if targets is None:
        targets = multi_hot([inst.herbs for inst in instances], n_herb)
    sym_t, herb_t = Tensor(emb.sym()), Tensor(emb.herb())

    opt = Adam(params.parameters(), lr=lr)
    batch_rng = stage_rng(seed, "rs.batches")
    n = len(instances)
    result = RsTrainResult(params=params)
    for _ in range(epochs):
        order = batch_rng.permutation(n) if batch_size else np.arange(n)
        step = batch_size or n
        epoch_loss = 0.0
        for lo in range(0, n, step):
            sel = order[lo:lo + step]
            opt.zero_grad()
            logits = rs_logits([symptom_sets[i] for i in sel], emb, params,
                               sym_table=sym_t, herb_table=herb_t)
            loss = bce_with_logits(logits, targets[sel])
            loss.backward()
            opt.step()
            epoch_loss += loss.item() * len(sel)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise NumericError("non-finite training loss")
        result.losses.append(epoch_loss)
    return result


def export_predictions(path, instances, emb: UnifiedEmbedding, params: RsParams,
                       ) -> None:
    """One line per instance: ``instance_id<TAB>herb_id:score,...`` descending."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            result = gelram_score(inst.symptoms, emb, params)
            pairs = ",".join(f"{int(h)}:{result.scores[h]:.6g}"
                             for h in result.ranking)
            fh.write(f"{inst.instance_id}\t{pairs}\n")
