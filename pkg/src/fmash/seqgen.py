"""Autoregressive herb-sequence generation.

The symptom set (canonical ascending order plus positional encodings) runs
through a two-layer transformer encoder.  On the target side, herb token
embeddings are initialized row-for-row from the unified herb table, pass an
integration layer (cross-attention onto the symptom memory), then two
stacked decoder layers (causal self-attention + cross-attention), and a
projection onto the token vocabulary.  Greedy decoding starts from BOS,
masks already-emitted herbs, and stops at EOS or the length cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .nn import (Adam, DecoderLayer, EncoderLayer, LayerNorm, Linear, Module,
                 MultiHeadAttention, sinusoidal_positions, stage_rng)
from .refine import UnifiedEmbedding
from .tape import Tensor, no_grad

MAX_POSITIONS = 512


@dataclass(frozen=True)
class TokenVocab:
    n_herb: int

    @property
    def bos(self) -> int:
        return self.n_herb

    @property
    def eos(self) -> int:
        return self.n_herb + 1

    @property
    def pad(self) -> int:
        return self.n_herb + 2

    @property
    def size(self) -> int:
        return self.n_herb + 3

    def is_herb(self, token: int) -> bool:
        return 0 <= token < self.n_herb


class IntegrationLayer(Module):
    """Cross-attention-only block bridging target embeddings and memory."""

    def __init__(self, d_model: int, n_heads: int, rng):
        self.ln = LayerNorm(d_model)
        self.cross = MultiHeadAttention(d_model, n_heads, rng)

    def __call__(self, x: Tensor, memory: Tensor,
                 memory_mask: np.ndarray | None = None) -> Tensor:
        return x + self.cross(self.ln(x), memory, key_mask=memory_mask)


class Seq2SeqParams(Module):
    def __init__(self, emb: UnifiedEmbedding, seed: int, n_heads: int = 4,
                 n_enc_layers: int = 2, n_dec_layers: int = 2):
        d = emb.dim
        self.vocab = TokenVocab(emb.n_herb)
        self.d = d
        rng = stage_rng(seed, "seq")
        # frozen unified symptom table; target embeddings start from the
        # unified herb rows and stay trainable
        self.sym_table = Tensor(emb.sym().copy())
        tok = np.concatenate([emb.herb().copy(),
                              rng.normal(0.0, 0.1, size=(3, d))], axis=0)
        self.tok_embed = Tensor(tok, requires_grad=True)
        self.positions = Tensor(sinusoidal_positions(MAX_POSITIONS, d))
        self.enc_layers = [EncoderLayer(d, n_heads, 4 * d, rng)
                           for _ in range(n_enc_layers)]
        self.enc_ln = LayerNorm(d)
        self.integration = IntegrationLayer(d, n_heads, rng)
        self.dec_layers = [DecoderLayer(d, n_heads, 4 * d, rng)
                           for _ in range(n_dec_layers)]
        self.dec_ln = LayerNorm(d)
        self.out = Linear(d, self.vocab.size, rng)


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

def _canonical_ids(symptom_ids, n_sym: int) -> list[int]:
    ids = sorted(set(int(i) for i in symptom_ids))
    if not ids:
        raise DataError("empty symptom set")
    if ids[0] < 0 or ids[-1] >= n_sym:
        raise DataError(f"unknown symptom id in {ids}")
    return ids


def _encode_batch(symptom_sets: list, params: Seq2SeqParams,
                  ) -> tuple[Tensor, np.ndarray]:
    """Memory (B, W, d) plus key validity mask (B, W)."""
    n_sym = params.sym_table.shape[0]
    canon = [_canonical_ids(s, n_sym) for s in symptom_sets]
    width = max(len(ids) for ids in canon)
    padded = np.zeros((len(canon), width), dtype=np.intp)
    mask = np.zeros((len(canon), width), dtype=bool)
    for i, ids in enumerate(canon):
        padded[i, :len(ids)] = ids
        mask[i, :len(ids)] = True
    x = params.sym_table[padded] + params.positions[np.arange(width)]
    for layer in params.enc_layers:
        x = layer(x, key_mask=mask)
    return params.enc_ln(x), mask


def encode_symptoms(symptom_ids, params: Seq2SeqParams) -> Tensor:
    """Contextual memory for one symptom set, one row per symptom token."""
    with no_grad():
        memory, _ = _encode_batch([symptom_ids], params)
    return memory[0]


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------

def decoder_logits(memory: Tensor, memory_mask: np.ndarray | None,
                   target_tokens: np.ndarray, params: Seq2SeqParams) -> Tensor:
    """Next-token logits (B, T, V) for teacher-forced target prefixes."""
    target_tokens = np.asarray(target_tokens, dtype=np.intp)
    b, t = target_tokens.shape
    x = params.tok_embed[target_tokens] + params.positions[np.arange(t)]
    x = params.integration(x, memory, memory_mask=memory_mask)
    for layer in params.dec_layers:
        x = layer(x, memory, memory_mask=memory_mask)
    return params.out(params.dec_ln(x))


@dataclass
class SeqBatch:
    symptom_sets: list
    dec_in: np.ndarray       # (B, T) tokens starting with BOS
    dec_target: np.ndarray   # (B, T) tokens ending with EOS, PAD-filled
    loss_mask: np.ndarray    # (B, T) True where the target counts


def make_batch(instances, vocab: TokenVocab) -> SeqBatch:
    width = max(len(inst.herbs) for inst in instances) + 1
    b = len(instances)
    dec_in = np.full((b, width), vocab.pad, dtype=np.intp)
    dec_target = np.full((b, width), vocab.pad, dtype=np.intp)
    loss_mask = np.zeros((b, width), dtype=bool)
    for i, inst in enumerate(instances):
        seq = list(inst.herbs)
        dec_in[i, 0] = vocab.bos
        dec_in[i, 1:len(seq) + 1] = seq
        dec_target[i, :len(seq)] = seq
        dec_target[i, len(seq)] = vocab.eos
        loss_mask[i, :len(seq) + 1] = True
    return SeqBatch(symptom_sets=[sorted(inst.symptoms) for inst in instances],
                    dec_in=dec_in, dec_target=dec_target, loss_mask=loss_mask)


def sequence_loss(batch: SeqBatch, params: Seq2SeqParams) -> Tensor:
    """Teacher-forced cross-entropy; PAD positions contribute exactly zero."""
    memory, memory_mask = _encode_batch(batch.symptom_sets, params)
    logits = decoder_logits(memory, memory_mask, batch.dec_in, params)
    from .tape import log_softmax
    logp = log_softmax(logits, axis=-1)
    b, t = batch.dec_target.shape
    rows = np.repeat(np.arange(b), t)
    cols = np.tile(np.arange(t), b)
    picked = logp[rows, cols, batch.dec_target.reshape(-1)].reshape(b, t)
    masked = picked * batch.loss_mask
    return -(masked.sum() / float(batch.loss_mask.sum()))


@dataclass
class SeqTrainResult:
    params: Seq2SeqParams
    losses: list[float] = field(default_factory=list)


def train_seq(instances, emb: UnifiedEmbedding, *, epochs: int = 300,
              lr: float = 3e-3, batch_size: int | None = None, seed: int = 42,
              n_heads: int = 4, params: Seq2SeqParams | None = None,
              ) -> SeqTrainResult:
    """Teacher-forced training on [herbs..., EOS] in source order."""
    if not instances:
        raise DataError("cannot train on an empty split")
    if params is None:
        params = Seq2SeqParams(emb, seed, n_heads=n_heads)
    opt = Adam(params.parameters(), lr=lr)
    batch_rng = stage_rng(seed, "seq.batches")
    n = len(instances)
    result = SeqTrainResult(params=params)
    for _ in range(epochs):
        order = batch_rng.permutation(n) if batch_size else np.arange(n)
        step = batch_size or n
        epoch_loss = 0.0
        for lo in range(0, n, step):
            sel = [instances[i] for i in order[lo:lo + step]]
            opt.zero_grad()
            loss = sequence_loss(make_batch(sel, params.vocab), params)
            loss.backward()
            opt.step()
            epoch_loss += loss.item() * len(sel)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise NumericError("non-finite training loss")
        result.losses.append(epoch_loss)
    return result


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _masked_step_logprobs(memory, memory_mask, tokens: list[int],
                          params: Seq2SeqParams, suppress_eos: bool) -> np.ndarray:
    vocab = params.vocab
    dec_in = np.asarray([tokens], dtype=np.intp)
    logits = decoder_logits(memory, memory_mask, dec_in, params).data[0, -1]
    shifted = logits - logits.max()
    logp = shifted - np.log(np.exp(shifted).sum())
    logp[vocab.bos] = -np.inf
    logp[vocab.pad] = -np.inf
    if suppress_eos:
        logp[vocab.eos] = -np.inf
    for tok in tokens[1:]:
        logp[tok] = -np.inf          # duplicate-herb mask
    return logp


def generate(symptom_ids, params: Seq2SeqParams, max_len: int,
             suppress_eos: bool = False, beam_width: int = 1) -> list[int]:
    """Decode a formula from BOS; emitted herbs are masked so it never
    repeats one, and BOS/PAD can never be produced.  Greedy by default;
    ``beam_width`` > 1 keeps that many candidates ranked by cumulative log
    probability (no length normalization).  Returns herb ids only.
    """
    if max_len < 1:
        raise DataError("max_len must be >= 1")
    if beam_width < 1:
        raise DataError("beam_width must be >= 1")
    vocab = params.vocab
    with no_grad():
        memory, memory_mask = _encode_batch([symptom_ids], params)
        # (tokens, cumulative logp, finished); tokens[0] is BOS
        beams: list[tuple[list[int], float, bool]] = [([vocab.bos], 0.0, False)]
        while any(not done for _, _, done in beams):
            grown: list[tuple[list[int], float, bool]] = []
            for tokens, score, done in beams:
                if done:
                    grown.append((tokens, score, True))
                    continue
                if len(tokens) - 1 >= max_len:
                    grown.append((tokens, score, True))
                    continue
                logp = _masked_step_logprobs(memory, memory_mask, tokens,
                                             params, suppress_eos)
                order = np.argsort(-logp, kind="stable")[:beam_width]
                extended = False
                for tok in order:
                    if not np.isfinite(logp[tok]):
                        continue
                    extended = True
                    if tok == vocab.eos:
                        grown.append((tokens, score + float(logp[tok]), True))
                    else:
                        grown.append((tokens + [int(tok)],
                                      score + float(logp[tok]), False))
                if not extended:
                    grown.append((tokens, score, True))   # vocabulary exhausted
            grown.sort(key=lambda c: (-c[1], c[0]))
            beams = grown[:beam_width]
    return beams[0][0][1:]


def export_predictions(path, instances, params: Seq2SeqParams,
                       max_len: int = 20) -> None:
    """One line per instance: ``instance_id<TAB>herb_id,herb_id,...`` in
    generation order (possibly empty after the tab)."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            seq = generate(inst.symptoms, params, max_len=max_len)
            fh.write(f"{inst.instance_id}\t{','.join(str(h) for h in seq)}\n")
