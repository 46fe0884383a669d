"""Molecular-level herb features.

A herb with known molecules gets a property-guided attention pool over its
molecule embeddings; the pooled vector is fused with a learnable holistic
per-herb embedding through a sigmoid gate.  Herbs with no molecular data at
all get their pooled vector imputed by a VAE that maps the herb's property
vector to the molecular embedding space (train on complete herbs, decode
from the property encoding for incomplete ones).

Molecule embeddings come either from precomputed tables or from a
deterministic hashed n-gram stub encoder standing in for an external
molecular encoder.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import HerbRecord
from .errors import DataError, NumericError, SchemaError
from .nn import Adam, Linear, Module, stage_rng
from .tape import Tensor, no_grad, softmax, stack


# ---------------------------------------------------------------------------
# stub molecule encoder
# ---------------------------------------------------------------------------

def stub_encode_molecule(smiles: str, d_m: int) -> np.ndarray:
    """Deterministic unit-norm feature vector from hashed character n-grams.

    A stand-in for an external molecular encoder: stable across processes
    (keyed hashing, no PYTHONHASHSEED dependence), distinct strings map to
    distinct directions with high probability.
    """
    if not smiles:
        raise SchemaError("cannot encode an empty molecule string")
    vec = np.zeros(d_m)
    padded = f"^{smiles}$"
    for n in (1, 2, 3):
        for i in range(len(padded) - n + 1):
            gram = padded[i:i + n]
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(digest[:4], "little") % d_m
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


def molecule_embeddings(herb: HerbRecord, d_m: int) -> list[np.ndarray]:
    """Precomputed embeddings if present, stub-encoded strings otherwise."""
    if herb.mol_embeddings is not None:
        if len(herb.mol_embeddings) != len(herb.molecules):
            raise SchemaError(
                f"herb {herb.name}: {len(herb.mol_embeddings)} embeddings for "
                f"{len(herb.molecules)} molecules")
        return [np.asarray(e, dtype=np.float64) for e in herb.mol_embeddings]
    return [stub_encode_molecule(m, d_m) for m in herb.molecules]


# ---------------------------------------------------------------------------
# attention pooling and gated fusion
# ---------------------------------------------------------------------------

class AttentionParams(Module):
    def __init__(self, p_dim: int, d_m: int, d_k: int, rng: np.random.Generator):
        self.d_k = d_k
        self.w_q = Tensor(rng.normal(0.0, 1.0 / math.sqrt(p_dim), size=(p_dim, d_k)),
                          requires_grad=True)
        self.w_k = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d_m), size=(d_m, d_k)),
                          requires_grad=True)


def attention_weights(mol_embs: Tensor, p_h: Tensor, params: AttentionParams) -> Tensor:
    q = (p_h.reshape(1, -1) @ params.w_q)                       # (1, d_k)
    k = mol_embs @ params.w_k                                   # (K, d_k)
    logits = (k @ q.transpose(1, 0)) / math.sqrt(params.d_k)    # (K, 1)
    return softmax(logits.reshape(1, -1), axis=-1).reshape(-1)  # (K,)


def aggregate_attention(mol_embs, p_h, params: AttentionParams) -> Tensor:
    """Property-guided attention pool: softmax(<W_q p, W_k e_k>/sqrt(d_k))."""
    mol_embs = Tensor.ensure(np.asarray([np.asarray(e, dtype=np.float64)
                                         for e in mol_embs])
                             if isinstance(mol_embs, (list, tuple)) else mol_embs)
    if mol_embs.ndim != 2 or mol_embs.shape[0] < 1:
        raise DataError("aggregate_attention needs at least one molecule embedding")
    p_h = Tensor.ensure(p_h)
    alpha = attention_weights(mol_embs, p_h, params)
    return (alpha.reshape(-1, 1) * mol_embs).sum(axis=0)


class GateParams(Module):
    def __init__(self, d_m: int, rng: np.random.Generator, scalar: bool = False):
        out_dim = 1 if scalar else d_m
        self.w_g = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d_m), size=(d_m, out_dim)),
                          requires_grad=True)
        self.b_g = Tensor(np.zeros(out_dim), requires_grad=True)


def fuse_gate(v_h, h_e, params: GateParams) -> Tensor:
    """Convex blend lambda*v_h + (1-lambda)*h_e with lambda = sigmoid(W v + b)."""
    v_h, h_e = Tensor.ensure(v_h), Tensor.ensure(h_e)
    lam = (v_h.reshape(1, -1) @ params.w_g + params.b_g).sigmoid().reshape(-1)
    return lam * v_h + (1.0 - lam) * h_e


class LatentMolTable(Module):
    """Learnable holistic per-herb embedding (init N(0, 0.02))."""

    def __init__(self, n_herb: int, d_m: int, rng: np.random.Generator):
        self.weight = Tensor(rng.normal(0.0, 0.02, size=(n_herb, d_m)),
                             requires_grad=True)

    def row(self, herb_id: int) -> Tensor:
        return self.weight[np.array([herb_id])].reshape(-1)


# ---------------------------------------------------------------------------
# VAE for missing-molecule imputation
# ---------------------------------------------------------------------------

class VaeParams(Module):
    """Encoder p -> (mu, log sigma^2), decoder z -> v; two 64-unit hidden
    layers on each side."""

    def __init__(self, p_dim: int, d_m: int, d_z: int, rng: np.random.Generator,
                 hidden: int = 64):
        self.p_dim, self.d_m, self.d_z = p_dim, d_m, d_z
        self.enc1 = Linear(p_dim, hidden, rng)
        self.enc2 = Linear(hidden, hidden, rng)
        self.enc_mu = Linear(hidden, d_z, rng)
        self.enc_logvar = Linear(hidden, d_z, rng)
        self.dec1 = Linear(d_z, hidden, rng)
        self.dec2 = Linear(hidden, hidden, rng)
        self.dec_out = Linear(hidden, d_m, rng)

    def encode(self, p: Tensor) -> tuple[Tensor, Tensor]:
        h = self.enc2(self.enc1(p).silu()).silu()
        return self.enc_mu(h), self.enc_logvar(h)

    def decode(self, z: Tensor) -> Tensor:
        return self.dec_out(self.dec2(self.dec1(z).silu()).silu())


def vae_loss(p_h, v_target, params: VaeParams, eps: np.ndarray | None = None,
             beta: float = 1.0) -> tuple[Tensor, Tensor, Tensor]:
    """ELBO-style loss: squared-error reconstruction plus closed-form KL to
    the standard normal, both averaged over the batch.

    ``eps`` supplies the reparameterization noise; ``None`` decodes from the
    posterior mean (deterministic).
    """
    p = Tensor.ensure(np.atleast_2d(p_h))
    v = Tensor.ensure(np.atleast_2d(v_target))
    mu, logvar = params.encode(p)
    sigma2 = logvar.exp()
    kl = (0.5 * (mu * mu + sigma2 - 1.0 - logvar).sum(axis=1)).mean()
    z = mu if eps is None else mu + (0.5 * logvar).exp() * Tensor(np.atleast_2d(eps))
    recon_err = params.decode(z) - v
    recon = (recon_err * recon_err).sum(axis=1).mean()
    loss = recon + beta * kl
    if not np.isfinite(loss.data):
        raise NumericError("non-finite VAE loss")
    return loss, kl, recon


@dataclass
class TrainingHistory:
    losses: list[float] = field(default_factory=list)


def train_vae(complete_pairs: tuple[np.ndarray, np.ndarray], *, d_z: int = 16,
              epochs: int = 200, lr: float = 1e-2, beta: float = 1.0,
              seed: int = 42, params: VaeParams | None = None,
              ) -> tuple[VaeParams, TrainingHistory]:
    """Fit the imputation VAE on (property, pooled-molecular) pairs."""
    props, targets = np.asarray(complete_pairs[0]), np.asarray(complete_pairs[1])
    if props.shape[0] < 8:
        raise DataError(f"need at least 8 complete pairs to train, got {props.shape[0]}")
    if params is None:
        params = VaeParams(props.shape[1], targets.shape[1], d_z,
                           stage_rng(seed, "mlfie.vae"))
    noise_rng = stage_rng(seed, "mlfie.vae.noise")
    opt = Adam(params.parameters(), lr=lr)
    history = TrainingHistory()
    for _ in range(epochs):
        eps = noise_rng.standard_normal((props.shape[0], params.d_z))
        opt.zero_grad()
        loss, _, _ = vae_loss(props, targets, params, eps=eps, beta=beta)
        loss.backward()
        opt.step()
        # the recorded trajectory is the noise-free objective (posterior mean),
        # so it tracks progress rather than the per-epoch sampling draw
        with no_grad():
            eval_loss, _, _ = vae_loss(props, targets, params, eps=None, beta=beta)
        history.losses.append(eval_loss.item())
    return params, history


def impute_missing(p_h: np.ndarray, params: VaeParams, mode: str = "mean",
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Algorithm: encode the property vector, take the posterior mean (or a
    sample), decode to the molecular embedding space."""
    p_h = np.asarray(p_h, dtype=np.float64)
    if p_h.shape != (params.p_dim,):
        raise SchemaError(f"property vector has shape {p_h.shape}, "
                          f"expected ({params.p_dim},)")
    if mode not in ("mean", "sample"):
        raise DataError(f"unknown imputation mode {mode!r}")
    with no_grad():
        mu, logvar = params.encode(Tensor(p_h.reshape(1, -1)))
        if mode == "mean":
            z = mu
        else:
            if rng is None:
                raise DataError("mode='sample' requires an rng")
            eps = rng.standard_normal((1, params.d_z))
            z = mu + (0.5 * logvar).exp() * Tensor(eps)
        return params.decode(z).data.reshape(-1)


# ---------------------------------------------------------------------------
# full component
# ---------------------------------------------------------------------------

class MlfieParams(Module):
    def __init__(self, n_herb: int, p_dim: int, d_m: int, d_k: int, d_z: int,
                 seed: int, scalar_gate: bool = False):
        self.d_m = d_m
        self.attention = AttentionParams(p_dim, d_m, d_k, stage_rng(seed, "mlfie.attn"))
        self.gate = GateParams(d_m, stage_rng(seed, "mlfie.gate"), scalar=scalar_gate)
        self.latent = LatentMolTable(n_herb, d_m, stage_rng(seed, "mlfie.latent"))
        self.probe = Linear(d_m, p_dim, stage_rng(seed, "mlfie.probe"))
        self.vae = VaeParams(p_dim, d_m, d_z, stage_rng(seed, "mlfie.vae"))


def pooled_vector(herb: HerbRecord, params: MlfieParams) -> Tensor:
    embs = molecule_embeddings(herb, params.d_m)
    return aggregate_attention(embs, herb.properties, params.attention)


def herb_representation(herb: HerbRecord, params: MlfieParams,
                        impute_mode: str = "mean",
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Dispatch on data availability: pool+gate when molecules exist, VAE
    imputation followed by the same gate when they do not."""
    if herb.molecules:
        v_h = pooled_vector(herb, params)
    else:
        v_h = Tensor(impute_missing(herb.properties, params.vae,
                                    mode=impute_mode, rng=rng))
    with no_grad():
        fused = fuse_gate(v_h, params.latent.row(herb.id), params.gate)
    return fused.data.copy()


def train_property_alignment(herbs: list[HerbRecord], params: MlfieParams, *,
                             epochs: int = 100, lr: float = 1e-2, seed: int = 42,
                             ) -> TrainingHistory:
    """Pretrain the pooling attention, gate and latent table by regressing
    the fused herb vector onto the herb's property vector through a linear
    probe (the only per-herb supervision available before the heads train).
    """
    with_mols = [h for h in herbs if h.molecules]
    if not with_mols:
        raise DataError("no herbs with molecular data to align")
    emb_cache = [np.asarray(molecule_embeddings(h, params.d_m)) for h in with_mols]
    prop_mat = np.asarray([h.properties for h in with_mols])
    opt = Adam(params.attention.parameters() + params.gate.parameters()
               + params.latent.parameters() + params.probe.parameters(), lr=lr)
    history = TrainingHistory()
    for _ in range(epochs):
        opt.zero_grad()
        fused_rows = []
        for h, embs in zip(with_mols, emb_cache):
            v_h = aggregate_attention(embs, h.properties, params.attention)
            fused_rows.append(fuse_gate(v_h, params.latent.row(h.id), params.gate))
        fused = stack(fused_rows, axis=0)
        err = params.probe(fused) - Tensor(prop_mat)
        loss = (err * err).mean()
        loss.backward()
        opt.step()
        history.losses.append(loss.item())
    return history


def all_herb_representations(herbs: list[HerbRecord], params: MlfieParams,
                             ) -> np.ndarray:
    return np.asarray([herb_representation(h, params) for h in herbs])


def complete_pairs(herbs: list[HerbRecord], params: MlfieParams,
                   ) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """(property, pooled-vector) training pairs from herbs that have
    molecules, plus their ids."""
    ids = [h.id for h in herbs if h.molecules]
    if not ids:
        raise DataError("no complete herbs in the corpus")
    props, targets = [], []
    with no_grad():
        for h in herbs:
            if h.molecules:
                props.append(h.properties)
                targets.append(pooled_vector(h, params).data)
    return np.asarray(props), np.asarray(targets), ids
