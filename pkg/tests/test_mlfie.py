import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmash.dataio import HerbRecord, generate_synthetic
from fmash.errors import DataError, SchemaError
from fmash.gradcheck import max_relative_error
from fmash.mlfie import (AttentionParams, GateParams, MlfieParams, VaeParams,
                         aggregate_attention, attention_weights, complete_pairs,
                         fuse_gate, herb_representation, impute_missing,
                         molecule_embeddings, pooled_vector, stub_encode_molecule,
                         train_property_alignment, train_vae, vae_loss)
from fmash.nn import stage_rng
from fmash.tape import Tensor

FIXTURE_SMILES = ["CCO", "CCN", "c1ccccc1", "CC(=O)O", "C", "N", "O", "CCCC",
                  "C(=O)N", "ClCCl", "OCC(O)CO", "CC(C)C"]


def smoothed(losses, window=10):
    arr = np.asarray(losses)
    if arr.size < window:
        return arr
    kernel = np.ones(window) / window
    return np.convolve(arr, kernel, mode="valid")


# ---------------------------------------------------------------------------
# stub encoder
# ---------------------------------------------------------------------------

def test_stub_encoder_deterministic_and_normalized():
    for s in FIXTURE_SMILES:
        a = stub_encode_molecule(s, 16)
        b = stub_encode_molecule(s, 16)
        np.testing.assert_array_equal(a, b)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-6


def test_stub_encoder_separates_fixture_set():
    vecs = [stub_encode_molecule(s, 32) for s in FIXTURE_SMILES]
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            assert not np.allclose(vecs[i], vecs[j]), \
                f"collision: {FIXTURE_SMILES[i]} vs {FIXTURE_SMILES[j]}"


def test_stub_encoder_rejects_empty_string():
    with pytest.raises(SchemaError):
        stub_encode_molecule("", 8)


# ---------------------------------------------------------------------------
# attention pooling
# ---------------------------------------------------------------------------

def test_single_molecule_gets_full_weight():
    params = AttentionParams(4, 6, 3, stage_rng(0, "attn"))
    e = np.random.default_rng(0).normal(size=(1, 6))
    p = np.random.default_rng(1).normal(size=4)
    v = aggregate_attention(e, p, params)
    np.testing.assert_allclose(v.data, e[0], atol=1e-12)
    alpha = attention_weights(Tensor(e), Tensor(p), params)
    np.testing.assert_allclose(alpha.data, [1.0], atol=1e-15)


def test_zero_query_gives_uniform_mean():
    params = AttentionParams(4, 6, 3, stage_rng(1, "attn"))
    params.w_q.data[:] = 0.0
    rng = np.random.default_rng(2)
    e = rng.normal(size=(5, 6))
    v = aggregate_attention(e, rng.normal(size=4), params)
    np.testing.assert_allclose(v.data, e.mean(axis=0), atol=1e-12)


def test_hand_built_logits_give_expected_softmax():
    # d_k = 1; query = 1; keys produce logits (0, ln 2) -> alpha = (1/3, 2/3)
    params = AttentionParams(1, 2, 1, stage_rng(2, "attn"))
    params.w_q.data = np.array([[1.0]])
    params.w_k.data = np.array([[1.0], [0.0]])
    e = np.array([[0.0, 5.0], [np.log(2.0), -1.0]])
    alpha = attention_weights(Tensor(e), Tensor(np.array([1.0])), params)
    np.testing.assert_allclose(alpha.data, [1.0 / 3.0, 2.0 / 3.0], atol=1e-12)
    v = aggregate_attention(e, np.array([1.0]), params)
    np.testing.assert_allclose(v.data, (e[0] + 2.0 * e[1]) / 3.0, atol=1e-12)


@given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=10_000))
@settings(max_examples=60, deadline=None)
def test_attention_simplex_and_convex_hull(k, seed):
    rng = np.random.default_rng(seed)
    params = AttentionParams(3, 5, 4, np.random.default_rng(seed + 1))
    e = rng.normal(size=(k, 5))
    p = rng.normal(size=3)
    alpha = attention_weights(Tensor(e), Tensor(p), params).data
    assert np.all(alpha >= 0.0)
    assert abs(alpha.sum() - 1.0) <= 1e-9
    v = aggregate_attention(e, p, params).data
    assert np.all(v >= e.min(axis=0) - 1e-12)
    assert np.all(v <= e.max(axis=0) + 1e-12)


def test_attention_invariant_to_molecule_order():
    rng = np.random.default_rng(5)
    params = AttentionParams(3, 5, 4, stage_rng(3, "attn"))
    e = rng.normal(size=(6, 5))
    p = rng.normal(size=3)
    v1 = aggregate_attention(e, p, params).data
    perm = rng.permutation(6)
    v2 = aggregate_attention(e[perm], p, params).data
    np.testing.assert_allclose(v1, v2, atol=1e-12)


def test_attention_requires_molecules():
    params = AttentionParams(3, 5, 4, stage_rng(4, "attn"))
    with pytest.raises(DataError):
        aggregate_attention(np.zeros((0, 5)), np.zeros(3), params)


def test_attention_gradients():
    params = AttentionParams(3, 4, 2, stage_rng(5, "attn"))
    e = Tensor(np.random.default_rng(6).normal(size=(4, 4)), requires_grad=True)
    p = Tensor(np.random.default_rng(7).normal(size=3), requires_grad=True)
    probe = np.random.default_rng(8).normal(size=4)

    def loss():
        return (aggregate_attention(e, p, params) * probe).sum()

    assert max_relative_error(loss, [e, p, params.w_q, params.w_k]) < 1e-4


# ---------------------------------------------------------------------------
# gate fusion
# ---------------------------------------------------------------------------

def test_zero_gate_averages_inputs():
    params = GateParams(4, stage_rng(6, "gate"))
    params.w_g.data[:] = 0.0
    rng = np.random.default_rng(9)
    v, h = rng.normal(size=4), rng.normal(size=4)
    out = fuse_gate(v, h, params)
    np.testing.assert_allclose(out.data, 0.5 * (v + h), atol=1e-12)


def test_saturated_gate_returns_pooled_vector():
    params = GateParams(4, stage_rng(7, "gate"))
    params.w_g.data[:] = 0.0
    params.b_g.data[:] = 50.0
    rng = np.random.default_rng(10)
    v, h = rng.normal(size=4), rng.normal(size=4)
    out = fuse_gate(v, h, params)
    np.testing.assert_allclose(out.data, v, atol=1e-9)


def test_fixed_gate_blend():
    params = GateParams(2, stage_rng(8, "gate"))
    params.w_g.data[:] = 0.0
    params.b_g.data[:] = np.log(0.8 / 0.2)   # sigmoid -> 0.8
    out = fuse_gate(np.array([1.0, 0.0]), np.array([0.0, 1.0]), params)
    np.testing.assert_allclose(out.data, [0.8, 0.2], atol=1e-12)


def test_gate_convexity_bounds_1000_random_inputs():
    rng = np.random.default_rng(11)
    params = GateParams(6, stage_rng(9, "gate"))
    for _ in range(1000):
        v, h = rng.normal(size=6), rng.normal(size=6)
        out = fuse_gate(v, h, params).data
        lo, hi = np.minimum(v, h), np.maximum(v, h)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_scalar_gate_variant():
    params = GateParams(5, stage_rng(10, "gate"), scalar=True)
    assert params.w_g.data.shape == (5, 1)
    out = fuse_gate(np.ones(5), np.zeros(5), params)
    assert np.all((0.0 <= out.data) & (out.data <= 1.0))
    assert np.allclose(out.data, out.data[0])   # one shared gate value


def test_gate_gradients():
    params = GateParams(3, stage_rng(11, "gate"))
    v = Tensor(np.random.default_rng(12).normal(size=3), requires_grad=True)
    h = Tensor(np.random.default_rng(13).normal(size=3), requires_grad=True)
    probe = np.random.default_rng(14).normal(size=3)

    def loss():
        return (fuse_gate(v, h, params) * probe).sum()

    assert max_relative_error(loss, [v, h, params.w_g, params.b_g]) < 1e-4


# ---------------------------------------------------------------------------
# VAE
# ---------------------------------------------------------------------------

def _forced_encoder(params: VaeParams, mu_value: float) -> VaeParams:
    params.enc_mu.weight.data[:] = 0.0
    params.enc_mu.bias.data[:] = mu_value
    params.enc_logvar.weight.data[:] = 0.0
    params.enc_logvar.bias.data[:] = 0.0
    return params


def test_kl_zero_at_standard_normal_posterior():
    params = _forced_encoder(VaeParams(3, 4, 2, stage_rng(12, "vae")), 0.0)
    _, kl, _ = vae_loss(np.ones(3), np.zeros(4), params)
    assert kl.item() == 0.0


def test_kl_closed_form_value():
    params = _forced_encoder(VaeParams(3, 4, 1, stage_rng(13, "vae")), 1.0)
    _, kl, _ = vae_loss(np.ones(3), np.zeros(4), params)
    assert abs(kl.item() - 0.5) < 1e-12


def test_perfect_reconstruction_zeroes_recon_term():
    params = VaeParams(3, 4, 2, stage_rng(14, "vae"))
    p = np.random.default_rng(15).normal(size=3)
    from fmash.tape import no_grad
    with no_grad():
        mu, _ = params.encode(Tensor(p.reshape(1, -1)))
        target = params.decode(mu).data.reshape(-1)
    _, _, recon = vae_loss(p, target, params)
    assert recon.item() < 1e-24


def test_kl_nonnegative_on_random_inputs():
    params = VaeParams(5, 4, 3, stage_rng(15, "vae"))
    rng = np.random.default_rng(16)
    for _ in range(50):
        _, kl, _ = vae_loss(rng.normal(size=5), rng.normal(size=4), params)
        assert kl.item() >= 0.0


def test_vae_loss_gradients():
    params = VaeParams(3, 4, 2, stage_rng(16, "vae"), hidden=8)
    rng = np.random.default_rng(17)
    p = rng.normal(size=(2, 3))
    v = rng.normal(size=(2, 4))
    eps = rng.standard_normal((2, 2))

    def loss():
        return vae_loss(p, v, params, eps=eps)[0]

    assert max_relative_error(loss, params.parameters()) < 1e-4


def _fixture_corpus():
    return generate_synthetic(10, 60, 5, 40, seed=7, missing_mol_fraction=0.2,
                              unique_symptom_sets=False)


def test_train_vae_smoothed_loss_nonincreasing():
    _, herbs, _ = _fixture_corpus()
    params = MlfieParams(60, 23, 16, 8, 8, seed=3)
    props, targets, _ = complete_pairs(herbs, params)
    vae, history = train_vae((props, targets), d_z=8, epochs=150, lr=5e-3, seed=3)
    ma = smoothed(history.losses, window=10)
    assert np.all(np.diff(ma) <= 1e-9)
    assert history.losses[-1] < history.losses[0]


def test_train_vae_deterministic_under_seed():
    _, herbs, _ = _fixture_corpus()
    params = MlfieParams(60, 23, 16, 8, 8, seed=3)
    props, targets, _ = complete_pairs(herbs, params)
    v1, _ = train_vae((props, targets), d_z=8, epochs=30, seed=9)
    v2, _ = train_vae((props, targets), d_z=8, epochs=30, seed=9)
    for k, a in v1.state_dict().items():
        np.testing.assert_array_equal(a, v2.state_dict()[k])


def test_train_vae_zero_epochs_returns_init():
    _, herbs, _ = _fixture_corpus()
    params = MlfieParams(60, 23, 16, 8, 8, seed=3)
    props, targets, _ = complete_pairs(herbs, params)
    init = VaeParams(23, 16, 8, stage_rng(5, "mlfie.vae"))
    before = init.state_dict()
    trained, history = train_vae((props, targets), d_z=8, epochs=0, params=init)
    assert history.losses == []
    for k, a in trained.state_dict().items():
        np.testing.assert_array_equal(a, before[k])


def test_train_vae_needs_enough_pairs():
    with pytest.raises(DataError):
        train_vae((np.zeros((5, 3)), np.zeros((5, 4))))


def test_impute_deterministic_in_mean_mode():
    params = VaeParams(4, 6, 3, stage_rng(17, "vae"))
    p = np.random.default_rng(18).normal(size=4)
    np.testing.assert_array_equal(impute_missing(p, params),
                                  impute_missing(p, params))


def test_impute_rejects_wrong_property_length():
    params = VaeParams(4, 6, 3, stage_rng(18, "vae"))
    with pytest.raises(SchemaError):
        impute_missing(np.zeros(5), params)


def test_impute_sample_mode_needs_rng():
    params = VaeParams(4, 6, 3, stage_rng(19, "vae"))
    with pytest.raises(DataError):
        impute_missing(np.zeros(4), params, mode="sample")
    out = impute_missing(np.zeros(4), params, mode="sample",
                         rng=np.random.default_rng(0))
    assert out.shape == (6,)


def test_holdout_imputation_error_within_twice_train_median():
    _, herbs, _ = _fixture_corpus()
    params = MlfieParams(60, 23, 16, 8, 8, seed=3)
    train_property_alignment(herbs, params, epochs=40, lr=1e-2, seed=3)
    props, targets, ids = complete_pairs(herbs, params)
    n_hold = max(4, len(ids) // 5)
    hold_p, hold_v = props[-n_hold:], targets[-n_hold:]
    fit_p, fit_v = props[:-n_hold], targets[:-n_hold]
    vae, _ = train_vae((fit_p, fit_v), d_z=8, epochs=250, lr=5e-3, seed=3)
    train_err = [float(((impute_missing(p, vae) - v) ** 2).sum())
                 for p, v in zip(fit_p, fit_v)]
    hold_err = [float(((impute_missing(p, vae) - v) ** 2).sum())
                for p, v in zip(hold_p, hold_v)]
    assert np.median(hold_err) <= 2.0 * np.median(train_err)


# ---------------------------------------------------------------------------
# dispatch and pretraining
# ---------------------------------------------------------------------------

def test_representation_dispatch_paths():
    _, herbs, _ = _fixture_corpus()
    params = MlfieParams(60, 23, 16, 8, 8, seed=3)
    with_mols = next(h for h in herbs if len(h.molecules) >= 3)
    without = next(h for h in herbs if not h.molecules)
    r1 = herb_representation(with_mols, params)
    r2 = herb_representation(without, params)
    assert r1.shape == r2.shape == (16,)
    assert np.isfinite(r1).all() and np.isfinite(r2).all()


def test_representation_bounded_by_pool_and_latent():
    _, herbs, _ = _fixture_corpus()
    params = MlfieParams(60, 23, 16, 8, 8, seed=4)
    from fmash.tape import no_grad
    for h in herbs[:30]:
        if not h.molecules:
            continue
        with no_grad():
            v = pooled_vector(h, params).data
        he = params.latent.weight.data[h.id]
        fused = herb_representation(h, params)
        assert np.all(fused >= np.minimum(v, he) - 1e-12)
        assert np.all(fused <= np.maximum(v, he) + 1e-12)


def test_precomputed_embeddings_override_stub():
    herb = HerbRecord(id=0, name="x", properties=np.zeros(3),
                      molecules=["CCO"], mol_embeddings=[np.arange(4.0)])
    embs = molecule_embeddings(herb, 4)
    np.testing.assert_array_equal(embs[0], np.arange(4.0))
    herb.mol_embeddings = [np.zeros(4), np.zeros(4)]
    with pytest.raises(SchemaError):
        molecule_embeddings(herb, 4)


def test_property_alignment_reduces_loss():
    _, herbs, _ = _fixture_corpus()
    params = MlfieParams(60, 23, 16, 8, 8, seed=5)
    history = train_property_alignment(herbs, params, epochs=60, lr=1e-2, seed=5)
    assert history.losses[-1] < history.losses[0]
    ma = smoothed(history.losses, window=10)
    assert ma[-1] <= ma[0]
