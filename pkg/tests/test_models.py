"""Model forwards: linear utilities, graph convolutions, skip networks.

Derived expectations are checked against independent oracles: explicit
numpy pipelines for forwards, the equilibrium solver for the deep-network
limit, and algebraic reductions (two-alternative models collapsing to the
binary form on differenced attributes) evaluated numerically.
"""

import numpy as np
import pytest
from scipy.sparse import csr_array

from fdcheck import random_row_graph, randomized_weights
from netchoice.errors import (ConfigError, IdentificationError, LoadError,
                              ParameterError, ShapeError, StateError)
from netchoice.graph import AdjacencyGraph, affine_fixed_point
from netchoice.models import (ConditionalLogitModel, ConditionalLogitParams,
                              GcnModel, LinearUtilityParams, LogitModel,
                              MODEL_FAMILIES, SkipGnnBinaryModel,
                              SkipGnnIiaModel, SkipGnnMultinomialModel,
                              SkipGnnSpec, Weights,
                              conditional_logit_forward, finalize_stats,
                              gcn_forward, load_checkpoint, logit_forward,
                              model_from_spec_dict, private_utility,
                              probs_to_choices, save_checkpoint,
                              skip_gnn_forward_binary,
                              skip_gnn_forward_multinomial,
                              skip_gnn_iia_forward, skip_gnn_model,
                              validate_spec)
from netchoice.autodiff import Tape


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


# ---------------------------------------------------------------------------
# binary logit


def test_logit_all_zero_parameters_give_half():
    params = LinearUtilityParams(beta=np.zeros(3), gamma=np.zeros(2))
    rng = np.random.default_rng(0)
    p = logit_forward(params, rng.normal(size=(10, 3)), rng.normal(size=(10, 2)))
    assert np.array_equal(p, np.full(10, 0.5))


def test_logit_zero_attribute_gives_half():
    p = logit_forward(LinearUtilityParams(beta=[1.0]), [[0.0]])
    assert p[0] == 0.5


def test_logit_forward_matches_direct_formula():
    # fixture with small negative time/cost coefficients on differenced data
    params = LinearUtilityParams(beta=[-0.022, -0.101])
    rng = np.random.default_rng(8)
    x = rng.normal(0.0, 20.0, size=(50, 2))
    p = logit_forward(params, x)
    assert np.allclose(p, sigmoid(x @ np.array([-0.022, -0.101])), atol=1e-14)


def test_logit_forward_with_all_terms():
    params = LinearUtilityParams(beta=[0.5, -1.0], gamma=[0.3], intercept=-0.2)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(20, 2))
    q = rng.normal(size=(20, 1))
    p = logit_forward(params, x, q)
    u = x @ params.beta + q @ params.gamma - 0.2
    assert np.allclose(p, sigmoid(u), atol=1e-14)


def test_logit_shape_mismatch_errors():
    model = LogitModel(2, 1)
    w = model.init_weights()
    with pytest.raises(ShapeError, match="columns"):
        model.build(Tape(), w, np.ones((4, 3)), np.ones((4, 1)))
    with pytest.raises(ShapeError, match="columns"):
        model.build(Tape(), w, np.ones((4, 2)), np.ones((4, 2)))
    with pytest.raises(ShapeError, match="rows"):
        model.build(Tape(), w, np.ones((4, 2)), np.ones((3, 1)))


def test_logit_params_weights_roundtrip():
    model = LogitModel(2, 1, fit_intercept=True)
    params = LinearUtilityParams(beta=[0.25, -0.75], gamma=[1.5], intercept=2.0)
    back = model.params_from_weights(model.weights_from_params(params))
    assert np.array_equal(back.beta, params.beta)
    assert np.array_equal(back.gamma, params.gamma)
    assert back.intercept == params.intercept


# ---------------------------------------------------------------------------
# conditional logit


def test_conditional_logit_symmetric_alternatives_give_uniform():
    J, k, n = 3, 2, 6
    params = ConditionalLogitParams(beta=[0.7, -0.4], n_alternatives=J)
    rng = np.random.default_rng(1)
    block = rng.normal(size=(n, 1, k))
    x = np.tile(block, (1, J, 1))  # identical attributes across alternatives
    p = conditional_logit_forward(params, x)
    assert np.allclose(p, 1.0 / J, atol=1e-15)


def test_conditional_logit_two_alternatives_reduce_to_logit_on_differences():
    rng = np.random.default_rng(2)
    n, k, r = 25, 2, 1
    x = rng.normal(size=(n, 2, k))
    q = rng.normal(size=(n, r))
    params = ConditionalLogitParams(
        beta=[0.8, -0.3], n_alternatives=2, asc=[0.45, 0.0],
        gamma=[[0.6], [0.0]], base_alternative=1,
    )
    p = conditional_logit_forward(params, x, q)
    p_binary = logit_forward(
        LinearUtilityParams(beta=[0.8, -0.3], gamma=[0.6], intercept=0.45),
        x[:, 0, :] - x[:, 1, :], q,
    )
    assert np.allclose(p[:, 0], p_binary, atol=1e-12)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_conditional_logit_matches_exp_sum_oracle():
    rng = np.random.default_rng(3)
    n, J, k, r = 12, 3, 2, 2
    x = rng.normal(size=(n, J, k))
    q = rng.normal(size=(n, r))
    beta = np.array([0.5, -1.1])
    asc = np.array([0.2, -0.4, 0.0])
    gamma = np.array([[0.3, -0.2], [0.1, 0.4], [0.0, 0.0]])
    params = ConditionalLogitParams(beta=beta, n_alternatives=J, asc=asc,
                                    gamma=gamma, base_alternative=2)
    p = conditional_logit_forward(params, x, q)

    u = x @ beta + asc + q @ gamma.T
    expect = np.exp(u) / np.exp(u).sum(axis=1, keepdims=True)
    assert np.allclose(p, expect, atol=1e-12)


def test_conditional_logit_identification_guards():
    with pytest.raises(IdentificationError):
        ConditionalLogitParams(beta=[1.0], n_alternatives=3,
                               base_alternative=None)
    with pytest.raises(IdentificationError, match="base"):
        ConditionalLogitParams(beta=[1.0], n_alternatives=2,
                               asc=[0.0, 1.0], base_alternative=1)
    with pytest.raises(IdentificationError):
        ConditionalLogitParams(beta=[1.0], n_alternatives=2,
                               gamma=[[0.0], [2.0]], base_alternative=1)


def test_conditional_logit_flat_and_stacked_inputs_agree():
    rng = np.random.default_rng(4)
    x3 = rng.normal(size=(10, 3, 2))
    params = ConditionalLogitParams(beta=[1.0, -1.0], n_alternatives=3)
    p3 = conditional_logit_forward(params, x3)
    p2 = conditional_logit_forward(params, x3.reshape(10, 6))
    assert np.array_equal(p3, p2)


# ---------------------------------------------------------------------------
# plain GCN


def test_gcn_identity_graph_collapses_to_logit():
    rng = np.random.default_rng(5)
    n, k, r = 15, 2, 1
    x = rng.uniform(0.1, 2.0, size=(n, k))  # positive: relu passes through
    q = rng.uniform(0.1, 2.0, size=(n, r))
    model = GcnModel(k, r, n_alternatives=2, hidden=k + r, layers=2)
    w = model.init_weights()
    w.params["theta_1"] = np.eye(k + r)
    beta, gamma = np.array([0.8, -0.5]), np.array([0.4])
    w.params["theta_2"] = np.concatenate([beta, gamma]).reshape(-1, 1)
    ident = AdjacencyGraph(csr_array(np.eye(n)))
    p = gcn_forward(w, ident, x, q)
    expect = logit_forward(LinearUtilityParams(beta=beta, gamma=gamma), x, q)
    assert np.allclose(p, expect, atol=1e-12)


def test_gcn_zero_final_layer_gives_half():
    rng = np.random.default_rng(6)
    n = 12
    g = random_row_graph(n, 3, seed=0)
    model = GcnModel(2, 0, hidden=4, layers=2)
    w = model.init_weights(np.random.default_rng(7))
    w.params["theta_2"] = np.zeros_like(w.params["theta_2"])
    p = gcn_forward(w, g, rng.normal(size=(n, 2)))
    assert np.array_equal(p, np.full(n, 0.5))


def test_gcn_matches_dense_pipeline_oracle():
    rng = np.random.default_rng(7)
    n, k, r = 5, 2, 1
    g = random_row_graph(n, 2, seed=1)
    x = rng.normal(size=(n, k))
    q = rng.normal(size=(n, r))
    model = GcnModel(k, r, hidden=4, layers=2)
    w = model.init_weights(np.random.default_rng(3))
    p = gcn_forward(w, g, x, q)

    dense = g.to_dense()
    xq = np.hstack([x, q])
    hidden = np.maximum(dense @ (xq @ w["theta_1"]), 0.0)
    u = dense @ (hidden @ w["theta_2"])
    assert np.allclose(p, sigmoid(u).ravel(), atol=1e-12)


def test_gcn_multinomial_head_rows_sum_to_one():
    rng = np.random.default_rng(8)
    n, J, k = 10, 3, 2
    g = random_row_graph(n, 3, seed=2)
    model = GcnModel(k, 1, n_alternatives=J, hidden=5, layers=2)
    w = model.init_weights(np.random.default_rng(9))
    p = gcn_forward(w, g, rng.normal(size=(n, J, k)), rng.normal(size=(n, 1)))
    assert p.shape == (n, J)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12


def test_gcn_requires_matching_graph():
    model = GcnModel(2, 0)
    w = model.init_weights()
    with pytest.raises(ShapeError, match="graph"):
        model.build(Tape(), w, np.ones((4, 2)))
    with pytest.raises(ShapeError, match="nodes"):
        model.build(Tape(), w, np.ones((4, 2)),
                    graph=random_row_graph(5, 2, seed=3))


# ---------------------------------------------------------------------------
# private utility of the binary skip network


def test_private_utility_zero_net_is_linear_part():
    rng = np.random.default_rng(10)
    n, k, r = 9, 2, 1
    model = SkipGnnBinaryModel(k, r, gcn_layers=1, fc_layers=1, fc_width=3)
    w = model.init_weights(np.random.default_rng(4))
    beta, gamma = np.array([[0.5], [-1.0]]), np.array([[0.25]])
    w.params["beta"], w.params["gamma"] = beta, gamma
    w.params["fc_out_w"] = np.zeros_like(w.params["fc_out_w"])
    w.stats[0].set_full(np.zeros((1, 1)), np.ones((1, 1)))
    x = rng.normal(size=(n, k))
    q = rng.normal(size=(n, r))
    upr = private_utility(w, x, q, mode="infer")
    assert np.array_equal(upr, (x @ beta + q @ gamma).ravel())


def test_private_utility_zero_everything_is_zero_after_centering():
    model = SkipGnnBinaryModel(2, 0, gcn_layers=1, fc_layers=2, fc_width=4)
    w = model.init_weights(np.random.default_rng(5))
    x = np.zeros((6, 2))
    upr = private_utility(w, x, mode="train")
    assert np.array_equal(upr, np.zeros(6))


def test_private_utility_component_recomposition():
    rng = np.random.default_rng(11)
    n, k, r = 14, 2, 2
    model = SkipGnnBinaryModel(k, r, gcn_layers=2, fc_layers=2, fc_width=5)
    w = randomized_weights(model, seed=6)
    x = rng.normal(size=(n, k))
    q = rng.normal(size=(n, r))
    upr = private_utility(w, x, q, mode="train")

    xq = np.hstack([x, q])
    h = xq
    for i in (1, 2):
        h = np.maximum(h @ w[f"fc{i}_w"] + w[f"fc{i}_b"], 0.0)
    f = h @ w["fc_out_w"]
    bn = (f - f.mean(axis=0)) / np.sqrt(f.var(axis=0) + 1e-12)
    expect = (x @ w["beta"] + q @ w["gamma"] + bn).ravel()
    assert np.allclose(upr, expect, atol=1e-10)


def test_private_utility_infer_requires_statistics():
    model = SkipGnnBinaryModel(2, 0, fc_layers=1, fc_width=3)
    w = model.init_weights(np.random.default_rng(0))
    with pytest.raises(StateError):
        private_utility(w, np.ones((4, 2)), mode="infer")


def test_private_utility_rejects_other_families():
    model = LogitModel(2)
    w = model.init_weights()
    with pytest.raises(ParameterError):
        private_utility(w, np.ones((3, 2)))


# ---------------------------------------------------------------------------
# binary skip network


def _zero_social(weights):
    for name in weights.params:
        if name.startswith("theta_"):
            weights.params[name] = np.zeros_like(weights.params[name])
    return weights


def test_skip_binary_zero_social_block_equals_private_model():
    rng = np.random.default_rng(12)
    n, k, r = 16, 2, 1
    g = random_row_graph(n, 3, seed=4)
    model = SkipGnnBinaryModel(k, r, gcn_layers=3, fc_layers=2, fc_width=4)
    w = _zero_social(randomized_weights(model, seed=7))
    x = rng.normal(size=(n, k))
    q = rng.normal(size=(n, r))
    probs, u = skip_gnn_forward_binary(w, g, x, q, mode="train",
                                       return_utility=True)
    upr = private_utility(w, x, q, mode="train")
    assert np.array_equal(u, upr)
    assert np.allclose(probs, sigmoid(upr), atol=1e-15)


def test_skip_binary_zero_graph_removes_social_term():
    rng = np.random.default_rng(13)
    n, k = 12, 2
    zero_graph = AdjacencyGraph(csr_array((n, n)))
    model = SkipGnnBinaryModel(k, 0, gcn_layers=2, fc_layers=1, fc_width=3)
    w = randomized_weights(model, seed=8)  # social loadings nonzero
    x = rng.normal(size=(n, k))
    _, u = skip_gnn_forward_binary(w, zero_graph, x, mode="train",
                                   return_utility=True)
    assert np.array_equal(u, private_utility(w, x, mode="train"))


def test_skip_binary_deep_restricted_network_approaches_equilibrium():
    # 100 linear layers, unit private weight, social loading rho at every
    # depth: the utility converges to the solve of u = rho*W*u + z.
    n, rho = 30, 0.3
    g = random_row_graph(n, 4, seed=5)
    z = np.random.default_rng(14).normal(size=(n, 1))
    model = SkipGnnBinaryModel(1, 0, gcn_layers=100, fc_layers=0,
                               activation="linear")
    w = model.init_weights()
    w.params["beta"] = np.array([[1.0]])
    for layer in range(2, 101):
        vec = np.zeros((2, 1))
        vec[0, 0] = rho
        w.params[f"theta_{layer}"] = vec
    w.params["theta_1"] = np.zeros((1, 1))
    _, u = skip_gnn_forward_binary(w, g, z, return_utility=True)
    target = affine_fixed_point(g, rho, z.ravel(), tol=0.0)
    assert np.max(np.abs(u - target)) <= 1e-6


def test_skip_binary_probabilities_in_open_unit_interval():
    rng = np.random.default_rng(15)
    n = 20
    g = random_row_graph(n, 3, seed=6)
    model = SkipGnnBinaryModel(2, 1, gcn_layers=2, fc_layers=2, fc_width=4)
    w = randomized_weights(model, seed=9)
    p = skip_gnn_forward_binary(w, g, rng.normal(size=(n, 2)),
                                rng.normal(size=(n, 1)), mode="train")
    assert np.all((p > 0.0) & (p < 1.0))


# ---------------------------------------------------------------------------
# multinomial skip network (unrestricted)


def test_skip_multinomial_symmetric_instance_gives_uniform():
    rng = np.random.default_rng(16)
    n, J, k = 10, 3, 2
    g = random_row_graph(n, 3, seed=7)
    model = SkipGnnMultinomialModel(J, k, 0, gcn_layers=2, fc_layers=0)
    w = model.init_weights()
    # same social loading column for every alternative -> symmetric trunk
    col1 = rng.normal(size=(J * k, 1))
    w.params["theta_1"] = np.tile(col1, (1, J))
    col2 = rng.normal(size=(J + J * k, 1))
    w.params["theta_2"] = np.tile(col2, (1, J))
    w.params["beta"] = rng.normal(size=(k, 1))
    block = rng.normal(size=(n, 1, k))
    x = np.tile(block, (1, J, 1))  # identical attributes per alternative
    p = skip_gnn_forward_multinomial(w, g, x)
    assert np.allclose(p, 1.0 / J, atol=1e-14)


def test_skip_multinomial_rows_sum_to_one():
    rng = np.random.default_rng(17)
    n, J, k, r = 15, 3, 2, 2
    g = random_row_graph(n, 4, seed=8)
    model = SkipGnnMultinomialModel(J, k, r, gcn_layers=2, fc_layers=1,
                                    fc_width=4)
    w = randomized_weights(model, seed=10)
    p = skip_gnn_forward_multinomial(w, g, rng.normal(size=(n, J, k)),
                                     rng.normal(size=(n, r)), mode="train")
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12


def test_skip_multinomial_zero_social_block_equals_private_part():
    rng = np.random.default_rng(18)
    n, J, k, r = 12, 3, 2, 1
    g = random_row_graph(n, 3, seed=9)
    model = SkipGnnMultinomialModel(J, k, r, gcn_layers=2, fc_layers=1,
                                    fc_width=3)
    w = _zero_social(randomized_weights(model, seed=11))
    out = model.build(Tape(), w, rng.normal(size=(n, J, k)),
                      rng.normal(size=(n, r)), graph=g, mode="train",
                      bn_update=None)
    assert np.array_equal(out.utility.value, out.private.value)


def test_skip_multinomial_two_mirrored_alternatives_reduce_to_binary():
    rng = np.random.default_rng(19)
    n, k, r, width = 18, 2, 1, 4
    g = random_row_graph(n, 3, seed=10)
    diff = rng.normal(size=(n, k))
    q = rng.normal(size=(n, r))

    binary = SkipGnnBinaryModel(k, r, gcn_layers=1, fc_layers=1,
                                fc_width=width)
    wb = randomized_weights(binary, seed=12)
    p_bin = skip_gnn_forward_binary(wb, g, diff, q, mode="train")

    multi = SkipGnnMultinomialModel(2, k, r, gcn_layers=1, fc_layers=1,
                                    fc_width=width, base_alternative=0)
    wm = multi.init_weights(np.random.default_rng(0))
    wm.params["beta"] = wb["beta"].copy()
    wm.params["gamma_1"] = wb["gamma"].copy()
    # mirrored attributes x0 = -diff/2, x1 = +diff/2; the first fc layer
    # sees [x0, x1, q], so alternative 0 rows carry the negated binary rows
    wm.params["fc1_w"] = np.vstack([
        -wb["fc1_w"][:k], wb["fc1_w"][:k], wb["fc1_w"][k:],
    ])
    wm.params["fc1_b"] = wb["fc1_b"].copy()
    wm.params["fc_out_w"] = np.hstack([
        np.zeros((width, 1)), wb["fc_out_w"],
    ])
    theta_x, theta_q = wb["theta_1"][:k], wb["theta_1"][k:]
    wm.params["theta_1"] = np.hstack([
        np.zeros((2 * k + r, 1)),
        np.vstack([-theta_x, theta_x, theta_q]),
    ])
    x_pair = np.concatenate([-diff[:, None, :] / 2.0, diff[:, None, :] / 2.0],
                            axis=1)
    p_multi = skip_gnn_forward_multinomial(wm, g, x_pair, q, mode="train")
    assert np.allclose(p_multi[:, 1], p_bin, atol=1e-10)
    assert np.allclose(p_multi[:, 0], 1.0 - p_bin, atol=1e-10)


def test_skip_multinomial_rejects_gamma_on_all_alternatives():
    with pytest.raises(IdentificationError):
        SkipGnnMultinomialModel(3, 2, 1, base_alternative=None)


# ---------------------------------------------------------------------------
# IIA skip network


def _iia_setup(seed, n=12, J=3, k=2, r=2):
    rng = np.random.default_rng(seed)
    g = random_row_graph(n, 3, seed=seed + 100)
    model = SkipGnnIiaModel(J, k, r, embed_dim=2, embed_width=3,
                            gcn_layers=2, fc_layers=1, fc_width=3)
    w = randomized_weights(model, seed=seed + 200)
    x = rng.normal(size=(n, J, k))
    q = rng.normal(size=(n, r))
    return model, w, g, x, q


def test_iia_swapping_alternative_bundles_swaps_probabilities():
    model, w, g, x, q = _iia_setup(seed=20)
    J, K = model.n_alternatives, model.embed_dim
    p1 = skip_gnn_iia_forward(w, g, x, q, mode="train")

    perm = [2, 1, 0]  # swap alternatives 0 and 2
    x_sw = x[:, perm, :]
    w_sw = w.copy()
    out_w = w["emb_out_w"].reshape(-1, J, K)
    out_b = w["emb_out_b"].reshape(1, J, K)
    w_sw.params["emb_out_w"] = out_w[:, perm, :].reshape(w["emb_out_w"].shape)
    w_sw.params["emb_out_b"] = out_b[:, perm, :].reshape(w["emb_out_b"].shape)
    p2 = skip_gnn_iia_forward(w_sw, g, x_sw, q, mode="train")
    assert np.allclose(p2, p1[:, perm], atol=1e-14)


def test_iia_log_odds_ignore_third_alternative():
    model, w, g, x, q = _iia_setup(seed=21)
    p1 = skip_gnn_iia_forward(w, g, x, q, mode="train")
    x2 = x.copy()
    x2[:, 2, :] += np.random.default_rng(22).normal(1.0, 0.5, size=x2[:, 2, :].shape)
    p2 = skip_gnn_iia_forward(w, g, x2, q, mode="train")
    drift = np.log(p1[:, 0] / p1[:, 1]) - np.log(p2[:, 0] / p2[:, 1])
    assert np.max(np.abs(drift)) <= 1e-10


def test_iia_identical_bundles_give_uniform():
    model, w, g, x, q = _iia_setup(seed=23)
    J, K = model.n_alternatives, model.embed_dim
    x_same = np.tile(x[:, :1, :], (1, J, 1))
    out_w = w["emb_out_w"].reshape(-1, J, K)
    out_b = w["emb_out_b"].reshape(1, J, K)
    w.params["emb_out_w"] = np.tile(out_w[:, :1, :], (1, J, 1)).reshape(
        w["emb_out_w"].shape)
    w.params["emb_out_b"] = np.tile(out_b[:, :1, :], (1, J, 1)).reshape(
        w["emb_out_b"].shape)
    p = skip_gnn_iia_forward(w, g, x_same, q, mode="train")
    assert np.allclose(p, 1.0 / J, atol=1e-14)


def test_iia_constructor_validation():
    with pytest.raises(ConfigError, match="socio-demographic"):
        SkipGnnIiaModel(3, 2, 0, embed_dim=2)
    with pytest.raises(ConfigError, match="embed_dim"):
        SkipGnnIiaModel(3, 2, 1, embed_dim=0)
    with pytest.raises(ConfigError, match="embed_entry_layer"):
        SkipGnnIiaModel(3, 2, 1, embed_dim=1, gcn_layers=2,
                        embed_entry_layer=2)


# ---------------------------------------------------------------------------
# spec validation and factory


def test_validate_spec_accepts_defaults_and_rejects_inconsistency():
    validate_spec(SkipGnnSpec())
    with pytest.raises(ConfigError, match="sigmoid"):
        validate_spec(SkipGnnSpec(output="sigmoid", n_alternatives=3))
    with pytest.raises(ConfigError, match="softmax"):
        validate_spec(SkipGnnSpec(output="sigmoid", iia=True))
    with pytest.raises(ConfigError, match="embed_dim"):
        validate_spec(SkipGnnSpec(output="softmax", n_alternatives=3,
                                  iia=True, embed_dim=0))
    with pytest.raises(IdentificationError):
        validate_spec(SkipGnnSpec(output="softmax", n_alternatives=3,
                                  base_alternative=None))
    with pytest.raises(ConfigError, match="output"):
        validate_spec(SkipGnnSpec(output="probit"))


def test_skip_gnn_model_factory_dispatch():
    binary = skip_gnn_model(SkipGnnSpec(), k=2, r=1)
    assert isinstance(binary, SkipGnnBinaryModel)
    multi = skip_gnn_model(
        SkipGnnSpec(output="softmax", n_alternatives=3), k=2, r=1)
    assert isinstance(multi, SkipGnnMultinomialModel)
    assert multi.base == 2
    iia = skip_gnn_model(
        SkipGnnSpec(output="softmax", n_alternatives=3, iia=True,
                    embed_dim=2), k=2, r=1)
    assert isinstance(iia, SkipGnnIiaModel)


def test_model_from_spec_dict_roundtrip():
    for family, ctor in (
        ("logit", lambda: LogitModel(2, 1)),
        ("conditional_logit", lambda: ConditionalLogitModel(3, 2, 1)),
        ("gcn", lambda: GcnModel(2, 1, n_alternatives=3, hidden=5, layers=3)),
        ("skip_gnn_binary", lambda: SkipGnnBinaryModel(2, 1, gcn_layers=3)),
        ("skip_gnn_multinomial", lambda: SkipGnnMultinomialModel(3, 2, 1)),
        ("skip_gnn_iia", lambda: SkipGnnIiaModel(3, 2, 1, embed_dim=2)),
    ):
        model = ctor()
        clone = model_from_spec_dict(model.spec_dict())
        assert type(clone) is type(model)
        assert clone.spec_dict() == model.spec_dict()
        assert family in MODEL_FAMILIES
    with pytest.raises(ConfigError, match="family"):
        model_from_spec_dict({"family": "probit"})


# ---------------------------------------------------------------------------
# weights container, choices, checkpoints


def test_weights_vector_roundtrip():
    model = SkipGnnBinaryModel(2, 1, gcn_layers=2, fc_layers=1, fc_width=3)
    w = randomized_weights(model, seed=24)
    vec = w.to_vector()
    assert vec.size == w.n_params
    clone = model.init_weights(np.random.default_rng(0)).from_vector(vec)
    assert np.array_equal(clone.to_vector(), vec)
    for name in w.params:
        assert np.array_equal(clone[name], w[name])
    with pytest.raises(ShapeError, match="entries"):
        w.from_vector(np.zeros(vec.size + 1))


def test_weights_copy_is_independent():
    model = LogitModel(2)
    w = model.init_weights()
    dup = w.copy()
    dup.params["beta"][0, 0] = 99.0
    assert w["beta"][0, 0] == 0.0


def test_probs_to_choices_binary_and_multinomial():
    assert np.array_equal(probs_to_choices([0.4, 0.6, 0.5]), [0, 1, 0])
    probs = np.array([[0.2, 0.5, 0.3], [0.4, 0.4, 0.2]])
    assert np.array_equal(probs_to_choices(probs), [1, 0])  # tie -> lowest


def test_finalize_stats_enables_inference():
    rng = np.random.default_rng(25)
    n = 10
    g = random_row_graph(n, 3, seed=11)
    model = SkipGnnBinaryModel(2, 0, gcn_layers=1, fc_layers=1, fc_width=3)
    w = randomized_weights(model, seed=26)
    x = rng.normal(size=(n, 2))
    with pytest.raises(StateError):
        skip_gnn_forward_binary(w, g, x, mode="infer")
    finalize_stats(w, x, graph=g)
    assert w.stats[0].source == "full"
    p = skip_gnn_forward_binary(w, g, x, mode="infer")
    assert np.all((p > 0) & (p < 1))


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(27)
    n = 8
    g = random_row_graph(n, 2, seed=12)
    model = SkipGnnBinaryModel(2, 1, gcn_layers=2, fc_layers=1, fc_width=3)
    w = randomized_weights(model, seed=28)
    finalize_stats(w, rng.normal(size=(n, 2)), rng.normal(size=(n, 1)),
                   graph=g)
    path = tmp_path / "weights.json"
    save_checkpoint(w, path)
    back = load_checkpoint(path)
    assert back.model.spec_dict() == model.spec_dict()
    assert list(back.params) == list(w.params)
    for name in w.params:
        assert np.array_equal(back[name], w[name])
    assert back.stats[0].source == "full"
    assert np.array_equal(back.stats[0].mean, w.stats[0].mean)
    assert np.array_equal(back.stats[0].var, w.stats[0].var)


def test_checkpoint_load_rejects_foreign_or_broken_files(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(LoadError, match="cannot read"):
        load_checkpoint(path)
    path.write_text('{"format": "something-else"}')
    with pytest.raises(LoadError, match="not a netchoice checkpoint"):
        load_checkpoint(path)

    model = LogitModel(1)
    good = tmp_path / "good.json"
    save_checkpoint(model.init_weights(), good)
    import json

    payload = json.loads(good.read_text())
    payload["version"] = 99
    bad_version = tmp_path / "v99.json"
    bad_version.write_text(json.dumps(payload))
    with pytest.raises(LoadError, match="version"):
        load_checkpoint(bad_version)

    payload = json.loads(good.read_text())
    payload["params"] = {"unexpected": {"shape": [1, 1], "data": [0.0]}}
    renamed = tmp_path / "renamed.json"
    renamed.write_text(json.dumps(payload))
    with pytest.raises(LoadError, match="parameter names"):
        load_checkpoint(renamed)


def test_multinomial_input_coercion_errors():
    model = SkipGnnMultinomialModel(3, 2, 1)
    w = model.init_weights()
    g = random_row_graph(4, 2, seed=13)
    with pytest.raises(ShapeError, match="alternatives"):
        model.build(Tape(), w, np.ones((4, 5)), np.ones((4, 1)), graph=g)
    with pytest.raises(ShapeError, match=r"\(n, 3, 2\)"):
        model.build(Tape(), w, np.ones((4, 2, 2)), np.ones((4, 1)), graph=g)
