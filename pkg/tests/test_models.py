import numpy as np
import pytest

from graphunlearn import (
    InputError,
    ModelParams,
    NumericError,
    OneLayerGCN,
    SGC,
    TwoLayerGCN,
    make_backbone,
    micro_f1,
    propagate,
    train,
)

from conftest import make_graph


class TestModelParams:
    def test_flatten_roundtrip_is_identity(self):
        rng = np.random.default_rng(0)
        mats = [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))]
        params = ModelParams.from_matrices(mats)
        for original, recovered in zip(mats, params.matrices()):
            np.testing.assert_array_equal(original, recovered)

    def test_class_blocks_are_contiguous(self):
        weights = np.arange(6.0).reshape(2, 3)
        params = ModelParams.from_matrices([weights])
        np.testing.assert_array_equal(params.flat, [0, 3, 1, 4, 2, 5])

    def test_size_mismatch_rejected(self):
        with pytest.raises(InputError):
            ModelParams(np.zeros(5), ((2, 3),))


class TestPropagate:
    def test_zero_steps_returns_features(self, path_graph):
        np.testing.assert_array_equal(propagate(path_graph, 0), path_graph.features)

    def test_single_edge_swap_and_restore(self):
        g = make_graph(2, [(0, 1)])
        once = propagate(g, 1, self_loops=False)
        np.testing.assert_array_equal(once, [[0.0, 1.0], [1.0, 0.0]])
        twice = propagate(g, 2, self_loops=False)
        np.testing.assert_array_equal(twice, np.eye(2))


class TestTraining:
    def test_first_order_optimality_on_toy(self, toy_graph):
        model = SGC(k_hops=1, l2=1e-3, epochs=20000, learning_rate=2.0)
        model.fit(toy_graph)
        assert model.grad_norm_ < 1e-5

    def test_huge_l2_collapses_weights(self, toy_graph):
        model = SGC(k_hops=1, l2=1e6, epochs=3000, learning_rate=1e-7)
        model.fit(toy_graph)
        (weights,) = model.params_.matrices()
        assert np.abs(weights).max() < 1e-3
        probs = model.predict_proba(toy_graph)
        np.testing.assert_allclose(probs, 0.5, atol=1e-3)

    def test_training_is_deterministic(self, sbm_graph):
        a = SGC(k_hops=2, epochs=50).fit(sbm_graph).params_
        b = SGC(k_hops=2, epochs=50).fit(sbm_graph).params_
        np.testing.assert_array_equal(a.flat, b.flat)

    def test_gcn2_training_is_deterministic(self, sbm_graph):
        a = TwoLayerGCN(epochs=30, seed=3).fit(sbm_graph).params_
        b = TwoLayerGCN(epochs=30, seed=3).fit(sbm_graph).params_
        np.testing.assert_array_equal(a.flat, b.flat)

    def test_objective_non_increasing(self, sbm_graph, toy_graph):
        for graph in (sbm_graph, toy_graph):
            for model in (SGC(epochs=80), TwoLayerGCN(epochs=80, seed=1)):
                model.fit(graph)
                assert np.all(np.diff(model.objective_history_) <= 1e-9)

    def test_convex_objective_has_unique_optimum(self, toy_graph):
        # GD from a random start must land on the same weights as the
        # zero-start run (strict convexity with l2 > 0).
        model = SGC(k_hops=1, l2=1e-2, epochs=8000)
        model.fit(toy_graph)
        rng = np.random.default_rng(5)
        params = model.params_.replace(rng.standard_normal(model.params_.size))
        train_nodes = toy_graph.train_nodes
        for _ in range(10000):
            grad = model.loss_grad(toy_graph, params, train_nodes, include_l2=True)
            params = params.replace(params.flat - 0.125 * grad)
        assert np.abs(params.flat - model.params_.flat).max() < 1e-4

    def test_no_training_nodes_rejected(self):
        g = make_graph(2, [(0, 1)], train=np.array([False, False]))
        with pytest.raises(InputError):
            SGC().fit(g)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergent_training_reports_epoch(self, toy_graph):
        with pytest.raises(NumericError, match="epoch"):
            SGC(k_hops=1, l2=1e6, epochs=200, learning_rate=10.0).fit(toy_graph)

    def test_train_helper_returns_params(self, toy_graph):
        params = train(toy_graph, SGC(k_hops=1, epochs=50))
        assert params.size == toy_graph.num_features * toy_graph.num_classes


class TestPrediction:
    def test_zero_weights_give_uniform_rows(self, toy_graph):
        model = SGC(k_hops=1)
        params = ModelParams.from_matrices([np.zeros((4, 2))])
        probs = model.predict_proba(toy_graph, params)
        np.testing.assert_array_equal(probs, np.full((4, 2), 0.5))

    def test_softmax_arithmetic(self):
        g = make_graph(1, [], features=np.ones((1, 1)), labels=np.array([0]),
                       train=np.array([True]), test=np.array([False]))
        model = SGC(k_hops=0)
        params = ModelParams.from_matrices([np.array([[np.log(2.0), 0.0]])])
        probs = model.predict_proba(g, params)
        np.testing.assert_allclose(probs, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-15)

    def test_rows_sum_to_one(self, sbm_graph):
        rng = np.random.default_rng(1)
        for model in (SGC(k_hops=2), TwoLayerGCN(seed=0)):
            model.fit(sbm_graph)
            noisy = model.params_.replace(
                model.params_.flat + rng.standard_normal(model.params_.size)
            )
            probs = model.predict_proba(sbm_graph, noisy)
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_mismatch_rejected(self, toy_graph, sbm_graph):
        model = SGC(k_hops=1).fit(toy_graph)
        with pytest.raises(InputError):
            model.predict_proba(sbm_graph)

    def test_unfitted_model_needs_params(self, toy_graph):
        with pytest.raises(InputError):
            SGC().predict(toy_graph)


class TestMicroF1:
    def test_all_correct(self):
        assert micro_f1([1, 2, 0], [1, 2, 0]) == 1.0

    def test_all_wrong(self):
        assert micro_f1([0, 0], [1, 1]) == 0.0

    def test_partial_match_equals_accuracy(self):
        assert micro_f1([0, 0, 1], [0, 1, 1]) == pytest.approx(2.0 / 3.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(InputError):
            micro_f1([0, 1], [0])


class TestBackboneFactory:
    def test_kinds(self):
        assert isinstance(make_backbone("sgc"), SGC)
        assert isinstance(make_backbone("gcn1"), OneLayerGCN)
        assert isinstance(make_backbone("gcn2"), TwoLayerGCN)
        assert make_backbone("gcn1").depth == 1

    def test_unknown_kind_rejected(self):
        with pytest.raises(InputError):
            make_backbone("gat")

    def test_sklearn_clone_compatible(self):
        from sklearn.base import clone

        model = make_backbone("gcn1", l2=0.5)
        cloned = clone(model)
        assert cloned.l2 == 0.5 and cloned.k_hops == 1
