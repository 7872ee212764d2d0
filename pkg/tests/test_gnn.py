"""
Tests for the threshold GNN: forward invariants, the sum-rate loss and its
gradients, training, timed inference and model files.
"""

import math

import numpy as np
import pytest

from engine.errors import DatasetSchemaError, DimensionError, StaleModelError, TrainingDivergedError
from engine.gnn import (
    FeatureScaler,
    GnnModel,
    LossContext,
    allocate,
    evaluate_model,
    infer_timed,
    infer_timed_batch,
    load_model,
    predict_batch,
    save_model,
    sum_rate_loss,
    timing_batch_size,
    train,
)
from engine.graph import batch_graphs, build_graph
from engine.metrics import weighted_sum_rate
from engine.netsim import ScenarioConfig, generate_dataset, sample_network
from engine.stochgeo import ThresholdSpec
from conftest import make_instance, permute_instance


def two_pair_instance():
    gains = np.array([[1.0, 0.5], [0.25, 2.0]])
    return make_instance(np.sqrt(gains), noise_power=1.0)


class TestForward:
    """Output range and structural invariants."""

    def test_dimensions_follow_encoding(self):
        reim, gain = GnnModel("reim"), GnnModel("gain")
        assert reim.f_A.layer_dims == [8, 6, 16, 32]
        assert reim.f_C.layer_dims == [37, 16, 8, 1]
        assert gain.f_A.layer_dims == [6, 6, 16, 32]
        assert gain.f_C.layer_dims == [36, 16, 8, 1]

    def test_powers_inside_box(self, small_scenario):
        model = GnnModel(seed=1)
        for i in range(5):
            net = sample_network(small_scenario.replace(p_max=2.5), i)
            p = model(build_graph(net, ThresholdSpec.for_neighbours(3)))
            assert p.shape == (10,)
            assert np.all((p >= 0) & (p <= 2.5))

    def test_all_neighbours_matches_complete_exactly(self, small_scenario):
        model = GnnModel(seed=2)
        net = sample_network(small_scenario, 1)
        a = model(build_graph(net, ThresholdSpec.for_neighbours(net.num_pairs - 1)))
        b = model(build_graph(net, ThresholdSpec.complete()))
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("spec", [ThresholdSpec.complete(), ThresholdSpec.for_neighbours(2),
                                      ThresholdSpec.for_distance(15)])
    def test_permutation_equivariance(self, small_scenario, spec):
        model = GnnModel(seed=3)
        net = sample_network(small_scenario, 2)
        perm = np.random.default_rng(0).permutation(net.num_pairs)
        p = model(build_graph(net, spec))
        p_perm = model(build_graph(permute_instance(net, perm), spec))
        assert np.allclose(p_perm, p[perm], rtol=0, atol=1e-9)

    def test_isolated_vertices_still_get_power(self):
        net = make_instance(np.eye(3) + 0.1, noise_power=1.0)
        g = build_graph(net, ThresholdSpec.for_distance(1))
        assert g.num_edges == 0
        p = GnnModel(seed=4)(g)
        assert np.all(np.isfinite(p)) and np.all((p >= 0) & (p <= 1))

    def test_batched_equals_single(self, tiny_scenario):
        model = GnnModel(seed=5)
        nets = generate_dataset(tiny_scenario, 4)
        spec = ThresholdSpec.for_neighbours(2)
        batched = predict_batch(model, nets, spec, batch_size=3)
        for net, p in zip(nets, batched):
            assert np.allclose(p, model(build_graph(net, spec)), rtol=0, atol=1e-12)

    def test_encoding_mismatch(self, tiny_scenario):
        g = build_graph(sample_network(tiny_scenario), ThresholdSpec.complete(), "gain")
        with pytest.raises(StaleModelError):
            GnnModel("reim")(g)


class TestLoss:
    """Negative weighted sum rate."""

    def test_single_pair(self):
        net = make_instance([[2.0]], noise_power=0.5)
        loss = sum_rate_loss(np.array([1.0]), net)
        assert float(loss.data) == pytest.approx(-math.log2(1.0 + 4.0 / 0.5))

    def test_two_pairs_by_hand(self):
        loss = sum_rate_loss(np.array([1.0, 1.0]), two_pair_instance())
        assert float(loss.data) == pytest.approx(-(math.log2(1.8) + math.log2(1.0 + 2.0 / 1.5)), rel=1e-12)

    def test_zero_power_gives_zero_loss(self):
        assert float(sum_rate_loss(np.zeros(2), two_pair_instance()).data) == 0.0

    def test_agrees_with_metrics(self, small_scenario):
        nets = generate_dataset(small_scenario.replace(weight_mode="uniform_random"), 3)
        rng = np.random.default_rng(0)
        powers = [rng.uniform(0, 1, n.num_pairs) for n in nets]
        loss = sum_rate_loss(np.concatenate(powers), nets)
        expected = -np.mean([weighted_sum_rate(n, p) for n, p in zip(nets, powers)])
        assert float(loss.data) == pytest.approx(expected, rel=1e-12)

    def test_wrong_power_count(self):
        with pytest.raises(DimensionError):
            sum_rate_loss(np.ones(3), two_pair_instance())

    def test_zero_weights_give_zero_grads(self, tiny_scenario):
        net = sample_network(tiny_scenario)
        net.weights = np.zeros(net.num_pairs)
        model = GnnModel(seed=6)
        model.zero_grad()
        sum_rate_loss(model.forward(build_graph(net, ThresholdSpec.complete())), net).backward()
        assert all(np.allclose(p.grad, 0.0) for p in model.parameters())

    @pytest.mark.parametrize("seed", range(20))
    def test_end_to_end_gradient(self, seed):
        net = sample_network(ScenarioConfig(num_pairs=3, region_side=20.0, noise_power=0.01, seed=seed), 0)
        spec = ThresholdSpec.for_neighbours(1) if seed % 2 else ThresholdSpec.complete()
        g = build_graph(net, spec)
        ctx = LossContext(net)
        model = GnnModel(seed=seed)
        model.zero_grad()
        sum_rate_loss(model.forward(g), ctx).backward()

        rng = np.random.default_rng(seed)
        h = 1e-6
        for mlp in (model.f_A, model.f_C):
            analytic = np.concatenate([p.grad.ravel() for p in mlp.parameters()])
            flat = mlp.flat_parameters()
            for k in rng.choice(flat.size, size=40, replace=False):
                up, down = flat.copy(), flat.copy()
                up[k] += h
                down[k] -= h
                mlp.load_flat_parameters(up)
                f_up = float(sum_rate_loss(model.forward(g), ctx).data)
                mlp.load_flat_parameters(down)
                f_down = float(sum_rate_loss(model.forward(g), ctx).data)
                mlp.load_flat_parameters(flat)
                assert analytic[k] == pytest.approx((f_up - f_down) / (2 * h), rel=1e-4, abs=1e-7)

    def test_batched_gradient_matches_sum_of_singles(self, tiny_scenario):
        nets = generate_dataset(tiny_scenario.replace(noise_power=0.01), 2)
        spec = ThresholdSpec.for_neighbours(2)
        model = GnnModel(seed=7)
        model.zero_grad()
        sum_rate_loss(model.forward(batch_graphs([build_graph(n, spec) for n in nets])), LossContext(nets)).backward()
        batched = [p.grad.copy() for p in model.parameters()]
        singles = [np.zeros_like(p.data) for p in model.parameters()]
        for n in nets:
            model.zero_grad()
            sum_rate_loss(model.forward(build_graph(n, spec)), n).backward()
            singles = [s + p.grad / len(nets) for s, p in zip(singles, model.parameters())]
        assert all(np.allclose(b, s, rtol=1e-9, atol=1e-12) for b, s in zip(batched, singles))


class TestTraining:
    """Unsupervised training loop."""

    def test_scaler_floors_constant_columns(self, tiny_scenario):
        graphs = [build_graph(n, ThresholdSpec.complete()) for n in generate_dataset(tiny_scenario, 3)]
        scaler = FeatureScaler.fit(graphs)
        # the weight column is all ones
        assert scaler.vertex_std[2] == 1.0
        assert scaler.vertex_mean[2] == 1.0

    def test_scaler_dict_round_trip(self, tiny_scenario):
        graphs = [build_graph(n, ThresholdSpec.complete()) for n in generate_dataset(tiny_scenario, 3)]
        scaler = FeatureScaler.fit(graphs)
        again = FeatureScaler.from_dict(scaler.to_dict())
        assert np.array_equal(again.edge_std, scaler.edge_std)

    def test_loss_decreases(self, small_scenario):
        nets = generate_dataset(small_scenario, 32)
        model, log = train(GnnModel(seed=8), nets, ThresholdSpec.for_neighbours(3),
                           {"epochs": 15, "batch_size": 8, "learning_rate": 1e-2}, verbose=False)
        assert list(log.columns) == ["epoch", "loss", "eval_sum_rate"]
        assert len(log) == 15
        assert log["loss"].iloc[-1] < log["loss"].iloc[0]

    def test_training_is_reproducible(self, tiny_scenario):
        nets = generate_dataset(tiny_scenario, 8)
        cfg = {"epochs": 2, "batch_size": 4, "learning_rate": 1e-2, "seed": 3}
        a, _ = train(GnnModel(seed=1), nets, ThresholdSpec.complete(), cfg, verbose=False)
        b, _ = train(GnnModel(seed=1), nets, ThresholdSpec.complete(), cfg, verbose=False)
        assert np.array_equal(a.f_C.flat_parameters(), b.f_C.flat_parameters())

    def test_eval_column_and_log_file(self, tiny_scenario, tmp_path):
        nets = generate_dataset(tiny_scenario, 6)
        _, log = train(GnnModel(seed=2), nets[:4], ThresholdSpec.complete(), {"epochs": 2, "batch_size": 2},
                       eval_instances=nets[4:], log_path=tmp_path / "log.csv", verbose=False)
        assert np.all(np.isfinite(log["eval_sum_rate"]))
        assert (tmp_path / "log.csv").exists()

    def test_non_finite_loss_raises(self):
        bad = make_instance(np.array([[1.0, np.nan], [0.5, 1.0]]))
        with pytest.raises(TrainingDivergedError):
            train(GnnModel(seed=0), [bad], ThresholdSpec.complete(), {"epochs": 1}, verbose=False)

    def test_empty_dataset(self):
        with pytest.raises(DimensionError):
            train(GnnModel(), [], ThresholdSpec.complete(), verbose=False)

    @pytest.mark.slow
    def test_interference_free_links_go_to_full_power(self):
        rng = np.random.default_rng(0)
        nets = [make_instance(np.diag(rng.uniform(0.5, 2.0, 4)), noise_power=1.0, instance_id=i) for i in range(32)]
        model, _ = train(GnnModel(seed=9), nets, ThresholdSpec.complete(),
                         {"epochs": 100, "batch_size": 8, "learning_rate": 2e-2}, verbose=False)
        powers = np.concatenate(predict_batch(model, nets, ThresholdSpec.complete()))
        assert powers.mean() > 0.9


class TestInference:
    """Allocation, timing and model files."""

    def test_allocate_reports_rate(self, tiny_scenario):
        net = sample_network(tiny_scenario)
        model = GnnModel(seed=1)
        result = allocate(model, net, ThresholdSpec.complete(), "Complete-GNN")
        assert result.algorithm == "Complete-GNN"
        assert result.weighted_sum_rate == pytest.approx(weighted_sum_rate(net, result.powers))
        assert result.inference_time >= 0 and result.graph_time >= 0

    def test_infer_timed_is_deterministic(self, tiny_scenario):
        net = sample_network(tiny_scenario)
        model = GnnModel(seed=1)
        a = infer_timed(model, net, ThresholdSpec.for_neighbours(2), repeats=3, warmups=1)
        b = infer_timed(model, net, ThresholdSpec.for_neighbours(2), repeats=3, warmups=1)
        assert np.array_equal(a.powers, b.powers)
        assert a.inference_time > 0

    def test_batch_timing(self, tiny_scenario):
        nets = generate_dataset(tiny_scenario, 6)
        bt = infer_timed_batch(GnnModel(seed=1), nets, ThresholdSpec.for_neighbours(2), repeats=2, warmups=1,
                               max_batch=4, edge_budget=1000)
        assert bt.edges_per_instance == 10.0
        assert bt.batch_size == 4
        assert bt.num_instances == 6
        assert bt.forward_per_instance > 0

    def test_batch_size_respects_budget(self):
        assert timing_batch_size(1000, max_batch=64, edge_budget=5000) == 5
        assert timing_batch_size(10, max_batch=64, edge_budget=5000) == 64
        assert timing_batch_size(10 ** 6, max_batch=64, edge_budget=5000) == 1

    def test_evaluate_model(self, tiny_scenario):
        nets = generate_dataset(tiny_scenario, 3)
        model = GnnModel(seed=1)
        spec = ThresholdSpec.complete()
        expected = np.mean([allocate(model, n, spec).weighted_sum_rate for n in nets])
        assert evaluate_model(model, nets, spec) == pytest.approx(expected, rel=1e-12)

    def test_save_load_round_trip(self, tiny_scenario, tmp_path):
        nets = generate_dataset(tiny_scenario, 4)
        model, _ = train(GnnModel("gain", seed=3), nets, ThresholdSpec.complete(), {"epochs": 1}, verbose=False)
        model.config_hash = "abc123"
        loaded = load_model(save_model(model, tmp_path / "m.npz"))
        assert loaded.encoding == "gain"
        assert loaded.config_hash == "abc123"
        g = build_graph(nets[0], ThresholdSpec.complete(), "gain")
        assert np.array_equal(loaded(g), model(g))

    def test_trained_spec_is_stored_and_checked(self, tiny_scenario, tmp_path):
        nets = generate_dataset(tiny_scenario, 4)
        model, _ = train(GnnModel(seed=3), nets, ThresholdSpec.for_neighbours(2), {"epochs": 1}, verbose=False)
        model.config_hash = "abc123"
        path = save_model(model, tmp_path / "m.npz")
        assert load_model(path).trained_spec == "neighbour:2"
        # another neighbour count is the same rule re-resolved for a new scenario
        assert load_model(path, spec=ThresholdSpec.for_neighbours(4), config_hash="abc123").trained_spec == "neighbour:2"
        with pytest.raises(StaleModelError):
            load_model(path, spec=ThresholdSpec.complete())
        with pytest.raises(StaleModelError):
            load_model(path, spec=ThresholdSpec.for_distance(5.0))
        with pytest.raises(StaleModelError):
            load_model(path, config_hash="def456")

    def test_untrained_model_loads_under_any_spec(self, tmp_path):
        path = save_model(GnnModel(seed=1), tmp_path / "m.npz")
        assert load_model(path, spec=ThresholdSpec.complete()).trained_spec == ""

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_bytes(b"definitely not a model")
        with pytest.raises(DatasetSchemaError):
            load_model(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model(tmp_path / "absent.npz")

    def test_parameter_size_mismatch(self, tmp_path):
        path = save_model(GnnModel(seed=1), tmp_path / "m.npz")
        with np.load(path) as data:
            header, f_a, f_c = data["header"], data["f_A"], data["f_C"]
        with open(path, "wb") as f:
            np.savez(f, header=header, f_A=f_a[:-3], f_C=f_c)
        with pytest.raises(StaleModelError):
            load_model(path)
