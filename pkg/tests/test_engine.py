import io

import numpy as np
import pytest

from nctucker import (
    ConstraintGraph,
    DivergenceError,
    METRICS_HEADER,
    SparseTensor,
    TrainConfig,
    TuckerModel,
    init_random,
    mode_gradient_vector,
    objective,
    orthogonalize,
    reconstruct_entries,
    reconstruct_entry,
    scaled_core,
    train,
    update_from_network_edge,
    update_from_tensor_entry,
)

from conftest import planted_observations, random_model, random_sparse
from oracles import central_difference, entry_value_oracle


def entry_loss(model, entry, tensor, config):
    """Per-sample objective at one observed entry (data + scaled L2 terms)."""
    index, x = entry
    rows = [model.factors[n][i] for n, i in enumerate(index)]
    residual = x - entry_value_oracle(model.core, rows)
    loss = residual**2 + (config.lam / tensor.nnz) * np.sum(model.core**2)
    for n, i in enumerate(index):
        loss += config.lam * np.sum(rows[n] ** 2) / tensor.row_counts[n][i]
    return 0.5 * loss


def edge_loss(model, edge, config):
    k1, k2, y = edge
    u = model.factors[config.constrained_mode]
    return 0.5 * config.lam_g * y * np.sum((u[k1] - u[k2]) ** 2)


class TestEntryUpdate:
    def test_zero_residual_without_penalty_is_a_fixed_point(self, rng):
        model = random_model(rng, (3, 3, 3), (2, 2, 2))
        idx = (1, 2, 0)
        x = reconstruct_entry(model, idx)
        tensor = SparseTensor(model.dims, np.array([idx]), np.array([x]))
        config = TrainConfig(core_dims=(2, 2, 2), learning_rate=0.1, lam=0.0)
        before = model.copy()
        update_from_tensor_entry(model, (idx, x), tensor, config,
                                 is_core_updater=True)
        assert np.allclose(model.core, before.core, rtol=0, atol=1e-15)
        for a, b in zip(model.factors, before.factors):
            assert np.allclose(a, b, rtol=0, atol=1e-15)

    def test_unit_model_step_by_hand(self):
        # residual is -1, every gradient direction is 1, so each parameter
        # moves up by eta
        model = TuckerModel(
            np.ones((1, 1, 1)), [np.ones((1, 1)) for _ in range(3)]
        )
        tensor = SparseTensor((1, 1, 1), np.array([[0, 0, 0]]), np.array([2.0]))
        config = TrainConfig(core_dims=(1, 1, 1), learning_rate=0.1, lam=0.0,
                             threads=1)
        update_from_tensor_entry(model, ((0, 0, 0), 2.0), tensor, config,
                                 is_core_updater=True)
        for u in model.factors:
            assert u[0, 0] == pytest.approx(1.1, rel=1e-15)
        assert model.core[0, 0, 0] == pytest.approx(1.1, rel=1e-15)

    def test_single_step_decreases_single_sample_loss(self, rng):
        for _ in range(5):
            model = random_model(rng, (3, 3, 3), (2, 2, 2))
            tensor = random_sparse(rng, model.dims, 6)
            idx = tuple(tensor.indices[0])
            x = float(tensor.values[0]) + 1.0  # force a residual
            config = TrainConfig(core_dims=(2, 2, 2), learning_rate=1e-4,
                                 lam=0.0)
            before = entry_loss(model, (idx, x), tensor, config)
            update_from_tensor_entry(model, (idx, x), tensor, config,
                                     is_core_updater=True)
            after = entry_loss(model, (idx, x), tensor, config)
            assert after < before

    def test_displacement_is_minus_eta_times_gradient(self, rng):
        """Factor-row and core moves match the per-sample analytic gradient."""
        model = random_model(rng, (3, 3, 3), (2, 2, 2))
        tensor = random_sparse(rng, model.dims, 9)
        idx = tuple(tensor.indices[3])
        x = float(tensor.values[3])
        config = TrainConfig(core_dims=(2, 2, 2), learning_rate=0.05, lam=0.4)
        snaps = [model.factors[n][i].copy() for n, i in enumerate(idx)]
        core_before = model.core.copy()
        residual = scaled_core(model.core, snaps).sum() - x
        update_from_tensor_entry(model, (idx, x), tensor, config,
                                 is_core_updater=True)
        for n, i in enumerate(idx):
            grad = residual * mode_gradient_vector(core_before, snaps, n)
            grad += (config.lam / tensor.row_counts[n][i]) * snaps[n]
            moved = model.factors[n][i] - snaps[n]
            assert np.allclose(moved, -config.learning_rate * grad, rtol=1e-12)
        rank1 = np.einsum("a,b,c->abc", *snaps)
        core_grad = residual * rank1 + (config.lam / tensor.nnz) * core_before
        assert np.allclose(
            model.core - core_before,
            -config.learning_rate * config.threads * core_grad,
            rtol=1e-12,
        )


class TestEdgeUpdate:
    def test_orthogonal_rows_move_symmetrically(self):
        model = TuckerModel(
            np.zeros((2, 2, 1)), [np.eye(2), np.eye(2), np.ones((1, 1))]
        )
        config = TrainConfig(core_dims=(2, 2, 1), learning_rate=0.1,
                             lam_g=1.0, constrained_mode=1)
        update_from_network_edge(model, (0, 1, 1.0), config)
        assert np.allclose(model.factors[1][0], [0.9, 0.1], rtol=1e-15)
        assert np.allclose(model.factors[1][1], [0.1, 0.9], rtol=1e-15)

    def test_identical_rows_are_unchanged(self, rng):
        model = random_model(rng, (3, 4, 3), (2, 2, 2))
        model.factors[1][2] = model.factors[1][0]
        before = model.factors[1].copy()
        config = TrainConfig(core_dims=(2, 2, 2), learning_rate=0.3,
                             lam_g=2.0, constrained_mode=1)
        update_from_network_edge(model, (0, 2, 1.0), config)
        assert np.array_equal(model.factors[1], before)

    def test_contraction_factor_over_many_pairs(self, rng):
        # distance shrinks by exactly |1 - 2*eta*lam_g*y| per update
        config = TrainConfig(core_dims=(2, 2, 2), learning_rate=0.07,
                             lam_g=0.9, constrained_mode=1)
        for _ in range(1000):
            model = random_model(rng, (2, 2, 2), (2, 2, 2),
                                 scale=float(rng.random() * 4 + 0.1))
            y = float(rng.random() * 2)
            gap = np.linalg.norm(model.factors[1][0] - model.factors[1][1])
            update_from_network_edge(model, (0, 1, y), config)
            new_gap = np.linalg.norm(model.factors[1][0] - model.factors[1][1])
            factor = abs(1.0 - 2.0 * config.learning_rate * config.lam_g * y)
            assert new_gap == pytest.approx(factor * gap, rel=1e-10, abs=1e-15)

    def test_gradient_matches_finite_difference(self, rng):
        model = random_model(rng, (3, 4, 3), (2, 2, 2))
        config = TrainConfig(core_dims=(2, 2, 2), lam_g=0.8, constrained_mode=1)
        edge = (1, 3, 1.7)
        u = model.factors[1]
        for k, sign in ((1, 1.0), (3, -1.0)):
            analytic = sign * config.lam_g * edge[2] * (u[1] - u[3])
            fd = central_difference(
                lambda: edge_loss(model, edge, config), u[k]
            )
            assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-9)


class TestGradientOracle:
    def test_every_parameter_matches_central_differences(self, rng):
        config = TrainConfig(core_dims=(2, 2, 2), lam=0.25, lam_g=0.6,
                             constrained_mode=1)
        for _ in range(5):
            model = random_model(rng, (3, 3, 3), (2, 2, 2))
            tensor = random_sparse(rng, model.dims, 8)
            idx = tuple(tensor.indices[0])
            x = float(tensor.values[0])
            snaps = [model.factors[n][i] for n, i in enumerate(idx)]
            residual = entry_value_oracle(model.core, snaps) - x

            loss = lambda: entry_loss(model, (idx, x), tensor, config)
            for n, i in enumerate(idx):
                analytic = residual * mode_gradient_vector(model.core, snaps, n)
                analytic = analytic + (
                    config.lam / tensor.row_counts[n][i]
                ) * snaps[n]
                fd = central_difference(loss, model.factors[n][i])
                assert np.allclose(analytic, fd, rtol=1e-4, atol=1e-9)
            rank1 = np.einsum("a,b,c->abc", *snaps)
            core_grad = residual * rank1 + (config.lam / tensor.nnz) * model.core
            fd = central_difference(loss, model.core)
            assert np.allclose(core_grad, fd, rtol=1e-4, atol=1e-9)


def apply_stream_with_reference_ops(model, tensor, graph, config):
    """Replay one epoch's stream through the single-step reference ops."""
    rng = np.random.default_rng(config.seed)
    n_edges = graph.edge_count if graph is not None else 0
    for item in rng.permutation(tensor.nnz + n_edges):
        if item < tensor.nnz:
            entry = (tuple(tensor.indices[item]), float(tensor.values[item]))
            update_from_tensor_entry(model, entry, tensor, config,
                                     is_core_updater=True)
        else:
            k1, k2 = graph.nodes[item - tensor.nnz]
            y = float(graph.weights[item - tensor.nnz])
            update_from_network_edge(model, (int(k1), int(k2), y), config)


class TestTrain:
    def test_one_epoch_equals_reference_ops(self, rng):
        dims = (6, 5, 4)
        config = TrainConfig(core_dims=(2, 3, 2), learning_rate=0.05,
                             lam=0.1, lam_g=0.4, constrained_mode=1,
                             max_epochs=1, seed=42)
        tensor = random_sparse(rng, dims, 25)
        graph = ConstraintGraph(5, [(0, 1), (2, 4), (1, 3)],
                                rng.random(3), mode=1)
        kernel_model = init_random(dims, config)
        ref_model = kernel_model.copy()
        train(kernel_model, tensor, graph, config)
        apply_stream_with_reference_ops(ref_model, tensor, graph, config)
        orthogonalize(ref_model)
        assert np.allclose(kernel_model.core, ref_model.core, rtol=1e-12)
        for a, b in zip(kernel_model.factors, ref_model.factors):
            assert np.allclose(a, b, rtol=1e-12)

    def test_planted_recovery(self, rng):
        # noiseless rank-(2,2,2) data, 30% observed: held-out entries must
        # reconstruct to well under 5% relative RMSE
        dims = (50, 40, 5)
        planted = random_model(rng, dims, (2, 2, 2))
        indices, values = planted_observations(rng, planted, 0.30)
        n_test = len(values) // 10
        test_idx, test_val = indices[:n_test], values[:n_test]
        tensor = SparseTensor(dims, indices[n_test:], values[n_test:])
        config = TrainConfig(core_dims=(2, 2, 2), learning_rate=0.01,
                             lam=1e-3, lam_g=0.0, max_epochs=200,
                             tolerance=1e-12, seed=3)
        model = init_random(dims, config)
        train(model, tensor, None, config)
        pred = reconstruct_entries(model, test_idx)
        rel_rmse = np.sqrt(np.mean((pred - test_val) ** 2))
        rel_rmse /= np.sqrt(np.mean(test_val**2))
        assert rel_rmse < 0.05

    def test_missing_graph_equals_empty_graph(self, rng):
        dims = (6, 5, 4)
        tensor = random_sparse(rng, dims, 20)
        config = TrainConfig(core_dims=(2, 2, 2), learning_rate=0.05,
                             lam_g=0.0, max_epochs=5, seed=11)
        a = init_random(dims, config)
        b = a.copy()
        train(a, tensor, None, config)
        train(b, tensor, ConstraintGraph(5, np.zeros((0, 2)), mode=1), config)
        assert np.array_equal(a.core, b.core)
        for ua, ub in zip(a.factors, b.factors):
            assert np.array_equal(ua, ub)

    def test_single_thread_runs_are_bitwise_identical(self, rng):
        dims = (8, 6, 4)
        tensor = random_sparse(rng, dims, 30)
        graph = ConstraintGraph(6, [(0, 3), (2, 5)], mode=1)
        config = TrainConfig(core_dims=(3, 2, 2), learning_rate=0.03,
                             lam=0.01, lam_g=0.2, max_epochs=8, seed=5)
        results = []
        for _ in range(2):
            model = init_random(dims, config)
            report = train(model, tensor, graph, config)
            results.append((model, report))
        (m1, r1), (m2, r2) = results
        assert np.array_equal(m1.core, m2.core)
        for a, b in zip(m1.factors, m2.factors):
            assert np.array_equal(a, b)
        assert r1.objective_trace == r2.objective_trace

    def test_objective_nonincreasing_at_small_learning_rate(self, rng):
        dims = (50, 40, 5)
        planted = random_model(rng, dims, (4, 3, 2))
        indices, values = planted_observations(rng, planted, 0.30)
        tensor = SparseTensor(dims, indices, values)
        config = TrainConfig(core_dims=(4, 3, 2), learning_rate=1e-3,
                             lam=1e-3, max_epochs=20, tolerance=1e-15, seed=2)
        model = init_random(dims, config)
        report = train(model, tensor, None, config)
        f_opts = [row[3] for row in report.objective_trace]
        assert len(f_opts) == 20
        assert all(b <= a for a, b in zip(f_opts, f_opts[1:]))

    def test_metrics_stream_is_csv(self, rng):
        dims = (6, 5, 4)
        tensor = random_sparse(rng, dims, 15)
        config = TrainConfig(core_dims=(2, 2, 2), max_epochs=3,
                             tolerance=1e-15, seed=1)
        model = init_random(dims, config)
        buffer = io.StringIO()
        report = train(model, tensor, None, config, metrics=buffer)
        lines = buffer.getvalue().strip().split("\n")
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 1 + report.epochs_run
        for epoch, line in enumerate(lines[1:], start=1):
            cells = line.split(",")
            assert int(cells[0]) == epoch
            f, f_g, f_opt, seconds = map(float, cells[1:])
            assert (epoch, f, f_g, f_opt) == report.objective_trace[epoch - 1]
            assert seconds >= 0.0

    def test_convergence_stops_early(self, rng):
        dims = (5, 4, 3)
        tensor = random_sparse(rng, dims, 12)
        config = TrainConfig(core_dims=(2, 2, 2), learning_rate=1e-6,
                             max_epochs=50, tolerance=1e-3, seed=1)
        model = init_random(dims, config)
        report = train(model, tensor, None, config)
        assert report.converged
        assert report.epochs_run < 50

    def test_divergence_raises_with_advice(self, rng):
        dims = (6, 5, 4)
        tensor = random_sparse(rng, dims, 20)
        config = TrainConfig(core_dims=(3, 3, 3), learning_rate=50.0,
                             max_epochs=30, seed=1)
        model = init_random(dims, config)
        with pytest.raises(DivergenceError, match="learning rate"):
            train(model, tensor, None, config)

    def test_parallel_objective_close_to_serial(self, rng):
        dims = (30, 20, 4)
        planted = random_model(rng, dims, (2, 2, 2))
        indices, values = planted_observations(rng, planted, 0.4)
        tensor = SparseTensor(dims, indices, values)
        base = dict(core_dims=(2, 2, 2), learning_rate=0.01, lam=1e-3,
                    max_epochs=60, tolerance=1e-12, seed=4)
        results = {}
        for threads in (1, 4):
            config = TrainConfig(threads=threads, **base)
            model = init_random(dims, config)
            report = train(model, tensor, None, config)
            results[threads] = report.objective_trace[-1][3]
        assert results[4] == pytest.approx(results[1], rel=0.05)


class TestOrthogonalize:
    def test_orthonormal_factor_is_untouched(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        q *= np.where(np.diagonal(np.linalg.qr(q)[1]) < 0, -1.0, 1.0)
        core = rng.standard_normal((3, 2, 2))
        model = TuckerModel(
            core.copy(), [q.copy(), np.eye(2), np.eye(2)]
        )
        orthogonalize(model)
        assert np.allclose(model.factors[0], q, rtol=0, atol=1e-12)
        assert np.allclose(model.core, core, rtol=0, atol=1e-12)

    def test_columns_become_orthonormal(self, rng):
        model = random_model(rng, (10, 8, 5), (3, 3, 2))
        orthogonalize(model)
        for u in model.factors:
            gram = u.T @ u
            assert np.abs(gram - np.eye(u.shape[1])).max() < 1e-8

    def test_reconstruction_preserved(self, rng):
        model = random_model(rng, (10, 8, 5), (3, 3, 2))
        idx = np.stack([rng.integers(0, d, 100) for d in model.dims], axis=1)
        before = reconstruct_entries(model, idx)
        orthogonalize(model)
        after = reconstruct_entries(model, idx)
        assert np.abs(before - after).max() < 1e-8

    def test_rank_deficient_factor_warns_but_proceeds(self, rng):
        model = random_model(rng, (6, 5, 4), (3, 2, 2))
        model.factors[0][:, 2] = model.factors[0][:, 1]  # dependent columns
        idx = np.stack([rng.integers(0, d, 50) for d in model.dims], axis=1)
        before = reconstruct_entries(model, idx)
        with pytest.warns(RuntimeWarning, match="rank deficient"):
            orthogonalize(model)
        assert np.abs(before - reconstruct_entries(model, idx)).max() < 1e-8
