"""Tests for the solver network, its optimizer and checkpoints."""

import numpy as np
import pytest

from genetic_rehearsal import ParseError, ShapeError, ValidationError
from genetic_rehearsal.nn import (
    AdamState,
    SolverNetwork,
    TrainConfig,
    Trainer,
    accuracy_percent,
    adam_step,
    forward,
    hidden,
    inspect_checkpoint,
    load_checkpoint,
    loss_and_gradients,
    predict,
    predict_proba,
    save_checkpoint,
    softmax,
    train,
)


GRAD_EPS = 1e-6
GRAD_TOLERANCE = 1e-4


def _numeric_gradient(net, batch, labels, loss_kind, name):
    param = getattr(net, name)
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = param[idx]
        param[idx] = saved + GRAD_EPS
        up, _ = loss_and_gradients(net, batch, labels, loss_kind)
        param[idx] = saved - GRAD_EPS
        down, _ = loss_and_gradients(net, batch, labels, loss_kind)
        param[idx] = saved
        grad[idx] = (up - down) / (2 * GRAD_EPS)
    return grad


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


class TestForward:
    def test_logits_shape_and_finite(self):
        net = SolverNetwork.initialize(4, 8, 3, rng=0)
        logits = forward(net, np.random.default_rng(1).random((5, 4)))
        assert logits.shape == (5, 3)
        assert np.all(np.isfinite(logits))

    def test_logits_match_naive_loops(self):
        net = SolverNetwork.initialize(4, 6, 3, rng=2)
        net.b1[:] = np.linspace(-0.3, 0.3, 6)
        net.b2[:] = [0.1, -0.2, 0.05]
        batch = np.random.default_rng(3).random((5, 4))
        expected = np.zeros((5, 3))
        for n in range(5):
            h = [max(sum(batch[n, i] * net.w1[i, j] for i in range(4)) + net.b1[j], 0.0) for j in range(6)]
            for k in range(3):
                expected[n, k] = sum(h[j] * net.w2[j, k] for j in range(6)) + net.b2[k]
        np.testing.assert_allclose(forward(net, batch), expected, rtol=0, atol=1e-12)

    def test_wrong_width_raises_shape_error(self):
        net = SolverNetwork.initialize(4, 8, 3, rng=0)
        with pytest.raises(ShapeError):
            forward(net, np.zeros((2, 5)))

    def test_hidden_is_non_negative(self):
        net = SolverNetwork.initialize(3, 6, 2, rng=0)
        h = hidden(net, np.random.default_rng(2).random((7, 3)))
        assert h.shape == (7, 6)
        assert h.min() >= 0.0

    def test_inconsistent_shapes_rejected(self):
        with pytest.raises(ShapeError):
            SolverNetwork(np.zeros((2, 3)), np.zeros(4), np.zeros((3, 2)), np.zeros(2))

    def test_initialize_rejects_zero_dims(self):
        with pytest.raises(ValidationError):
            SolverNetwork.initialize(0, 4, 2)

    def test_initialize_is_seeded(self):
        a = SolverNetwork.initialize(3, 5, 2, rng=11)
        b = SolverNetwork.initialize(3, 5, 2, rng=11)
        np.testing.assert_array_equal(a.w1, b.w1)
        np.testing.assert_array_equal(a.w2, b.w2)
        assert not a.b1.any() and not a.b2.any()

    def test_copy_is_independent(self):
        net = SolverNetwork.initialize(2, 3, 2, rng=0)
        clone = net.copy()
        clone.w1[0, 0] += 1.0
        assert net.w1[0, 0] != clone.w1[0, 0]


class TestSoftmax:
    def test_rows_sum_to_one(self):
        p = softmax(np.random.default_rng(0).normal(size=(6, 4)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    def test_large_logits_are_stable(self):
        np.testing.assert_allclose(softmax(np.array([[1000.0, 1000.0]])), [[0.5, 0.5]])

    @pytest.mark.parametrize("scale", [1e3, -1e3])
    def test_extreme_logits_sum_to_one(self, scale):
        logits = scale * np.random.default_rng(1).random((8, 5))
        p = softmax(logits)
        assert np.all(np.isfinite(p))
        assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-12

    def test_single_class_is_one(self):
        np.testing.assert_array_equal(softmax(np.array([[3.0], [-7.0]])), [[1.0], [1.0]])

    def test_predict_ties_go_to_lowest_index(self):
        net = SolverNetwork(np.zeros((2, 3)), np.zeros(3), np.zeros((3, 4)), np.zeros(4))
        np.testing.assert_array_equal(predict(net, np.random.default_rng(0).random((5, 2))), np.zeros(5))

    def test_predict_proba_matches_softmax_of_forward(self):
        net = SolverNetwork.initialize(3, 4, 3, rng=5)
        x = np.random.default_rng(6).random((4, 3))
        np.testing.assert_allclose(predict_proba(net, x), softmax(forward(net, x)))


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


class TestGradients:
    @pytest.mark.parametrize("loss_kind", ["categorical", "binary"])
    def test_analytic_matches_finite_differences(self, loss_kind):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            net = SolverNetwork.initialize(3, 5, 4, rng=rng)
            net.b1[:] = rng.normal(scale=0.1, size=5)
            net.b2[:] = rng.normal(scale=0.1, size=4)
            batch = rng.random((6, 3))
            labels = rng.integers(0, 4, size=6)
            _, grads = loss_and_gradients(net, batch, labels, loss_kind)
            for name in ("w1", "b1", "w2", "b2"):
                numeric = _numeric_gradient(net, batch, labels, loss_kind, name)
                analytic = grads[name]
                scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
                rel = np.linalg.norm(analytic - numeric) / scale
                assert rel < GRAD_TOLERANCE, f"seed {seed} {loss_kind} {name}: relative error {rel:.2e}"

    def test_categorical_loss_of_uniform_head(self):
        net = SolverNetwork(np.zeros((2, 3)), np.zeros(3), np.zeros((3, 4)), np.zeros(4))
        loss, _ = loss_and_gradients(net, np.ones((3, 2)) * 0.5, np.array([0, 1, 2]))
        assert loss == pytest.approx(np.log(4.0))

    def test_empty_batch_raises(self):
        net = SolverNetwork.initialize(2, 3, 2, rng=0)
        with pytest.raises(ValidationError):
            loss_and_gradients(net, np.zeros((0, 2)), np.zeros(0, dtype=int))

    def test_out_of_range_label_raises(self):
        net = SolverNetwork.initialize(2, 3, 2, rng=0)
        with pytest.raises(ValidationError):
            loss_and_gradients(net, np.zeros((1, 2)), np.array([2]))

    def test_unknown_loss_raises(self):
        net = SolverNetwork.initialize(2, 3, 2, rng=0)
        with pytest.raises(ValidationError):
            loss_and_gradients(net, np.zeros((1, 2)), np.array([0]), "hinge")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.for_params(params, learning_rate=0.001)
        adam_step(params, {"w": np.array([0.5, -0.1])}, state)
        np.testing.assert_allclose(params["w"], [0.999, -1.999], atol=1e-6)
        assert state.t == 1

    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": np.array([0.3, -1.2, 4.0])}
        state = AdamState.for_params(params, learning_rate=0.1)
        for _ in range(5):
            adam_step(params, {"w": np.zeros(3)}, state)
        np.testing.assert_array_equal(params["w"], [0.3, -1.2, 4.0])

    def test_minimizes_a_quadratic(self):
        params = {"w": np.array([1.0])}
        state = AdamState.for_params(params, learning_rate=0.05)
        losses = []
        for _ in range(100):
            losses.append(float(params["w"][0] ** 2))
            adam_step(params, {"w": 2.0 * params["w"]}, state)
        assert abs(params["w"][0]) < 0.25
        assert float(params["w"][0] ** 2) < losses[0]
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_step_counter_increases(self):
        params = {"w": np.zeros(3)}
        state = AdamState.for_params(params)
        for expected in range(1, 4):
            adam_step(params, {"w": np.ones(3)}, state)
            assert state.t == expected

    def test_shape_mismatch_raises(self):
        params = {"w": np.zeros(3)}
        with pytest.raises(ShapeError):
            adam_step(params, {"w": np.zeros(4)}, AdamState.for_params(params))

    def test_missing_key_raises(self):
        params = {"w": np.zeros(3)}
        with pytest.raises(ShapeError):
            adam_step(params, {"v": np.zeros(3)}, AdamState())


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValidationError):
            TrainConfig(loss="hinge")

    def test_blobs_reach_high_accuracy(self, blob_solver, blob_data):
        _, test_ds = blob_data
        assert accuracy_percent(blob_solver, test_ds) >= 99.0

    def test_training_is_deterministic(self, blob_data):
        train_ds, _ = blob_data
        cfg = TrainConfig(epochs=3, learning_rate=0.01, seed=4)
        a, _ = train(SolverNetwork.initialize(2, 8, 3, rng=9), train_ds, cfg)
        b, _ = train(SolverNetwork.initialize(2, 8, 3, rng=9), train_ds, cfg)
        np.testing.assert_array_equal(a.w1, b.w1)
        np.testing.assert_array_equal(a.w2, b.w2)

    def test_records_carry_eval_accuracy(self, blob_data):
        train_ds, test_ds = blob_data
        _, records = train(
            SolverNetwork.initialize(2, 8, 3, rng=0), train_ds, TrainConfig(epochs=2), eval_data=test_ds
        )
        assert [r.epoch for r in records] == [1, 2]
        assert all(0.0 <= r.eval_accuracy <= 100.0 for r in records)

    def test_empty_dataset_raises(self, blob_data):
        train_ds, _ = blob_data
        with pytest.raises(ValidationError):
            train(SolverNetwork.initialize(2, 4, 3), train_ds.subset([]), TrainConfig())

    def test_wider_labels_than_head_rejected(self, blob_data):
        train_ds, _ = blob_data
        with pytest.raises(ValidationError):
            Trainer(SolverNetwork.initialize(2, 4, 2), TrainConfig()).run_epoch(train_ds)

    def test_explicit_zero_epochs_is_rejected(self, blob_data):
        train_ds, _ = blob_data
        trainer = Trainer(SolverNetwork.initialize(2, 4, 3, rng=0), TrainConfig(epochs=5))
        with pytest.raises(ValidationError):
            trainer.fit(train_ds, epochs=0)
        assert trainer.epochs_run == 0
        assert len(trainer.fit(train_ds, epochs=1)) == 1

    def test_on_epoch_callback(self, blob_data, mocker):
        train_ds, _ = blob_data
        callback = mocker.Mock()
        Trainer(SolverNetwork.initialize(2, 4, 3, rng=0), TrainConfig(epochs=2)).fit(train_ds, on_epoch=callback)
        assert callback.call_count == 2

    def test_binary_loss_also_learns(self, blob_data):
        train_ds, test_ds = blob_data
        cfg = TrainConfig(epochs=40, learning_rate=0.01, loss="binary", seed=1)
        net, _ = train(SolverNetwork.initialize(2, 16, 3, rng=0), train_ds, cfg)
        assert accuracy_percent(net, test_ds) >= 90.0


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        net = SolverNetwork.initialize(5, 7, 3, rng=2)
        path = tmp_path / "solver.nrlb"
        save_checkpoint(net, path)
        loaded = load_checkpoint(path)
        for name in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(net, name))

    def test_file_size_matches_layout(self, tmp_path):
        path = tmp_path / "solver.nrlb"
        save_checkpoint(SolverNetwork.initialize(5, 7, 3, rng=2), path)
        assert path.stat().st_size == 18 + 8 * (5 * 7 + 7 + 7 * 3 + 3)

    def test_inspect_reads_header(self, tmp_path):
        path = tmp_path / "solver.nrlb"
        save_checkpoint(SolverNetwork.initialize(5, 7, 3, rng=2), path)
        header = inspect_checkpoint(path)
        assert (header.version, header.input_dim, header.hidden_dim, header.num_classes) == (1, 5, 7, 3)

    def test_truncated_file_reports_offset(self, tmp_path):
        path = tmp_path / "solver.nrlb"
        save_checkpoint(SolverNetwork.initialize(2, 3, 2, rng=0), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(ParseError) as exc_info:
            load_checkpoint(path)
        assert exc_info.value.offset == len(raw) - 5

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "solver.nrlb"
        save_checkpoint(SolverNetwork.initialize(2, 3, 2, rng=0), path)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(ParseError) as exc_info:
            load_checkpoint(path)
        assert exc_info.value.offset == 0

    def test_unknown_version(self, tmp_path):
        path = tmp_path / "solver.nrlb"
        save_checkpoint(SolverNetwork.initialize(2, 3, 2, rng=0), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(ParseError, match="version 9"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "solver.nrlb"
        save_checkpoint(SolverNetwork.initialize(2, 3, 2, rng=0), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ParseError, match="trailing"):
            load_checkpoint(path)
