import numpy as np
import pytest

from ranloop.autoencoder import (
    TrainingDiverged,
    ae_forward,
    ae_gradients,
    ae_train,
    init_autoencoder,
    load_autoencoder,
    reconstruction_mse,
    save_autoencoder,
    validate_hourglass,
)
from ranloop.e2_wire import KpmRecord
from ranloop.xapp_sdk import (
    METRICS,
    KpmWindow,
    ScalingRanges,
    extract_and_reshape,
    record_metrics,
    scale_window,
)


def make_record(i, slice_id="embb", **kwargs):
    fields = dict(
        timestamp_ms=(i + 1) * 250,
        bs_id="bs1",
        slice_id=slice_id,
        dl_throughput_mbps=float(i),
        tx_packets=10 * i,
        buffer_bytes=100 * i,
        prb_alloc=36,
        offered_load_mbps=8.0,
    )
    fields.update(kwargs)
    return KpmRecord(**fields)


# -- extract_and_reshape -----------------------------------------------------


def test_reshape_full_padding_when_empty():
    window = extract_and_reshape([], depth=4)
    assert window.values.shape == (4, len(METRICS))
    assert np.all(window.values == 0)
    assert window.padded.all()


def test_reshape_keeps_last_depth_records_in_order():
    records = [make_record(i) for i in range(10)]
    window = extract_and_reshape(records, depth=4)
    assert not window.padded.any()
    # rows are records 7..10 (1-based), oldest first
    assert list(window.values[:, 0]) == [6.0, 7.0, 8.0, 9.0]


def test_reshape_partial_padding():
    records = [make_record(i) for i in range(2)]
    window = extract_and_reshape(records, depth=4)
    assert list(window.padded) == [True, True, False, False]
    assert np.all(window.values[:2] == 0)
    assert window.values[2, 0] == 0.0 and window.values[3, 0] == 1.0


def test_reshape_is_total_for_any_depth():
    records = [make_record(i) for i in range(3)]
    for depth in (1, 2, 3, 5, 9):
        window = extract_and_reshape(records, depth=depth)
        assert window.values.shape == (depth, len(METRICS))
    with pytest.raises(ValueError):
        extract_and_reshape(records, depth=0)


# -- scaling -------------------------------------------------------------------


def test_scale_midpoint_and_clamp():
    ranges = ScalingRanges(mins=np.zeros(4), maxs=np.array([10.0, 1.0, 1.0, 1.0]))
    window = KpmWindow(
        values=np.array([[5.0, 0.5, 2.0, -3.0]]), padded=np.array([False])
    )
    scaled = scale_window(window, ranges)
    assert scaled.values[0, 0] == 0.5  # midpoint
    assert scaled.values[0, 2] == 1.0  # clamped high
    assert scaled.values[0, 3] == 0.0  # clamped low


def test_scale_keeps_padded_rows_zero():
    # a negative min would otherwise scale 0 to a positive value
    ranges = ScalingRanges(mins=np.full(4, -1.0), maxs=np.ones(4))
    window = extract_and_reshape([make_record(1)], depth=3)
    scaled = scale_window(window, ranges)
    assert np.all(scaled.values[scaled.padded] == 0)
    assert np.all(scaled.values[~scaled.padded] >= 0)


def test_scale_is_monotone_per_column():
    rng = np.random.default_rng(3)
    ranges = ScalingRanges(mins=np.zeros(4), maxs=np.full(4, 50.0))
    for _ in range(50):
        values = rng.uniform(0, 50, size=(6, 4))
        window = KpmWindow(values=values, padded=np.zeros(6, dtype=bool))
        scaled = scale_window(window, ranges)
        for col in range(4):
            assert np.argmax(scaled.values[:, col]) == np.argmax(values[:, col])


def test_ranges_reject_degenerate_config():
    with pytest.raises(ValueError):
        ScalingRanges(mins=np.ones(4), maxs=np.ones(4))


def test_ranges_from_samples_widen_constant_columns():
    rows = np.tile(np.array([1.0, 2.0, 3.0, 4.0]), (50, 1))
    ranges = ScalingRanges.from_samples(rows)
    assert np.all(ranges.maxs > ranges.mins)


def test_record_metrics_order_matches_metric_tuple():
    record = make_record(3)
    values = record_metrics(record)
    assert values.tolist() == [3.0, 30.0, 300.0, 36.0]


# -- autoencoder forward/backward ----------------------------------------------


def test_hourglass_validation():
    validate_hourglass([16, 8, 3, 8, 16])
    for bad in ([16, 8, 16], [16, 8, 3, 8], [16, 16, 3, 16, 16], [8, 16, 3, 16, 8]):
        if bad == [16, 8, 16]:
            continue  # a single-hidden-layer hourglass is legal
        with pytest.raises(ValueError):
            validate_hourglass(bad)


def test_zero_model_maps_to_zero():
    model = init_autoencoder([8, 4, 2, 4, 8], seed=0)
    for i in range(len(model.weights)):
        model.weights[i][:] = 0
        model.biases[i][:] = 0
    latent, recon = ae_forward(model, np.ones(8))
    assert np.all(latent == 0) and np.all(recon == 0)


def test_forward_shapes():
    model = init_autoencoder([16, 8, 3, 8, 16], seed=1)
    latent, recon = ae_forward(model, np.random.default_rng(0).uniform(size=16))
    assert latent.shape == (3,)
    assert recon.shape == (16,)
    with pytest.raises(ValueError):
        ae_forward(model, np.zeros(5))


def finite_difference_gradients(model, batch, step=1e-5):
    """Independent oracle: central differences on every parameter."""
    grad_w = [np.zeros_like(w) for w in model.weights]
    grad_b = [np.zeros_like(b) for b in model.biases]
    for i, w in enumerate(model.weights):
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + step
            up = reconstruction_mse(model, batch)
            w[idx] = orig - step
            down = reconstruction_mse(model, batch)
            w[idx] = orig
            grad_w[i][idx] = (up - down) / (2 * step)
    for i, b in enumerate(model.biases):
        for idx in np.ndindex(b.shape):
            orig = b[idx]
            b[idx] = orig + step
            up = reconstruction_mse(model, batch)
            b[idx] = orig - step
            down = reconstruction_mse(model, batch)
            b[idx] = orig
            grad_b[i][idx] = (up - down) / (2 * step)
    return grad_w, grad_b


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@pytest.mark.parametrize("sizes", [[6, 4, 2, 4, 6], [16, 8, 3, 8, 16]])
def test_analytic_gradients_match_central_differences(sizes):
    rng = np.random.default_rng(7)
    model = init_autoencoder(sizes, seed=7)
    batch = rng.uniform(0, 1, size=(5, sizes[0]))
    grad_w, grad_b, _ = ae_gradients(model, batch)
    num_w, num_b = finite_difference_gradients(model, batch, step=1e-5)
    assert max_relative_error(grad_w, num_w) < 1e-4
    assert max_relative_error(grad_b, num_b) < 1e-4


# -- training oracles ------------------------------------------------------------


def test_training_memorizes_single_repeated_vector():
    rng = np.random.default_rng(11)
    vec = rng.uniform(0.2, 0.8, size=16)
    data = np.tile(vec, (32, 1))
    model, history = ae_train(data, [16, 8, 3, 8, 16], epochs=500, lr=0.05, seed=2)
    assert history[-1] < 1e-4


def test_training_compresses_rank_two_data():
    rng = np.random.default_rng(13)
    basis = rng.normal(size=(2, 16))
    coords = rng.normal(size=(256, 2))
    raw = coords @ basis
    # squeeze into [0, 1] like scaled KPM inputs
    data = (raw - raw.min()) / (raw.max() - raw.min())
    variance = float(np.var(data))
    model, history = ae_train(data, [16, 8, 2, 8, 16], epochs=800, lr=0.3, seed=3)
    assert history[-1] < 0.2 * variance


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(17)
    data = rng.uniform(0, 1, size=(64, 8))
    model_a, hist_a = ae_train(data, [8, 4, 2, 4, 8], epochs=30, lr=0.05, seed=9)
    model_b, hist_b = ae_train(data, [8, 4, 2, 4, 8], epochs=30, lr=0.05, seed=9)
    assert hist_a == hist_b
    for wa, wb in zip(model_a.weights, model_b.weights):
        assert np.array_equal(wa, wb)
    model_c, _ = ae_train(data, [8, 4, 2, 4, 8], epochs=30, lr=0.05, seed=10)
    assert not all(
        np.array_equal(wa, wc) for wa, wc in zip(model_a.weights, model_c.weights)
    )


def test_zero_learning_rate_changes_nothing():
    rng = np.random.default_rng(19)
    data = rng.uniform(0, 1, size=(32, 8))
    reference = init_autoencoder([8, 4, 2, 4, 8], seed=21)
    model, history = ae_train(data, [8, 4, 2, 4, 8], epochs=5, lr=0.0, seed=21)
    for wa, wb in zip(model.weights, reference.weights):
        assert np.array_equal(wa, wb)
    assert len(set(history)) == 1


def test_divergence_detection():
    rng = np.random.default_rng(23)
    data = rng.uniform(0, 1, size=(64, 8))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDiverged):
            ae_train(data, [8, 4, 2, 4, 8], epochs=200, lr=500.0, seed=4)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        ae_train(np.zeros((0, 8)), [8, 4, 2, 4, 8], epochs=1, lr=0.1, seed=0)


# -- model persistence ------------------------------------------------------------


def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(29)
    data = rng.uniform(0, 1, size=(64, 16))
    model, _ = ae_train(data, [16, 8, 3, 8, 16], epochs=10, lr=0.05, seed=5)
    ranges = {
        slice_id: ScalingRanges(
            mins=rng.uniform(0, 1, 4),
            maxs=rng.uniform(2, 1000, 4),
        )
        for slice_id in ("embb", "mtc", "urllc")
    }
    path = tmp_path / "model.txt"
    save_autoencoder(str(path), model, ranges)
    loaded, loaded_ranges = load_autoencoder(str(path))
    assert loaded.sizes == model.sizes
    for wa, wb in zip(loaded.weights, model.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(loaded.biases, model.biases):
        assert np.array_equal(ba, bb)
    assert set(loaded_ranges) == set(ranges)
    for slice_id in ranges:
        assert np.array_equal(loaded_ranges[slice_id].mins, ranges[slice_id].mins)
        assert np.array_equal(loaded_ranges[slice_id].maxs, ranges[slice_id].maxs)
        assert loaded_ranges[slice_id].metrics == METRICS


def test_model_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a model\n")
    with pytest.raises(ValueError):
        load_autoencoder(str(path))
