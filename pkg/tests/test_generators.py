import itertools

import numpy as np
import pytest

from cmdkit.correlation import corr
from cmdkit.exceptions import ConfigError, DivergenceError, ShapeMismatchError
from cmdkit.generators import (
    DatasetSpec,
    MlpTaskConfig,
    SyntheticModesConfig,
    ToyRegressionConfig,
    evaluate_weights,
    generate_linear_dynamics,
    generate_mlp_training,
    generate_synthetic_modes,
    generate_toy_regression,
    init_parameters,
    make_dataset,
    mlp_loss_and_grad,
    toy_regression_data,
)
from cmdkit.trajectory import SnapshotMatrix


# -- toy regression ------------------------------------------------------------


def test_zero_step_size_keeps_initial_weights():
    W = generate_toy_regression(ToyRegressionConfig(eta_schedule=(0.0,), epochs=10))
    assert W.shape == (32, 11)
    np.testing.assert_array_equal(W.values, W.values[:, :1].repeat(11, axis=1))


def test_scalar_hand_iteration():
    cfg = ToyRegressionConfig(d=1, m=1, n=1, eta_schedule=(0.5,), epochs=5)
    W = generate_toy_regression(cfg, x=[[1.0]], y=[[2.0]], w0=[[0.0]])
    np.testing.assert_array_equal(W.values[0], [0.0, 1.0, 1.5, 1.75, 1.875, 1.9375])


def test_converges_to_normal_equation_solution():
    cfg = ToyRegressionConfig(d=2, m=3, n=10, eta_schedule=(0.01,), epochs=3000, seed=4)
    W = generate_toy_regression(cfg)
    x, y = toy_regression_data(cfg)
    w_star = y @ x.T @ np.linalg.inv(x @ x.T)
    np.testing.assert_allclose(W.values[:, -1], w_star.ravel(), atol=1e-6, rtol=0)


def test_loss_non_increasing_below_stability_limit():
    cfg = ToyRegressionConfig(d=3, m=5, n=20, epochs=200, seed=2)
    x, y = toy_regression_data(cfg)
    eta = 1.9 / np.linalg.eigvalsh(x @ x.T).max()
    cfg = ToyRegressionConfig(d=3, m=5, n=20, epochs=200, seed=2, eta_schedule=(eta,))
    W = generate_toy_regression(cfg)
    losses = [0.5 * np.sum((y - W.values[:, k].reshape(3, 5) @ x) ** 2) for k in range(201)]
    assert np.all(np.diff(losses) <= 1e-9 * losses[0])


def test_augmented_increments_change_direction():
    cfg = ToyRegressionConfig(eta_schedule=(0.01,), augmented=True, epochs=50, seed=1)
    W = generate_toy_regression(cfg)
    steps = np.diff(W.values, axis=1)
    unit = steps / np.linalg.norm(steps, axis=0)
    cosines = np.sum(unit[:, 1:] * unit[:, :-1], axis=0)
    assert cosines.min() < 0.5  # direction genuinely varies between epochs
    plain = generate_toy_regression(
        ToyRegressionConfig(eta_schedule=(0.01,), augmented=False, epochs=50, seed=1)
    )
    assert not np.array_equal(plain.values, W.values)


def test_divergence_reports_epoch():
    cfg = ToyRegressionConfig(eta_schedule=(5.0,), epochs=100)
    with pytest.raises(DivergenceError) as err:
        generate_toy_regression(cfg)
    assert err.value.epoch is not None and str(err.value.epoch) in str(err.value)


def test_per_epoch_schedule_and_validation():
    cfg = ToyRegressionConfig(eta_schedule=[0.01] * 5, epochs=5)
    assert generate_toy_regression(cfg).n_epochs == 6
    with pytest.raises(ConfigError):
        ToyRegressionConfig(eta_schedule=[0.01] * 3, epochs=5)
    with pytest.raises(ConfigError):
        ToyRegressionConfig.from_dict({"d": 1, "bogus": 2})


def test_generators_are_pure():
    cfg = ToyRegressionConfig(augmented=True, eta_schedule=(0.01,), seed=9)
    assert generate_toy_regression(cfg) == generate_toy_regression(cfg)


# -- MLP -------------------------------------------------------------------------


def test_mlp_zero_learning_rate(small_mlp):
    cfg = MlpTaskConfig(layer_widths=(2, 4, 2), epochs=5, learning_rate=0.0)
    W, log = generate_mlp_training(cfg)
    assert np.all(W.values == W.values[:, :1])
    assert len(set(log.train_loss)) == 1 and len(log) == 6


def test_mlp_determinism_and_layout(small_mlp):
    cfg, W, log = small_mlp
    W2, log2 = generate_mlp_training(cfg)
    assert W2 == W and log2.test_loss == log.test_loss
    assert W.n_weights == cfg.n_parameters == 2 * 8 + 8 + 8 * 2 + 2
    assert [l.name for l in W.layers] == ["fc0.weight", "fc0.bias", "fc1.weight", "fc1.bias"]
    assert len(log) == cfg.epochs + 1


def test_mlp_gradient_matches_finite_differences():
    cfg = MlpTaskConfig(layer_widths=(2, 5, 3, 2), dataset=DatasetSpec(30, 0.5, 1), seed=1)
    (x, y), _ = make_dataset(cfg.dataset)
    theta = init_parameters(cfg) + 0.1  # nonzero biases
    _, grad = mlp_loss_and_grad(theta, cfg.layer_widths, x, y)
    h = 1e-6
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (mlp_loss_and_grad(theta + e, cfg.layer_widths, x, y)[0]
                 - mlp_loss_and_grad(theta - e, cfg.layer_widths, x, y)[0]) / (2 * h)
    np.testing.assert_allclose(grad, fd, atol=1e-8, rtol=1e-6)


def test_mlp_matches_independent_torch_training():
    torch = pytest.importorskip("torch")
    cfg = MlpTaskConfig(layer_widths=(2, 16, 2), epochs=150, learning_rate=0.05,
                        dataset=DatasetSpec(400, 0.3, 0), seed=0)
    W, log = generate_mlp_training(cfg)

    (x, y), _ = make_dataset(cfg.dataset)
    theta0 = init_parameters(cfg)
    W1 = torch.tensor(theta0[:32].reshape(16, 2), dtype=torch.float64, requires_grad=True)
    b1 = torch.tensor(theta0[32:48], dtype=torch.float64, requires_grad=True)
    W2 = torch.tensor(theta0[48:80].reshape(2, 16), dtype=torch.float64, requires_grad=True)
    b2 = torch.tensor(theta0[80:82], dtype=torch.float64, requires_grad=True)
    xt, yt = torch.tensor(x), torch.tensor(y)
    for _ in range(cfg.epochs):
        loss = torch.nn.functional.cross_entropy(torch.tanh(xt @ W1.T + b1) @ W2.T + b2, yt)
        grads = torch.autograd.grad(loss, [W1, b1, W2, b2])
        with torch.no_grad():
            for p, g in zip([W1, b1, W2, b2], grads):
                p -= cfg.learning_rate * g
    final = torch.cat([p.detach().reshape(-1) for p in (W1, b1, W2, b2)]).numpy()
    np.testing.assert_allclose(W.values[:, -1], final, atol=1e-10, rtol=0)
    assert log.train_accuracy[-1] > 0.9


def test_evaluate_matches_training_log(small_mlp):
    cfg, W, log = small_mlp
    for k in (0, 7, cfg.epochs):
        res = evaluate_weights(cfg, W, k)
        assert abs(res["loss"] - log.test_loss[k]) <= 1e-12
        assert abs(res["accuracy"] - log.test_accuracy[k]) <= 1e-12
    train = evaluate_weights(cfg, W, cfg.epochs, split="train")
    assert abs(train["accuracy"] - log.train_accuracy[-1]) <= 1e-12


def test_zero_weights_give_chance_accuracy(small_mlp):
    cfg, W, _ = small_mlp
    zero = SnapshotMatrix(np.zeros_like(W.values), W.layers)
    assert evaluate_weights(cfg, zero, 0)["accuracy"] == pytest.approx(0.5, abs=0.05)


def test_evaluate_shape_mismatch(small_mlp):
    cfg, W, _ = small_mlp
    with pytest.raises(ShapeMismatchError):
        evaluate_weights(cfg, SnapshotMatrix(W.values[:-1]), 0)


def test_mlp_config_validation():
    with pytest.raises(ConfigError):
        MlpTaskConfig(layer_widths=(2, 2))
    with pytest.raises(ConfigError):
        MlpTaskConfig(layer_widths=(2, 1000, 200, 2))
    cfg = MlpTaskConfig.from_dict({"layer_widths": [2, 4, 2], "dataset": {"count": 10}})
    assert cfg.dataset.count == 10


# -- synthetic modes --------------------------------------------------------------


def test_single_mode_identity_rows():
    s = generate_synthetic_modes(SyntheticModesConfig(
        N=20, T=30, M_true=1, a_range=(1, 1), b_range=(0, 0), negative_fraction=0.0))
    assert np.all(s.matrix.values == s.matrix.values[0])


def test_within_mode_correlation_is_one(synth5):
    vals = synth5.matrix.values
    for mode in range(5):
        rows = np.flatnonzero(synth5.labels == mode)[:6]
        for i, j in itertools.combinations(rows, 2):
            assert abs(abs(corr(vals[i], vals[j])) - 1.0) <= 1e-12


def test_cross_mode_correlation_below_one():
    s = generate_synthetic_modes(SyntheticModesConfig(
        N=30, T=80, M_true=3, seed=11,
        profile_kinds=("exponential-decay", "piecewise-linear", "oscillatory")))
    p = s.profiles
    # brute force on the three base profiles
    for i, j in itertools.combinations(range(3), 2):
        u, v = p[i] - p[i].mean(), p[j] - p[j].mean()
        c = abs(sum(a * b for a, b in zip(u, v))) / np.sqrt(sum(u * u) * sum(v * v))
        assert c < 1 - 1e-6


def test_synthetic_returns_ground_truth(synth5):
    s = synth5
    rebuilt = s.a[:, None] * s.profiles[s.labels] + s.b[:, None]
    np.testing.assert_array_equal(rebuilt, s.matrix.values)
    assert len(s.matrix.layers) == 3


def test_linear_dynamics_rank():
    W = generate_linear_dynamics(40, 60, [0.9, 0.7, 0.5], seed=0)
    assert np.linalg.matrix_rank(W.values) == 3
