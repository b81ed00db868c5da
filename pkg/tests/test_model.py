import numpy as np
import pytest

from lipviseme.errors import ConfigError
from lipviseme.gradchecks import run_gradcheck_suite
from lipviseme.model import (
    ModelConfig,
    conv1d_same,
    init_model,
    model_forward,
    model_forward_batch,
    total_loss,
    viseme_loss_batch,
    word_loss_batch,
)
from lipviseme.numeric import cross_entropy_smoothed, multilabel_bce
from lipviseme.tafm import TafmConfig, mean_pool_logits
from _oracles import conv1d_oracle


def tiny_config(**overrides):
    base = dict(input_dim=3, word_classes=4, hidden_dim=6, encoder_layers=2, kernel_width=3)
    base.update(overrides)
    return ModelConfig(**base)


def make_model(seed=0, **overrides):
    config = tiny_config(**overrides)
    state = init_model(config, np.random.default_rng(seed))
    return config, state


class TestConfig:
    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(kernel_width=4)

    def test_negative_beta_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(beta=-0.5)

    def test_dict_round_trip(self):
        config = tiny_config(tafm=TafmConfig(gamma=7.5, lam=0.05), input_scale=2.0)
        assert ModelConfig.from_dict(config.to_dict()) == config

    def test_infinite_gamma_round_trip(self):
        config = tiny_config(tafm=TafmConfig(gamma=None, lam=0.2))
        clone = ModelConfig.from_dict(config.to_dict())
        assert clone.tafm.infinite
        assert clone == config

    def test_unknown_tafm_key_rejected(self):
        data = tiny_config().to_dict()
        data["tafm"]["temperature"] = 3
        with pytest.raises(ConfigError):
            ModelConfig.from_dict(data)


class TestInit:
    def test_parameter_inventory(self):
        config, state = make_model()
        names = set(state.parameters)
        assert names == {
            "encoder.0.kernel", "encoder.0.bias", "encoder.1.kernel", "encoder.1.bias",
            "word_head.weight", "viseme_head.weight",
        }
        assert state["word_head.weight"].value.shape == (4, 6)
        assert state["viseme_head.weight"].value.shape == (18, 6)

    def test_viseme_rows_non_degenerate(self):
        for seed in range(5):
            _, state = make_model(seed=seed)
            norms = np.linalg.norm(state["viseme_head.weight"].value, axis=1)
            assert np.all(norms > 1e-6)

    def test_init_deterministic(self):
        _, a = make_model(seed=3)
        _, b = make_model(seed=3)
        for name in a.parameters:
            assert np.array_equal(a[name].value, b[name].value)


class TestConv:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 6, 3))
        kernel = rng.normal(size=(4, 3, 5))
        bias = rng.normal(size=4)
        out = conv1d_same(x, kernel, bias)
        for b in range(2):
            expected = conv1d_oracle(x[b].tolist(), kernel.tolist(), bias.tolist())
            assert np.allclose(out[b], expected, atol=1e-12)


class TestForward:
    def test_output_shapes(self):
        config, state = make_model()
        word, viseme, embeddings = model_forward(state, config, np.random.default_rng(2).normal(size=(7, 3)))
        assert word.shape == (4,)
        assert viseme.shape == (18,)
        assert embeddings.shape == (7, 6)

    def test_lambda_zero_viseme_head_equals_mean_pool(self):
        config, state = make_model(tafm=TafmConfig(gamma=5.0, lam=0.0))
        rng = np.random.default_rng(3)
        for _ in range(20):
            features = rng.normal(size=(int(rng.integers(1, 9)), 3))
            _, viseme, embeddings = model_forward(state, config, features)
            z = np.sum(embeddings, axis=0) / embeddings.shape[0]
            assert np.array_equal(viseme, mean_pool_logits(z, state["viseme_head.weight"].value))

    def test_deterministic_outputs(self):
        config, state = make_model()
        features = np.random.default_rng(4).normal(size=(6, 3))
        first = model_forward(state, config, features)
        second = model_forward(state, config, features)
        for a, b in zip(first, second):
            assert np.array_equal(a, b)

    def test_padding_does_not_change_results(self):
        config, state = make_model()
        rng = np.random.default_rng(5)
        features = rng.normal(size=(5, 3))
        word, viseme, embeddings = model_forward(state, config, features)
        padded = np.zeros((2, 9, 3))
        padded[0, :5] = features
        padded[1, :7] = rng.normal(size=(7, 3))
        cache = model_forward_batch(state, config, padded, np.array([5, 7]))
        assert np.allclose(cache.word_logits[0], word, atol=1e-12)
        assert np.allclose(cache.tafm.logits[0], viseme, atol=1e-12)
        assert np.allclose(cache.embeddings[0, :5], embeddings, atol=1e-12)
        assert np.max(np.abs(cache.embeddings[0, 5:])) == 0.0

    def test_length_validation(self):
        config, state = make_model()
        with pytest.raises(Exception):
            model_forward_batch(state, config, np.zeros((1, 4, 3)), np.array([5]))


class TestLosses:
    def test_total_loss_beta_zero_is_word_loss(self):
        config = tiny_config(beta=0.0, label_smoothing=0.0)
        rng = np.random.default_rng(6)
        word_logits = rng.normal(size=4)
        viseme_logits = rng.normal(size=18)
        target = 2
        multihot = rng.integers(0, 2, 18).astype(float)
        assert total_loss(word_logits, viseme_logits, target, multihot, config) == cross_entropy_smoothed(
            word_logits, target, 0.0
        )

    def test_total_loss_saturated_perfect_heads(self):
        config = tiny_config(label_smoothing=0.0)
        word_logits = np.array([80.0, 0.0, 0.0, 0.0])
        multihot = np.tile([1.0, 0.0], 9)
        viseme_logits = np.where(multihot > 0, 80.0, -80.0)
        assert total_loss(word_logits, viseme_logits, 0, multihot, config) < 1e-8

    def test_total_loss_is_sum_of_components(self):
        config = tiny_config(beta=0.7, label_smoothing=0.1)
        rng = np.random.default_rng(7)
        word_logits = rng.normal(size=4)
        viseme_logits = rng.normal(size=18)
        multihot = rng.integers(0, 2, 18).astype(float)
        expected = cross_entropy_smoothed(word_logits, 1, 0.1) + 0.7 * multilabel_bce(viseme_logits, multihot)
        assert total_loss(word_logits, viseme_logits, 1, multihot, config) == pytest.approx(expected, abs=1e-15)

    def test_batched_losses_average_per_sample_forms(self):
        rng = np.random.default_rng(8)
        logits = rng.normal(size=(6, 5))
        targets = np.zeros((6, 5))
        targets[np.arange(6), rng.integers(0, 5, 6)] = 1.0
        batch_loss, _ = word_loss_batch(logits, targets, 0.1)
        singles = [cross_entropy_smoothed(logits[i], targets[i], 0.1) for i in range(6)]
        assert batch_loss == pytest.approx(np.mean(singles), abs=1e-12)

        viseme_logits = rng.normal(size=(6, 18))
        viseme_targets = rng.integers(0, 2, (6, 18)).astype(float)
        batch_bce, _ = viseme_loss_batch(viseme_logits, viseme_targets)
        singles = [multilabel_bce(viseme_logits[i], viseme_targets[i]) for i in range(6)]
        assert batch_bce == pytest.approx(np.mean(singles), abs=1e-12)


def test_gradient_suite_passes():
    report = run_gradcheck_suite()
    assert report.passed
    assert len(report.entries) >= 10


def test_gradients_pass_on_100_random_instances():
    # Every analytic gradient family, checked against central differences on
    # freshly drawn small shapes; one shared report across all instances.
    from lipviseme.model import conv1d_same_backward, model_backward_batch, model_forward_batch
    from lipviseme.numeric import (
        Parameter,
        cross_entropy_smoothed,
        cross_entropy_smoothed_grad,
        grad_check,
        multilabel_bce,
        multilabel_bce_grad,
    )
    from lipviseme.tafm import tafm_backward, tafm_forward

    rng = np.random.default_rng(700)
    report = None
    for index in range(100):
        family = index % 5
        if family == 0:
            classes = int(rng.integers(2, 8))
            logits = Parameter("logits", rng.normal(size=classes))
            target = int(rng.integers(0, classes))
            eps = float(rng.uniform(0, 0.4))
            logits.grad[...] = cross_entropy_smoothed_grad(logits.value, target, eps)
            report = grad_check(
                lambda p=logits, t=target, e=eps: cross_entropy_smoothed(p.value, t, e),
                [logits], report=report, label=f"ce{index}",
            )
        elif family == 1:
            logits = Parameter("logits", rng.normal(size=18))
            target = rng.integers(0, 2, 18).astype(float)
            logits.grad[...] = multilabel_bce_grad(logits.value, target)
            report = grad_check(
                lambda p=logits, t=target: multilabel_bce(p.value, t),
                [logits], report=report, label=f"bce{index}",
            )
        elif family == 2:
            x = Parameter("x", rng.normal(size=(1, int(rng.integers(2, 6)), int(rng.integers(1, 4)))))
            kernel = rng.normal(size=(int(rng.integers(1, 4)), x.value.shape[2], 3))
            direction = rng.normal(size=(1, x.value.shape[1], kernel.shape[0]))
            dx, _, _ = conv1d_same_backward(x.value, kernel, direction)
            x.grad[...] = dx
            report = grad_check(
                lambda p=x, k=kernel, d=direction: float(np.sum(d * conv1d_same(p.value, k, np.zeros(k.shape[0])))),
                [x], report=report, label=f"conv{index}",
            )
        else:
            gamma = None if family == 4 else float(rng.uniform(0.5, 12))
            config = TafmConfig(gamma=gamma, lam=float(rng.uniform(0, 0.4)))
            frames = Parameter("X", rng.normal(size=(int(rng.integers(2, 6)), int(rng.integers(2, 5)))))
            weights = Parameter("W", rng.normal(size=(int(rng.integers(1, 4)), frames.value.shape[1])))
            if gamma is None:
                cos = np.array([
                    [np.dot(x, w) / np.linalg.norm(x) / np.linalg.norm(w) for x in frames.value]
                    for w in weights.value
                ])
                ranked = np.sort(cos, axis=1)
                if np.min(ranked[:, -1] - ranked[:, -2]) < 1e-2:
                    continue   # too close to an argmax tie for finite differences
            direction = rng.normal(size=weights.value.shape[0])
            out = tafm_forward(frames.value, weights.value, config)
            dX, dW = tafm_backward(frames.value, weights.value, config, out, direction)
            frames.grad[...] = dX
            weights.grad[...] = dW
            report = grad_check(
                lambda f=frames, w=weights, c=config, d=direction: float(
                    d @ tafm_forward(f.value, w.value, c).logits
                ),
                [frames, weights], report=report, label=f"tafm{index}",
            )
    assert report.passed
    assert len(report.entries) >= 100


def test_gradient_suite_detects_corruption():
    report = run_gradcheck_suite(corrupt="tafm_finite/X")
    failed = [entry.name for entry in report.entries if not entry.passed]
    assert failed == ["tafm_finite/X"]
