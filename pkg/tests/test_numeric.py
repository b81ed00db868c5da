import math

import numpy as np
import pytest

from lipviseme.numeric import (
    AdamState,
    CosineSchedule,
    DegenerateVectorError,
    EmptySequenceError,
    OptimizerError,
    Parameter,
    ScheduleError,
    ShapeError,
    adam_step,
    cosine_annealed_lr,
    cosine_similarity,
    cross_entropy_smoothed,
    cross_entropy_smoothed_grad,
    grad_check,
    mean_over_time,
    multilabel_bce,
    multilabel_bce_grad,
    softmax,
)
from _oracles import adam_oracle, bce_oracle, cross_entropy_oracle, softmax_list


class TestCosineSimilarity:
    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_positive_scaling(self):
        assert cosine_similarity([2, 0], [1, 0]) == 1.0

    def test_analytic_diagonal(self):
        assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-9)

    def test_degenerate_vector(self):
        with pytest.raises(DegenerateVectorError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_scale_invariance_property(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a = rng.normal(size=rng.integers(2, 9))
            b = rng.normal(size=a.shape)
            c = float(rng.uniform(0.1, 10))
            assert cosine_similarity(c * a, b) == pytest.approx(cosine_similarity(a, b), abs=1e-12)

    def test_clamped_into_unit_interval(self):
        value = cosine_similarity([1e-6, 0], [1e-6, 0])
        assert -1.0 <= value <= 1.0


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax([3.0, 3.0, 3.0]), [1 / 3] * 3, atol=1e-15)

    def test_singleton(self):
        assert softmax([7.0]).tolist() == [1.0]

    def test_against_scalar_oracle(self):
        expected = softmax_list([1.0, 2.0, 3.0])
        assert np.allclose(softmax([1.0, 2.0, 3.0]), expected, atol=1e-12)
        assert np.allclose(expected, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            scores = rng.normal(scale=rng.uniform(0.1, 30), size=rng.integers(1, 12))
            probs = softmax(scores)
            assert abs(probs.sum() - 1.0) < 1e-12
            assert np.all(probs >= 0)
            shifted = softmax(scores + 17.3)
            assert np.allclose(probs, shifted, atol=1e-12)


class TestMeanOverTime:
    def test_single_frame(self):
        frames = np.array([[2.0, -1.0]])
        assert mean_over_time(frames).tolist() == [2.0, -1.0]

    def test_symmetry(self):
        assert mean_over_time([[1.0, 0.0], [0.0, 1.0]]).tolist() == [0.5, 0.5]

    def test_row_permutation_invariant(self):
        rng = np.random.default_rng(3)
        frames = rng.normal(size=(7, 4))
        permuted = frames[rng.permutation(7)]
        assert np.allclose(mean_over_time(frames), mean_over_time(permuted), atol=1e-12)

    def test_empty_errors(self):
        with pytest.raises(EmptySequenceError):
            mean_over_time(np.zeros((0, 3)))


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        for c in (2, 5, 50):
            assert cross_entropy_smoothed([0.0] * c, 0, 0.0) == pytest.approx(math.log(c), abs=1e-12)

    def test_perfect_prediction_limit(self):
        assert cross_entropy_smoothed([40.0, 0.0, 0.0], 0, 0.0) < 1e-10

    def test_smoothed_value_against_oracle(self):
        value = cross_entropy_smoothed([2.0, 0.0], 0, 0.1)
        assert value == pytest.approx(cross_entropy_oracle([2.0, 0.0], [1.0, 0.0], 0.1), abs=1e-12)

    def test_soft_target_matches_hard_bit_for_bit(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            logits = rng.normal(size=6)
            target = int(rng.integers(0, 6))
            one_hot = np.zeros(6)
            one_hot[target] = 1.0
            assert cross_entropy_smoothed(logits, target, 0.0) == cross_entropy_smoothed(logits, one_hot, 0.0)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy_smoothed([0.0, 1.0], 2, 0.0)

    def test_needs_two_classes(self):
        with pytest.raises(ShapeError):
            cross_entropy_smoothed([1.0], 0, 0.0)

    def test_gradient_matches_numeric(self):
        rng = np.random.default_rng(4)
        logits = Parameter("logits", rng.normal(size=5))
        logits.grad[...] = cross_entropy_smoothed_grad(logits.value, 3, 0.2)
        report = grad_check(lambda: cross_entropy_smoothed(logits.value, 3, 0.2), [logits])
        assert report.passed


class TestMultilabelBce:
    def test_zeros_give_log_two(self):
        assert multilabel_bce([0.0] * 18, [0] * 18) == pytest.approx(math.log(2), abs=1e-12)

    def test_saturated_correct_predictions(self):
        target = np.tile([1.0, 0.0], 9)
        logits = np.where(target > 0, 40.0, -40.0)
        assert multilabel_bce(logits, target) < 1e-10

    def test_random_case_against_oracle(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=18)
        target = rng.integers(0, 2, size=18).astype(float)
        assert multilabel_bce(logits, target) == pytest.approx(bce_oracle(logits, target), abs=1e-12)

    def test_wrong_length_rejected(self):
        with pytest.raises(ShapeError):
            multilabel_bce([0.0] * 17, [0] * 17)

    def test_gradient_matches_numeric(self):
        rng = np.random.default_rng(8)
        logits = Parameter("logits", rng.normal(size=18))
        target = rng.integers(0, 2, size=18).astype(float)
        logits.grad[...] = multilabel_bce_grad(logits.value, target)
        assert grad_check(lambda: multilabel_bce(logits.value, target), [logits]).passed


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        param = Parameter("w", np.array([1.0, -2.0]))
        state = AdamState()
        adam_step(state, [param], 1e-3)
        assert param.value.tolist() == [1.0, -2.0]

    def test_first_step_is_signed_learning_rate(self):
        param = Parameter("w", np.array([0.0, 0.0]))
        param.grad[...] = [0.5, -3.0]
        adam_step(AdamState(), [param], 1e-3)
        assert np.allclose(param.value, [-1e-3, 1e-3], rtol=1e-4)

    def test_two_steps_match_scalar_oracle(self):
        # f(w) = w^2 from w = 1: gradient 2w re-evaluated each step.
        param = Parameter("w", np.array([1.0]))
        state = AdamState()
        lr = 0.1
        grads = []
        for _ in range(2):
            grad = 2.0 * param.value[0]
            grads.append(grad)
            param.grad[...] = [grad]
            adam_step(state, [param], lr)
        assert param.value[0] == pytest.approx(adam_oracle(grads, lr, w0=1.0)[-1], abs=1e-15)

    def test_deterministic(self):
        results = []
        for _ in range(2):
            param = Parameter("w", np.array([0.3, -0.7]))
            state = AdamState()
            for step in range(5):
                param.grad[...] = [0.1 * (step + 1), -0.2]
                adam_step(state, [param], 1e-2)
            results.append(param.value.copy())
        assert np.array_equal(results[0], results[1])

    def test_non_finite_gradient_fails_fast(self):
        param = Parameter("w", np.array([1.0]))
        param.grad[...] = [np.nan]
        with pytest.raises(OptimizerError):
            adam_step(AdamState(), [param], 1e-3)


class TestCosineSchedule:
    def test_initial_rate(self):
        schedule = CosineSchedule(total_steps=100)
        assert cosine_annealed_lr(schedule, 0) == pytest.approx(3e-4, abs=1e-18)

    def test_final_rate_is_minimum(self):
        schedule = CosineSchedule(total_steps=100, initial_rate=1e-3, minimum_rate=1e-5)
        assert schedule.rate(100) == pytest.approx(1e-5, abs=1e-18)

    def test_midpoint(self):
        schedule = CosineSchedule(total_steps=100, initial_rate=1e-3, minimum_rate=1e-5)
        assert schedule.rate(50) == pytest.approx((1e-3 + 1e-5) / 2, abs=1e-15)

    def test_out_of_range(self):
        schedule = CosineSchedule(total_steps=10)
        with pytest.raises(ScheduleError):
            schedule.rate(11)
        with pytest.raises(ScheduleError):
            schedule.rate(-1)

    def test_rate_stays_in_band(self):
        schedule = CosineSchedule(total_steps=37, initial_rate=2e-3, minimum_rate=1e-4)
        rates = [schedule.rate(t) for t in range(38)]
        assert all(1e-4 - 1e-15 <= r <= 2e-3 + 1e-15 for r in rates)
        assert all(a >= b for a, b in zip(rates, rates[1:]))


class TestGradCheck:
    def test_quadratic(self):
        x = Parameter("x", np.array([3.0]))
        x.grad[...] = [6.0]
        report = grad_check(lambda: float(x.value[0] ** 2), [x], tolerance=1e-7)
        assert report.passed
        assert report.entries[0].max_relative_error < 1e-7

    def test_constant_function(self):
        x = Parameter("x", np.array([1.0, 2.0]))
        report = grad_check(lambda: 5.0, [x])
        assert report.passed
        assert report.entries[0].max_relative_error == 0.0

    def test_detects_wrong_gradient(self):
        x = Parameter("x", np.array([3.0]))
        x.grad[...] = [6.5]
        assert not grad_check(lambda: float(x.value[0] ** 2), [x]).passed

    def test_property_over_random_instances(self):
        # Random quadratic forms f(x) = x.A x checked at 100 random points.
        rng = np.random.default_rng(123)
        report = None
        for index in range(100):
            n = int(rng.integers(1, 6))
            matrix = rng.normal(size=(n, n))
            x = Parameter(f"x{index}", rng.normal(size=n))
            x.grad[...] = (matrix + matrix.T) @ x.value
            report = grad_check(
                lambda x=x, matrix=matrix: float(x.value @ matrix @ x.value),
                [x],
                report=report,
            )
        assert report.passed
        assert len(report.entries) == 100
