import math

import numpy as np
import pytest
from conftest import (
    LinearModel,
    assignment_cost,
    enumerate_associations,
    single_type_bernoulli,
)

from rfslam.association import (
    AssociationVector,
    CostMatrix,
    InfeasibleAssignmentError,
    build_cost_matrix,
    hypothesis_weights,
    murty_kbest,
    weight_birth,
    weight_detected,
    weight_misdetected,
)
from rfslam.density import GaussianComponent, GlobalHypothesis
from rfslam.geometry import LandmarkType, Measurement

SP = LandmarkType.SP
VA = LandmarkType.VA


def toy_model(p_detect=0.9, a=0.0, b=1.0):
    return LinearModel({SP: ([[a]], [[b]])}, dim=1, p_detect=p_detect)


def toy_sensor(var=1.0):
    return GaussianComponent(np.zeros(1), np.array([[var]]))


class TestWeightDetected:
    def test_zero_existence(self):
        bern = single_type_bernoulli(0.0, SP, [0.0], [[1.0]])
        meas = Measurement(np.zeros(1), np.eye(1))
        assert weight_detected(bern, meas, toy_sensor(), toy_model()) == 0.0

    def test_zero_detection_probability(self):
        bern = single_type_bernoulli(1.0, SP, [0.0], [[1.0]])
        meas = Measurement(np.zeros(1), np.eye(1))
        assert weight_detected(bern, meas, toy_sensor(), toy_model(0.0)) == 0.0

    def test_scalar_closed_form(self):
        # h = x, prior N(0, 1), R = 1, z = 0: S = 2, weight = 0.9 / sqrt(4 pi).
        bern = single_type_bernoulli(1.0, SP, [0.0], [[1.0]])
        meas = Measurement(np.zeros(1), np.eye(1))
        w = weight_detected(bern, meas, toy_sensor(5.0), toy_model(0.9))
        assert w == pytest.approx(0.9 / math.sqrt(4 * math.pi), rel=1e-12)
        assert w == pytest.approx(0.2538853125964903, rel=1e-9)

    def test_two_type_belief_marginalizes(self):
        from rfslam.density import Bernoulli, LandmarkBelief, TypeComponent
        model = LinearModel({VA: ([[0.0]], [[1.0]]), SP: ([[0.0]], [[2.0]])},
                            dim=1, p_detect={VA: 0.9, SP: 0.6})
        belief = LandmarkBelief({
            VA: TypeComponent(0.7, np.zeros(1), np.eye(1)),
            SP: TypeComponent(0.3, np.array([0.5]), np.eye(1)),
        })
        meas = Measurement(np.array([0.2]), np.eye(1))
        w = weight_detected(Bernoulli(0.8, belief), meas, toy_sensor(0.0), model)

        def normal(x, mean, var):
            return math.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(
                2 * math.pi * var)

        expected = 0.8 * (0.7 * 0.9 * normal(0.2, 0.0, 2.0)
                          + 0.3 * 0.6 * normal(0.2, 1.0, 5.0))
        assert w == pytest.approx(expected, rel=1e-12)


class TestWeightMisdetected:
    def test_zero_detection_probability(self):
        bern = single_type_bernoulli(0.7, SP, [0.0], [[1.0]])
        assert weight_misdetected(bern, toy_sensor(), toy_model(0.0)) == \
            pytest.approx(1.0)

    def test_certain_landmark(self):
        bern = single_type_bernoulli(1.0, SP, [0.0], [[1.0]])
        assert weight_misdetected(bern, toy_sensor(), toy_model(0.9)) == \
            pytest.approx(0.1)

    def test_direct_evaluation(self):
        bern = single_type_bernoulli(0.9, SP, [0.0], [[1.0]])
        assert weight_misdetected(bern, toy_sensor(), toy_model(0.9)) == \
            pytest.approx(0.19)

    def test_always_in_unit_interval(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            bern = single_type_bernoulli(rng.uniform(0, 1), SP,
                                         [rng.normal()], [[1.0]])
            w = weight_misdetected(bern, toy_sensor(),
                                   toy_model(rng.uniform(0, 1.0)))
            assert 0.0 < w <= 1.0


class TestWeightBirth:
    def test_zero_rates_gives_clutter_floor(self):
        meas = Measurement(np.zeros(1), np.eye(1))
        w, cand = weight_birth(meas, toy_sensor(), {SP: 0.0}, 0.5, toy_model())
        assert w == pytest.approx(0.5)
        assert cand.existence == 0.0
        assert cand.types == {}

    def test_reference_clutter_intensity_floor(self):
        c = 1.0 / (4 * 200 * math.pi ** 4)
        assert c == pytest.approx(1.28325e-5, rel=1e-4)
        meas = Measurement(np.array([1000.0]), np.eye(1))  # far from any birth
        w, _ = weight_birth(meas, toy_sensor(), {SP: 1e-6}, c, toy_model())
        assert w >= c

    def test_scalar_hand_evaluated(self):
        # h = s + x, sensor N(0, 0.25), R = 1, eta = 2, pd = 0.9, z = 0.3.
        model = LinearModel({SP: ([[1.0]], [[1.0]])}, dim=1, p_detect=0.9)
        sensor = GaussianComponent(np.zeros(1), np.array([[0.25]]))
        meas = Measurement(np.array([0.3]), np.eye(1))
        w, cand = weight_birth(meas, sensor, {SP: 2.0}, 0.01, model)
        # Birth mean inverts exactly: u = z - s = 0.3; C = (P + R) = 1.25;
        # S = P + C + R = 2.5 and the predicted residual is 0.
        rho = 2.0 * 0.9 / math.sqrt(2 * math.pi * 2.5)
        assert cand.types[SP].mean[0] == pytest.approx(0.3)
        assert cand.types[SP].covariance[0, 0] == pytest.approx(1.25)
        assert w == pytest.approx(0.01 + rho, rel=1e-12)
        assert cand.existence == pytest.approx(rho / (0.01 + rho), rel=1e-12)
        assert cand.types[SP].weight == 1.0


class TestBuildCostMatrix:
    def test_zero_measurements(self):
        hyp = GlobalHypothesis(1.0, (single_type_bernoulli(0.5, SP, [0.0], [[1.0]]),))
        costs, const, ctx = build_cost_matrix(
            hyp, [], toy_sensor(), {SP: 1.0}, 0.1, toy_model())
        assert costs.matrix.shape == (0, 1)
        sols = murty_kbest(costs, 5)
        assert len(sols) == 1
        assert sols[0][0].sigma == (0,)
        assert sols[0][1] == 0.0

    def test_single_measurement_no_priors(self):
        hyp = GlobalHypothesis(1.0, ())
        meas = Measurement(np.zeros(1), np.eye(1))
        costs, const, ctx = build_cost_matrix(
            hyp, [meas], toy_sensor(), {SP: 1.0}, 0.1, toy_model())
        assert costs.matrix.shape == (1, 1)
        w, _ = weight_birth(meas, toy_sensor(), {SP: 1.0}, 0.1, toy_model())
        assert costs.matrix[0, 0] == pytest.approx(-math.log(w))
        assert const == 0.0

    def test_entries_match_direct_weight_calls(self):
        rng = np.random.default_rng(11)
        model = toy_model()
        sensor = toy_sensor(0.5)
        berns = (single_type_bernoulli(0.8, SP, [0.2], [[0.5]]),)
        hyp = GlobalHypothesis(1.0, berns)
        measurements = [Measurement(rng.normal(size=1), np.eye(1))
                        for _ in range(2)]
        costs, const, ctx = build_cost_matrix(
            hyp, measurements, sensor, {SP: 1.5}, 0.2, model, gate=None)
        assert costs.matrix.shape == (2, 3)
        l0 = weight_misdetected(berns[0], sensor, model)
        assert const == pytest.approx(math.log(l0))
        for p, meas in enumerate(measurements):
            ld = weight_detected(berns[0], meas, sensor, model)
            assert costs.matrix[p, 0] == pytest.approx(math.log(l0) - math.log(ld))
            lb, _ = weight_birth(meas, sensor, {SP: 1.5}, 0.2, model)
            assert costs.matrix[p, 1 + p] == pytest.approx(-math.log(lb))
        assert np.isinf(costs.matrix[0, 2]) and np.isinf(costs.matrix[1, 1])

    def test_gate_disables_far_pairs(self):
        model = toy_model()
        sensor = toy_sensor(0.01)
        berns = (single_type_bernoulli(0.9, SP, [0.0], [[0.01]]),)
        hyp = GlobalHypothesis(1.0, berns)
        far = Measurement(np.array([500.0]), np.eye(1))
        costs, _, _ = build_cost_matrix(hyp, [far], sensor, {SP: 1.0}, 0.1,
                                        model, gate=30.0)
        assert np.isinf(costs.matrix[0, 0])


class TestMurty:
    def test_single_cell(self):
        costs = CostMatrix(np.array([[0.7]]), 0)
        sols = murty_kbest(costs, 3)
        assert len(sols) == 1
        sigma, cost = sols[0]
        assert cost == pytest.approx(0.7)
        assert sigma.sigma == (1,)

    def test_two_by_two_by_hand(self):
        costs = CostMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]), 2)
        sols = murty_kbest(costs, 2)
        assert len(sols) == 2
        assert sols[0][1] == pytest.approx(2.0)
        assert sols[0][0].sigma[:2] == (1, 2)
        assert sols[1][1] == pytest.approx(4.0)
        assert sols[1][0].sigma[:2] == (2, 1)

    def test_costs_nondecreasing_and_first_optimal(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            n_meas = rng.integers(1, 5)
            n_prior = rng.integers(0, 6)
            matrix = np.full((n_meas, n_prior + n_meas), np.inf)
            matrix[:, :n_prior] = rng.normal(size=(n_meas, n_prior))
            matrix[:, n_prior:][np.eye(n_meas, dtype=bool)] = rng.normal(size=n_meas)
            sols = murty_kbest(CostMatrix(matrix, int(n_prior)), 10)
            costs = [c for _, c in sols]
            assert costs == sorted(costs)
            brute = sorted(
                assignment_cost(matrix, s, n_prior)
                for s in enumerate_associations(int(n_prior), int(n_meas)))
            assert costs[0] == pytest.approx(brute[0], abs=1e-9)

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(22)
        for _ in range(25):
            n_meas = int(rng.integers(1, 4))
            n_prior = int(rng.integers(0, 5))
            matrix = np.full((n_meas, n_prior + n_meas), np.inf)
            matrix[:, :n_prior] = rng.normal(size=(n_meas, n_prior))
            matrix[:, n_prior:][np.eye(n_meas, dtype=bool)] = rng.normal(size=n_meas)
            sols = murty_kbest(CostMatrix(matrix, n_prior), 10)
            brute = sorted(
                (assignment_cost(matrix, s, n_prior), s)
                for s in enumerate_associations(n_prior, n_meas))
            assert len(sols) == min(10, len(brute))
            for (sigma, cost), (bcost, bsigma) in zip(sols, brute):
                assert cost == pytest.approx(bcost, abs=1e-9)
            assert sorted(round(c, 9) for _, c in sols) == [
                round(c, 9) for c, _ in brute[:len(sols)]]

    def test_sigma_validates(self):
        rng = np.random.default_rng(23)
        matrix = np.full((3, 5), np.inf)
        matrix[:, :2] = rng.normal(size=(3, 2))
        matrix[:, 2:][np.eye(3, dtype=bool)] = rng.normal(size=3)
        for sigma, _ in murty_kbest(CostMatrix(matrix, 2), 8):
            sigma.validate()

    def test_infeasible_row_raises(self):
        matrix = np.full((1, 2), np.inf)
        with pytest.raises(InfeasibleAssignmentError):
            murty_kbest(CostMatrix(matrix, 1), 2)


class TestHypothesisWeights:
    def test_single_solution(self):
        sigma = AssociationVector(0, ())
        w = hypothesis_weights(0.4, [(sigma, 1.3)], 0.7)
        assert len(w) == 1
        assert w[0] == pytest.approx(0.4 * math.exp(0.7 - 1.3))

    def test_equal_costs_split_equally(self):
        sigma = AssociationVector(0, ())
        w = hypothesis_weights(1.0, [(sigma, 2.0), (sigma, 2.0)], 0.0)
        assert w[0] == pytest.approx(w[1])

    def test_log3_cost_gap_gives_3_to_1(self):
        sigma = AssociationVector(0, ())
        w = hypothesis_weights(1.0, [(sigma, 0.0), (sigma, math.log(3.0))], 0.0)
        assert w[0] / w[1] == pytest.approx(3.0, rel=1e-12)


class TestAssociationVector:
    def test_validate_rejects_duplicates(self):
        with pytest.raises(ValueError):
            AssociationVector(2, (1, 1, None, None)).validate()

    def test_validate_rejects_missing_measurement(self):
        with pytest.raises(ValueError):
            AssociationVector(1, (0, None)).validate()

    def test_helpers(self):
        sigma = AssociationVector(2, (2, 0, 1, None))
        sigma.validate()
        assert sigma.detected_pairs() == [(0, 1)]
        assert sigma.misdetected() == [1]
        assert sigma.born_measurements() == [0]
