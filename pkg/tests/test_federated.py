"""Attack-aware weighting, gate, aggregation, and round orchestration."""
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fltp.features import NormalizationSpec
from fltp.federated import (
    AggregationMode,
    CLEANLINESS_FLOOR,
    EvalSet,
    GateConfig,
    GateStrategy,
    InfluenceTable,
    LocalUpdate,
    VehicleData,
    aggregate,
    decide_mode,
    evaluate_global,
    mre_weights,
    run_centralized,
    run_fedavg_round,
    run_flt_round,
    save_checkpoint,
)
from fltp.model import ModelParams, TrainConfig, flat_length, forward, load_params, train_local
from fltp.seeding import derive_rng
from fltp.trace import AttackerType

NORM = NormalizationSpec(region_side=10_000.0, v_max=40.0)


def _update(vid, counts, total, params=None):
    if params is None:
        params = np.zeros(3)
    return LocalUpdate(vid, np.asarray(params, dtype=float), counts, total)


def _vehicle(vid, n, codes=0, seed=0):
    rng = np.random.default_rng(seed + vid)
    feats = rng.uniform(0.0, 1.0, size=(n, 10, 9))
    labels = rng.uniform(0.0, 1.0, size=(n, 5, 3))
    labels[:, :, 2] = np.broadcast_to(np.asarray(codes, dtype=float), (n,))[:, None]
    return VehicleData(vid, feats, labels)


def _eval_set(codes, n_per=2, seed=99):
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for code in codes:
        f = rng.uniform(0.0, 1.0, size=(n_per, 10, 9))
        y = rng.uniform(0.0, 1.0, size=(n_per, 5, 3))
        y[:, :, 2] = float(code)
        feats.append(f)
        labels.append(y)
    return EvalSet(np.concatenate(feats), np.concatenate(labels))


class TestMreWeights:
    def test_two_vehicle_worked_example(self):
        # clean 0/100 vs half-attacked 50/100 at full influence -> 2/3 vs 1/3
        ups = [_update(0, {}, 100), _update(1, {int(AttackerType.CONSTANT): 50}, 100)]
        w = mre_weights(ups, InfluenceTable(constant=1.0))
        assert abs(w[0] - 2.0 / 3.0) <= 1e-12
        assert abs(w[1] - 1.0 / 3.0) <= 1e-12

    def test_influence_scales_attacked_fraction(self):
        ups = [
            _update(0, {int(AttackerType.CONSTANT_OFFSET): 40}, 120),  # 1 - 0.8*40/120
            _update(1, {int(AttackerType.RANDOM): 30}, 120),  # 1 - 1.0*30/120
        ]
        w = mre_weights(ups, InfluenceTable())
        e0 = 1.0 - 0.8 * 40 / 120
        e1 = 1.0 - 30 / 120
        np.testing.assert_allclose(w, [e0 / (e0 + e1), e1 / (e0 + e1)], rtol=0, atol=1e-15)

    def test_zero_influence_gives_exact_uniform(self):
        ups = [_update(k, {1: 10 * k}, 50) for k in range(3)]
        w = mre_weights(ups, InfluenceTable.zeros())
        np.testing.assert_array_equal(w, np.full(3, 1.0 / 3.0))

    def test_fully_attacked_clamped_at_floor(self):
        ups = [_update(0, {}, 10), _update(1, {int(AttackerType.RANDOM): 10}, 10)]
        w = mre_weights(ups, InfluenceTable())
        assert w[1] > 0.0
        assert w[1] == pytest.approx(CLEANLINESS_FLOOR / (1.0 + CLEANLINESS_FLOOR), rel=1e-9)

    def test_overweight_influence_clamped(self):
        table = InfluenceTable(constant=5.0)
        ups = [_update(0, {}, 10), _update(1, {int(AttackerType.CONSTANT): 10}, 10)]
        w = mre_weights(ups, table)
        assert w[1] == pytest.approx(CLEANLINESS_FLOOR / (1.0 + CLEANLINESS_FLOOR), rel=1e-9)

    @given(
        st.lists(
            st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(1, 40)),
            min_size=1,
            max_size=6,
        )
    )
    def test_is_probability_vector(self, raw):
        ups = []
        for vid, (a, b, extra) in enumerate(raw):
            total = a + b + extra
            ups.append(_update(vid, {1: a, 4: b}, total))
        w = mre_weights(ups, InfluenceTable())
        assert w.shape == (len(ups),)
        assert np.all(w > 0)
        assert abs(w.sum() - 1.0) < 1e-12

    def test_scale_invariance(self):
        small = [_update(0, {1: 5}, 20), _update(1, {3: 2}, 20)]
        large = [_update(0, {1: 50}, 200), _update(1, {3: 20}, 200)]
        np.testing.assert_allclose(
            mre_weights(small, InfluenceTable()), mre_weights(large, InfluenceTable()), rtol=0, atol=1e-15
        )

    def test_monotone_in_attacked_count(self):
        base = _update(0, {}, 100)
        prev = 1.0
        for attacked in (0, 10, 30, 60, 100):
            w = mre_weights([base, _update(1, {1: attacked}, 100)], InfluenceTable())
            assert w[1] <= prev + 1e-15
            prev = w[1]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mre_weights([], InfluenceTable())


class TestLocalUpdateValidation:
    def test_zero_total(self):
        with pytest.raises(ValueError):
            _update(0, {}, 0)

    def test_negative_count(self):
        with pytest.raises(ValueError):
            _update(0, {1: -1}, 10)

    def test_counts_exceed_total(self):
        with pytest.raises(ValueError):
            _update(0, {1: 6, 3: 5}, 10)


class TestDecideMode:
    def test_accuracy_gate_below_threshold(self):
        gate = GateConfig(GateStrategy.ACCURACY, 0.2)
        assert decide_mode(gate, 0.0, derive_rng(0)) is AggregationMode.UNIFORM_AVERAGE
        assert decide_mode(gate, 0.19999, derive_rng(0)) is AggregationMode.UNIFORM_AVERAGE

    def test_accuracy_gate_boundary_is_weighted(self):
        gate = GateConfig(GateStrategy.ACCURACY, 0.2)
        assert decide_mode(gate, 0.2, derive_rng(0)) is AggregationMode.MRE_WEIGHTED
        assert decide_mode(gate, 0.9, derive_rng(0)) is AggregationMode.MRE_WEIGHTED

    def test_zero_threshold_always_weighted(self):
        gate = GateConfig(GateStrategy.ACCURACY, 0.0)
        assert decide_mode(gate, 0.0, derive_rng(0)) is AggregationMode.MRE_WEIGHTED

    def test_random_gate_extremes(self):
        rng = derive_rng(42)
        assert all(
            decide_mode(GateConfig(GateStrategy.RANDOM, 0.0), 0.5, rng) is AggregationMode.MRE_WEIGHTED
            for _ in range(100)
        )
        assert all(
            decide_mode(GateConfig(GateStrategy.RANDOM, 1.0), 0.5, rng) is AggregationMode.UNIFORM_AVERAGE
            for _ in range(100)
        )

    def test_random_gate_frequency(self):
        gate = GateConfig(GateStrategy.RANDOM, 0.3)
        rng = derive_rng(7)
        hits = sum(
            decide_mode(gate, 0.9, rng) is AggregationMode.UNIFORM_AVERAGE for _ in range(4000)
        )
        assert abs(hits / 4000 - 0.3) < 0.03  # > 4 sigma

    def test_random_gate_reproducible(self):
        gate = GateConfig(GateStrategy.RANDOM, 0.5)
        seq_a = [decide_mode(gate, 0.9, derive_rng(11, k)) for k in range(20)]
        seq_b = [decide_mode(gate, 0.9, derive_rng(11, k)) for k in range(20)]
        assert seq_a == seq_b

    def test_validation(self):
        with pytest.raises(ValueError):
            decide_mode(GateConfig(threshold=1.5), 0.5, derive_rng(0))
        with pytest.raises(ValueError):
            decide_mode(GateConfig(), 1.5, derive_rng(0))


class TestAggregate:
    def test_hand_case(self):
        ups = [_update(0, {}, 1, [1.0, 2.0]), _update(1, {}, 1, [4.0, 6.0])]
        np.testing.assert_array_equal(aggregate(ups, [0.5, 0.5]), [2.5, 4.0])

    def test_weighted_hand_case(self):
        ups = [_update(0, {}, 1, [1.0, 2.0]), _update(1, {}, 1, [4.0, 6.0])]
        np.testing.assert_allclose(aggregate(ups, [0.75, 0.25]), [1.75, 3.0], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("n", [2, 4])
    def test_uniform_identity_bitwise_dyadic(self, n):
        p = np.random.default_rng(3).standard_normal(40)
        ups = [_update(k, {}, 1, p) for k in range(n)]
        np.testing.assert_array_equal(aggregate(ups, np.full(n, 1.0 / n)), p)

    def test_uniform_identity_close_any_n(self):
        p = np.random.default_rng(4).standard_normal(40)
        ups = [_update(k, {}, 1, p) for k in range(5)]
        np.testing.assert_allclose(aggregate(ups, np.full(5, 0.2)), p, rtol=1e-14, atol=0)

    def test_permutation_bitwise_invariant(self):
        rng = np.random.default_rng(5)
        params = [rng.standard_normal(30) for _ in range(4)]
        weights = np.array([0.1, 0.2, 0.3, 0.4])
        ups = [_update(k, {}, 1, params[k]) for k in range(4)]
        ref = aggregate(ups, weights)
        for perm in ([3, 1, 0, 2], [2, 3, 0, 1], [1, 0, 3, 2]):
            shuffled = aggregate([ups[i] for i in perm], weights[perm])
            np.testing.assert_array_equal(shuffled, ref)

    def test_weight_sum_checked(self):
        ups = [_update(0, {}, 1, [1.0]), _update(1, {}, 1, [2.0])]
        with pytest.raises(ValueError):
            aggregate(ups, [0.5, 0.6])

    def test_duplicate_ids_rejected(self):
        ups = [_update(0, {}, 1, [1.0]), _update(0, {}, 1, [2.0])]
        with pytest.raises(ValueError):
            aggregate(ups, [0.5, 0.5])

    def test_length_mismatches_rejected(self):
        ups = [_update(0, {}, 1, [1.0]), _update(1, {}, 1, [2.0])]
        with pytest.raises(ValueError):
            aggregate(ups, [1.0])
        ragged = [_update(0, {}, 1, [1.0, 2.0]), _update(1, {}, 1, [3.0])]
        with pytest.raises(ValueError):
            aggregate(ragged, [0.5, 0.5])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([], [])


class TestEvaluateGlobal:
    def test_zero_model_hand_metrics(self):
        n_per = 2
        rng = np.random.default_rng(1)
        feats = rng.uniform(0.0, 1.0, size=(2 * n_per, 10, 9))
        labels = np.empty((2 * n_per, 5, 3))
        labels[:, :, 0] = 0.3
        labels[:, :, 1] = 0.3
        labels[:n_per, :, 2] = 0.0
        labels[n_per:, :, 2] = 3.0
        es = EvalSet(feats, labels)
        err, acc, per_type, loss_value = evaluate_global(ModelParams.zeros(4), es, NORM)
        assert err == pytest.approx(3000.0 * np.sqrt(2.0), rel=1e-12)
        assert acc == 0.5
        assert per_type == {0: 1.0, 3: 0.0}
        # per sample: 10 position residuals of 0.09 plus five code residuals
        assert loss_value == pytest.approx((0.9 + 0.9 + 45.9 + 45.9) / 4, rel=1e-12)

    def test_empty_eval_set_rejected(self):
        es = EvalSet(np.zeros((0, 10, 9)), np.zeros((0, 5, 3)))
        with pytest.raises(ValueError):
            evaluate_global(ModelParams.zeros(4), es, NORM)


class TestVehicleData:
    def test_attack_histogram(self):
        rng = np.random.default_rng(0)
        labels = rng.uniform(0.0, 1.0, size=(7, 5, 3))
        labels[:, :, 2] = np.array([0, 0, 1, 3, 3, 3, 5])[:, None]
        vd = VehicleData(0, rng.uniform(size=(7, 10, 9)), labels)
        assert vd.attack_histogram() == {1: 1, 2: 0, 3: 3, 4: 0, 5: 1}
        assert vd.n_samples == 7


def _round_kwargs(seed=123, **overrides):
    kw = dict(
        round_idx=1,
        prev_accuracy=0.0,
        gate=GateConfig(),
        influence=InfluenceTable(),
        train=TrainConfig(hidden_size=4, learning_rate=1e-3, batch_size=8, local_episodes=2),
        norm=NORM,
        seed=seed,
    )
    kw.update(overrides)
    return kw


class TestRunRound:
    def test_deterministic(self):
        vehicles = [_vehicle(0, 8), _vehicle(1, 8, codes=1)]
        es = _eval_set([0, 1])
        p0 = ModelParams.init(4, derive_rng(9))
        a_params, a_rep = run_flt_round(p0, vehicles, es, **_round_kwargs())
        b_params, b_rep = run_flt_round(p0, vehicles, es, **_round_kwargs())
        np.testing.assert_array_equal(a_params.flatten(), b_params.flatten())
        assert (a_rep.prediction_error, a_rep.prediction_accuracy, a_rep.loss) == (
            b_rep.prediction_error,
            b_rep.prediction_accuracy,
            b_rep.loss,
        )
        assert a_rep.lambdas == b_rep.lambdas

    def test_vehicle_order_irrelevant(self):
        vehicles = [_vehicle(0, 8), _vehicle(1, 8, codes=1)]
        es = _eval_set([0, 1])
        p0 = ModelParams.init(4, derive_rng(9))
        a_params, _ = run_flt_round(p0, vehicles, es, **_round_kwargs())
        b_params, _ = run_flt_round(p0, list(reversed(vehicles)), es, **_round_kwargs())
        np.testing.assert_array_equal(a_params.flatten(), b_params.flatten())

    def test_identical_vehicles_match_single_local_training(self):
        base = _vehicle(0, 8)
        twin = VehicleData(1, base.features.copy(), base.labels.copy())
        es = _eval_set([0])
        p0 = ModelParams.init(4, derive_rng(10))
        seed = 77
        new_global, rep = run_flt_round(
            p0, [base, twin], es, **_round_kwargs(local_seeds=[seed, seed])
        )
        assert rep.mode == "uniform"  # round 1: no accuracy yet
        solo, _ = train_local(
            p0,
            base.features,
            base.labels,
            episodes=2,
            batch_size=8,
            learning_rate=1e-3,
            momentum=0.5,
            rng=derive_rng(seed),
        )
        np.testing.assert_array_equal(new_global.flatten(), solo.flatten())

    def test_gate_switches_mode_and_lambdas(self):
        vehicles = [_vehicle(0, 8), _vehicle(1, 8, codes=1)]
        es = _eval_set([0, 1])
        p0 = ModelParams.init(4, derive_rng(11))
        _, rep_cold = run_flt_round(p0, vehicles, es, **_round_kwargs(prev_accuracy=0.0))
        assert rep_cold.mode == "uniform"
        assert rep_cold.lambdas == (0.5, 0.5)
        _, rep_warm = run_flt_round(p0, vehicles, es, **_round_kwargs(prev_accuracy=0.9))
        assert rep_warm.mode == "mre"
        # vehicle 1's stream is fully attacked at influence 1 -> floor weight
        assert rep_warm.lambdas[0] > 0.99
        assert rep_warm.lambdas[1] < 1e-5

    def test_fedavg_equals_zero_influence_flt(self):
        vehicles = [_vehicle(0, 8), _vehicle(1, 8, codes=2)]
        es = _eval_set([0, 2])
        train = TrainConfig(hidden_size=4, learning_rate=1e-3, batch_size=8, local_episodes=1)
        p_avg = p_flt = ModelParams.init(4, derive_rng(12))
        for r in range(1, 4):
            p_avg, rep_avg = run_fedavg_round(
                p_avg, vehicles, es, round_idx=r, train=train, norm=NORM, seed=55
            )
            p_flt, rep_flt = run_flt_round(
                p_flt,
                vehicles,
                es,
                round_idx=r,
                prev_accuracy=rep_flt.prediction_accuracy if r > 1 else 0.0,
                gate=GateConfig(),
                influence=InfluenceTable.zeros(),
                train=train,
                norm=NORM,
                seed=55,
            )
            np.testing.assert_array_equal(p_avg.flatten(), p_flt.flatten())
            assert rep_avg.prediction_error == rep_flt.prediction_error
            assert rep_avg.prediction_accuracy == rep_flt.prediction_accuracy
            assert rep_avg.loss == rep_flt.loss

    def test_validation(self):
        es = _eval_set([0])
        p0 = ModelParams.init(4, derive_rng(13))
        with pytest.raises(ValueError):
            run_flt_round(p0, [], es, **_round_kwargs())
        with pytest.raises(ValueError):
            run_flt_round(p0, [_vehicle(0, 8)], es, **_round_kwargs(local_seeds=[1, 2]))


class TestCentralized:
    def test_zero_episodes_keeps_initial(self):
        vd = _vehicle(0, 8)
        es = _eval_set([0])
        train = TrainConfig(hidden_size=4, learning_rate=1e-3)
        p0 = ModelParams.init(4, derive_rng(14))
        out, rep = run_centralized(
            vd.features, vd.labels, es, episodes=0, train=train, norm=NORM, seed=1, initial=p0
        )
        np.testing.assert_array_equal(out.flatten(), p0.flatten())
        assert rep.method == "centralized"
        assert rep.mode == "centralized"

    def test_deterministic_and_seed_sensitive(self):
        vd = _vehicle(0, 12)
        es = _eval_set([0])
        train = TrainConfig(hidden_size=4, learning_rate=1e-3, batch_size=4, local_episodes=2)
        a, _ = run_centralized(vd.features, vd.labels, es, episodes=2, train=train, norm=NORM, seed=5)
        b, _ = run_centralized(vd.features, vd.labels, es, episodes=2, train=train, norm=NORM, seed=5)
        c, _ = run_centralized(vd.features, vd.labels, es, episodes=2, train=train, norm=NORM, seed=6)
        np.testing.assert_array_equal(a.flatten(), b.flatten())
        assert not np.array_equal(a.flatten(), c.flatten())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        vehicles = [_vehicle(0, 8), _vehicle(1, 8, codes=4)]
        es = _eval_set([0, 4])
        p0 = ModelParams.init(4, derive_rng(15))
        new_global, rep = run_flt_round(p0, vehicles, es, **_round_kwargs())
        blob, sidecar = save_checkpoint(tmp_path / "ck", 1, new_global, rep)
        np.testing.assert_array_equal(load_params(blob).flatten(), new_global.flatten())
        meta = json.loads(sidecar.read_text())
        assert meta["round"] == 1
        assert meta["method"] == "fl-tp"
        assert meta["mode"] == rep.mode
        assert meta["lambdas"] == list(rep.lambdas)
        assert meta["metrics"]["pred_error_m"] == rep.prediction_error
        assert meta["metrics"]["atk_accuracy"] == rep.prediction_accuracy
