import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamgcn.evaluation import (AnytimeTrace, MetricContractError,
                                  PerformanceMatrix, average_anytime,
                                  average_forgetting, average_performance,
                                  evaluate_task, evaluate_tasks, f1_binary)
from streamgcn.datasets import StaticDataset
from streamgcn.graph import TEST, GrowingGraph
from streamgcn.streams import build_class_incremental


def matrix_from(values):
    values = np.asarray(values, dtype=float)
    m = PerformanceMatrix(values.shape[0])
    for i in range(values.shape[0]):
        row = {j: (None if np.isnan(values[i, j]) else float(values[i, j]))
               for j in range(values.shape[1])}
        m.fill_row(i, row)
    return m


def naive_ap(values):
    last = values[-1]
    total = 0.0
    for v in last:
        total += v
    return total / len(last)


def naive_af(values):
    t = len(values)
    total = 0.0
    for i in range(t - 1):
        total += values[t - 1][i] - values[i][i]
    return total / (t - 1)


class TestWorkedExample:
    def test_ap_is_0_65(self):
        m = matrix_from([[0.8, np.nan], [0.6, 0.7]])
        assert average_performance(m) == pytest.approx(0.65, abs=1e-15)

    def test_af_is_minus_0_2(self):
        m = matrix_from([[0.8, np.nan], [0.6, 0.7]])
        assert average_forgetting(m) == pytest.approx(-0.2, abs=1e-15)

    def test_all_ones(self):
        m = matrix_from(np.ones((3, 3)))
        assert average_performance(m) == 1.0
        assert average_forgetting(m) == 0.0

    def test_single_task(self):
        m = matrix_from([[0.42]])
        assert average_performance(m) == pytest.approx(0.42)
        assert average_forgetting(m) is None

    def test_positive_forgetting_is_possible(self):
        m = matrix_from([[0.5, np.nan], [0.9, 0.8]])
        assert average_forgetting(m) > 0

    def test_unfilled_row_rejected(self):
        m = PerformanceMatrix(2)
        m.fill_row(0, {0: 0.5})
        with pytest.raises(MetricContractError):
            average_performance(m)


class TestAgainstNaiveOracle:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 8))
    def test_random_matrices(self, seed, t):
        rng = np.random.default_rng(seed)
        lower = rng.random((t, t))
        m = matrix_from(lower)
        assert average_performance(m) == pytest.approx(naive_ap(lower), abs=1e-12)
        assert average_forgetting(m) == pytest.approx(naive_af(lower), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
    def test_random_traces(self, values):
        trace = AnytimeTrace()
        for i, v in enumerate(values):
            trace.record(i, v)
        total = 0.0
        for v in values:
            total += v
        assert average_anytime(trace) == pytest.approx(total / len(values),
                                                       abs=1e-12)


class TestAnytime:
    def test_two_point_trace(self):
        trace = AnytimeTrace()
        trace.record(1, 1.0)
        trace.record(2, 0.5)
        assert average_anytime(trace) == pytest.approx(0.75)

    def test_constant_trace(self):
        trace = AnytimeTrace()
        for i in range(5):
            trace.record(i, 0.3)
        assert average_anytime(trace) == pytest.approx(0.3)

    def test_empty_trace_rejected(self):
        with pytest.raises(MetricContractError):
            average_anytime(AnytimeTrace())


class TestF1:
    def test_perfect(self):
        assert f1_binary(np.array([1, 0, 1]), np.array([1, 0, 1]), 1) == 1.0

    def test_no_positive_predictions(self):
        assert f1_binary(np.array([0, 0, 0]), np.array([1, 0, 1]), 1) == 0.0

    def test_hand_counts(self):
        # TP=2, FP=1, FN=1 -> P = R = 2/3 -> F1 = 2/3
        pred = np.array([1, 1, 1, 0, 0])
        true = np.array([1, 1, 0, 1, 0])
        assert f1_binary(pred, true, 1) == pytest.approx(2.0 / 3.0)


def _toy_graph_and_schedule(seed=0):
    rng = np.random.default_rng(seed)
    n = 80
    labels = np.repeat(np.arange(4), 20)
    feats = rng.normal(size=(n, 3))
    edges = np.array([(u, v) for u in range(n) for v in range(u + 1, n)
                      if rng.random() < 0.05], dtype=np.int64)
    ds = StaticDataset(features=feats, labels=labels, edges=edges,
                       timestamps=None, order=None, num_classes=4)
    stream, schedule, _ = build_class_incremental(ds, classes_per_task=2,
                                                  split_seed=seed)
    g = GrowingGraph(ds.feature_dim, ds.num_classes)
    while not stream.exhausted():
        start = stream.cursor
        for off, ev in enumerate(stream.next_minibatch()):
            g.ingest(ev, split=int(stream.split_tags[start + off]))
    return g, schedule


class TestEvaluateTask:
    def test_perfect_predictor_scores_one(self):
        g, schedule = _toy_graph_and_schedule()

        def oracle_predict(graph, ids):
            return graph.labels_of(ids)

        assert evaluate_task(oracle_predict, g, schedule, 0, TEST) == 1.0

    def test_constant_predictor_on_balanced_task(self):
        g, schedule = _toy_graph_and_schedule()

        def stuck(graph, ids):
            return np.zeros(len(ids), dtype=np.int64)

        v = evaluate_task(stuck, g, schedule, 0, TEST)
        ids = [i for i in range(g.size)
               if g.split_of(i) == TEST and g.label_of(i) in (0, 1)]
        expect = np.mean(g.labels_of(ids) == 0)
        assert v == pytest.approx(expect)

    def test_unstreamed_task_absent(self):
        g, schedule = _toy_graph_and_schedule()
        fresh = GrowingGraph(g.feature_dim, g.num_classes)

        def nothing(graph, ids):
            raise AssertionError("must not be called")

        assert evaluate_task(nothing, fresh, schedule, 1, TEST) is None

    def test_matches_per_node_loop_oracle(self):
        g, schedule = _toy_graph_and_schedule(seed=3)
        rng = np.random.default_rng(0)

        def noisy(graph, ids):
            # deterministic pseudo-predictor keyed by node id
            return np.array([(v * 7) % 4 for v in np.asarray(ids)])

        batch_scores = evaluate_tasks(noisy, g, schedule, TEST)
        for j in range(schedule.num_tasks):
            ids = [v for v in range(g.size)
                   if g.split_of(v) == TEST
                   and g.label_of(v) in schedule.label_groups[j]]
            correct = 0
            for v in ids:
                correct += int(noisy(g, [v])[0] == g.label_of(v))
            assert batch_scores[j] == pytest.approx(correct / len(ids))
