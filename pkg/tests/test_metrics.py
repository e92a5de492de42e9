import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coreda.metrics import EvalReport, mae, r2, rmse, spearman
from coreda.numkernel import DimensionError


def brute_ranks(x):
    """Average ranks by direct counting: 1 + #smaller + (#equal - 1) / 2."""
    n = len(x)
    out = []
    for i in range(n):
        smaller = sum(1 for j in range(n) if x[j] < x[i])
        equal = sum(1 for j in range(n) if x[j] == x[i])
        out.append(1 + smaller + (equal - 1) / 2)
    return out


def brute_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((a[i] - ma) * (b[i] - mb) for i in range(n))
    va = sum((a[i] - ma) ** 2 for i in range(n))
    vb = sum((b[i] - mb) ** 2 for i in range(n))
    return cov / math.sqrt(va * vb)


def brute_spearman(p, y):
    return brute_pearson(brute_ranks(list(p)), brute_ranks(list(y)))


def random_pair(rng, tied):
    n = int(rng.integers(3, 40))
    if tied:
        return rng.integers(0, 5, n).astype(float), rng.integers(0, 5, n).astype(float)
    return rng.normal(size=n), rng.normal(size=n)


class TestSpearman:
    def test_perfect(self):
        assert spearman([1, 2, 3], [10, 20, 30]).value == 1.0

    def test_reversed(self):
        assert spearman([1, 2, 3], [3, 2, 1]).value == -1.0

    def test_tied_example(self):
        p, y = [1, 2, 2, 3], [1, 3, 2, 4]
        assert abs(spearman(p, y).value - brute_spearman(p, y)) <= 1e-12

    def test_brute_force_random(self):
        rng = np.random.default_rng(0)
        for i in range(100):
            p, y = random_pair(rng, tied=i % 2 == 0)
            s = spearman(p, y)
            if s.degenerate:
                assert len(set(p)) == 1 or len(set(y)) == 1
                continue
            assert abs(s.value - brute_spearman(p, y)) <= 1e-12

    def test_self_correlation_with_ties(self):
        x = [1.0, 1.0, 2.0, 5.0, 5.0, 5.0]
        assert spearman(x, x).value == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("p,y", [([1.0], [2.0]), ([], []), ([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [4, 4, 4])])
    def test_degenerate(self, p, y):
        s = spearman(p, y)
        assert s.degenerate and math.isnan(s.value)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            spearman([1, 2], [1, 2, 3])

    def test_random_monotone_maps(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p, y = random_pair(rng, tied=bool(rng.integers(2)))
            base = spearman(p, y)
            a, b = rng.uniform(0.1, 3.0, 2)
            f = lambda v: a * np.exp(v / 3.0) + b * np.tanh(v) + 0.5 * v  # noqa: E731
            out = spearman(f(p), y)
            assert out.degenerate == base.degenerate
            if not base.degenerate:
                assert abs(out.value - base.value) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.integers(-5, 5), min_size=2, max_size=25).flatmap(
            lambda xs: st.tuples(st.just(xs), st.lists(st.floats(-1e3, 1e3), min_size=len(xs), max_size=len(xs)))
        ),
        st.floats(0.01, 10),
        st.floats(-10, 10),
    )
    def test_affine_and_cubic_invariance(self, data, scale, shift):
        xs, ys = data
        x = np.array(xs, dtype=float)
        base = spearman(x, ys)
        for g in (scale * x + shift, x**3, np.exp(x / 5)):
            out = spearman(g, ys)
            assert out.degenerate == base.degenerate
            if not base.degenerate:
                assert out.value == pytest.approx(base.value, abs=1e-12)


class TestErrors:
    def test_perfect(self):
        y = [6.0, 12.5, 30.0]
        assert mae(y, y) == 0.0 and rmse(y, y) == 0.0 and r2(y, y).value == 1.0

    def test_hand(self):
        assert mae([0, 0], [3, -3]) == 3.0
        assert rmse([0, 0], [3, -3]) == 3.0
        assert r2([0, 0], [3, -3]).value == 0.0

    def test_loop_oracles(self):
        rng = np.random.default_rng(2)
        for i in range(100):
            p, y = random_pair(rng, tied=i % 3 == 0)
            n = len(p)
            m_abs = sum(abs(p[k] - y[k]) for k in range(n)) / n
            m_sq = sum((p[k] - y[k]) ** 2 for k in range(n)) / n
            mean_y = sum(y) / n
            ss_tot = sum((y[k] - mean_y) ** 2 for k in range(n))
            assert abs(mae(p, y) - m_abs) <= 1e-12
            assert abs(rmse(p, y) - math.sqrt(m_sq)) <= 1e-12
            q = r2(p, y)
            if ss_tot == 0:
                assert q.degenerate
            else:
                assert abs(q.value - (1 - n * m_sq / ss_tot)) <= 1e-12

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        p, y = rng.normal(size=20), rng.normal(size=20)
        for c in (-7.0, 0.5, 100.0):
            assert mae(p + c, y + c) == pytest.approx(mae(p, y), abs=1e-12)
            assert rmse(p + c, y + c) == pytest.approx(rmse(p, y), abs=1e-12)

    def test_r2_degenerate(self):
        assert r2([1, 2], [5, 5]).degenerate
        assert r2([1], [5]).degenerate

    def test_mismatch(self):
        for fn in (mae, rmse, r2):
            with pytest.raises(DimensionError):
                fn([1, 2], [1])


def test_report_files(tmp_path):
    rows = [
        {"id": "t0", "true_label": 10.0, "prediction": 11.0, "per_exemplar": [10.5, 11.5]},
        {"id": "t1", "true_label": 20.0, "prediction": 19.0, "per_exemplar": [18.0, 20.0]},
    ]
    rep = EvalReport.from_predictions([11.0, 19.0], [10.0, 20.0], rows)
    assert rep.n == 2 and rep.scc == 1.0 and rep.mae == 1.0
    js, csv_path = rep.write(tmp_path, "eval_target")
    summary = json.loads(js.read_text())
    assert "rows" not in summary and summary["rmse"] == 1.0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "id,true_label,prediction,per_exemplar"
    assert lines[1] == "t0,10.0,11.0,10.5;11.5"


def test_report_degenerate_serialises_null(tmp_path):
    rep = EvalReport.from_predictions([1.0, 1.0], [2.0, 3.0])
    assert rep.scc_degenerate
    js, _ = rep.write(tmp_path)
    assert json.loads(js.read_text())["scc"] is None
