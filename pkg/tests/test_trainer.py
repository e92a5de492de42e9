import json
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chi2

from coreda.inference import evaluate
from coreda.numkernel import ContractError
from coreda.sampling import ClipSpec
from coreda.synthdata import SOURCE_DOMAIN, DomainConfig, GenConfig, VideoSample, generate
from coreda.trainer import (
    DESK_TRAIN,
    NonFiniteLossError,
    TrainConfig,
    sample_triplets,
    train_coreda,
    train_semisupervised,
    train_source_only,
)

SPEC = ClipSpec(K=2, l=4)
FAST = TrainConfig(epochs=2, batch_size=4, lr_encoder=1e-3, lr_heads=1e-2, clip_spec=SPEC)


def params_bytes(m):
    return [m.params[n].data.tobytes() for n in m.names]


class TestTriplets:
    def test_source_differs_from_exemplar(self, small_data):
        D_S, D_T = small_data
        rng = np.random.default_rng(0)
        for _ in range(125):
            b = sample_triplets(D_S, D_T, 8, SPEC, rng)
            assert all(s != e for s, e in zip(b.source_ids, b.exemplar_ids))

    def test_single_target(self, small_data):
        D_S, D_T = small_data
        b = sample_triplets(D_S, D_T[:1], 8, SPEC, np.random.default_rng(0))
        assert b.target_ids == [D_T[0].id] * 8
        assert b.target.shape == (8, 8, 1, 8, 8)

    def test_labels_follow_ids(self, small_data):
        D_S, D_T = small_data
        by_id = {v.id: v.label for v in D_S}
        b = sample_triplets(D_S, D_T, 6, SPEC, np.random.default_rng(1))
        assert b.y_s.tolist() == [by_id[i] for i in b.source_ids]
        assert b.y_e.tolist() == [by_id[i] for i in b.exemplar_ids]

    def test_source_marginal_uniform(self, small_data):
        D_S, D_T = small_data
        rng = np.random.default_rng(2)
        ids = []
        while len(ids) < 10_000:
            ids += sample_triplets(D_S, D_T, 8, SPEC, rng).source_ids
        counts = np.array([ids.count(v.id) for v in D_S], dtype=float)
        n, k = len(ids), len(D_S)
        expect = n / k
        sd = np.sqrt(n * (1 / k) * (1 - 1 / k))
        assert np.all(np.abs(counts - expect) <= 3 * sd)
        stat = ((counts - expect) ** 2 / expect).sum()
        assert stat <= chi2.ppf(0.999, k - 1)

    def test_too_few_sources(self, small_data):
        D_S, D_T = small_data
        with pytest.raises(ContractError):
            sample_triplets(D_S[:1], D_T, 4, SPEC, np.random.default_rng(0))

    def test_config_validation(self):
        with pytest.raises(ContractError):
            TrainConfig(batch_size=1)
        with pytest.raises(ContractError):
            TrainConfig(epochs=0)


class TestCoreda:
    def test_deterministic(self, small_data):
        D_S, D_T = small_data
        a, la = train_coreda(D_S, D_T, FAST)
        b, lb = train_coreda(D_S, D_T, FAST)
        assert params_bytes(a) == params_bytes(b)
        assert la.steps == lb.steps

    def test_gamma_zero_skips_target_forward(self, small_data):
        D_S, D_T = small_data
        _, log = train_coreda(D_S, D_T, replace(FAST, weights=replace(FAST.weights, gamma=0.0)))
        assert log.counters["target_forward"] == 0
        assert log.counters["target_samples_drawn"] > 0
        _, log = train_coreda(D_S, D_T, FAST)
        assert log.counters["target_forward"] > 0

    def test_no_cons_t_no_target_gradient(self, small_data):
        D_S, D_T = small_data
        _, log = train_coreda(D_S, D_T, replace(FAST, disable_cons_t=True))
        assert log.counters["target_forward"] == 0
        assert all(s["cons_t"] == 0.0 for s in log.steps)

    def test_target_labels_never_read(self, small_data):
        D_S, D_T = small_data
        # labels planted on the target set must not change training
        planted = [VideoSample(v.frames, 99.0, v.domain, v.id) for v in D_T]
        a, _ = train_coreda(D_S, D_T, FAST)
        b, _ = train_coreda(D_S, planted, FAST)
        assert params_bytes(a) == params_bytes(b)

    def test_outputs(self, small_data, tmp_path):
        D_S, D_T = small_data
        _, log = train_coreda(D_S, D_T, FAST, out_dir=tmp_path)
        assert (tmp_path / "checkpoint.bin").exists()
        recs = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
        assert [r["kind"] for r in recs] == ["header", "epoch", "epoch", "footer"]
        assert recs[0]["seed"] == FAST.seed
        steps_per_epoch = -(-max(len(D_S), len(D_T)) // FAST.batch_size)
        assert len(log.steps) == 2 * steps_per_epoch

    def test_total_identity_every_step(self, small_data):
        D_S, D_T = small_data
        _, log = train_coreda(D_S, D_T, FAST)
        for s in log.steps:
            assert abs(s["total"] - (s["sup_rel"] + s["sup_abs"] + s["cons_s"] + s["cons_t"])) <= 1e-12 * max(1.0, s["total"])

    def test_non_finite_names_term(self, small_gen, small_data):
        _, D_T = small_data
        bad = generate(4, True, SOURCE_DOMAIN, small_gen, 0)
        bad[0] = VideoSample(bad[0].frames, float("inf"), "source", bad[0].id)
        with pytest.raises(NonFiniteLossError, match="sup_"):
            train_coreda(bad, D_T, replace(FAST, epochs=3))

    def test_loss_decreases_on_default_benchmark(self, trained_default):
        _, log = trained_default
        assert log.epochs[-1]["total"] < log.epochs[0]["total"]


class TestSourceOnly:
    def test_no_target_data(self, small_data):
        D_S, _ = small_data
        _, log = train_source_only(D_S, FAST)
        assert log.counters == {"target_forward": 0, "target_samples_drawn": 0}
        assert all(s["cons_t"] == 0.0 and s["sup_rel"] == 0.0 for s in log.steps)

    def test_fits_clean_source(self):
        gen = GenConfig()
        D = generate(120, True, DomainConfig("horizontal_grating", 8.0, 1.0, 0.0, 0.0), gen, seed=0)
        m, log = train_source_only(D, DESK_TRAIN)
        assert log.epochs[-1]["sup_abs"] < log.epochs[0]["sup_abs"]
        rep = evaluate(m, D, None)
        assert rep.scc >= 0.8


class TestSemiSupervised:
    def test_zero_shots_is_coreda(self, small_data):
        D_S, D_T = small_data
        a, _ = train_coreda(D_S, D_T, FAST)
        b, _ = train_semisupervised(D_S, D_T, {}, replace(FAST, n_shots=0))
        assert params_bytes(a) == params_bytes(b)

    def test_shots_change_training(self, small_data):
        D_S, D_T = small_data
        labels = {v.id: v.extras["skill"] for v in D_T[:2]}
        a, _ = train_coreda(D_S, D_T, FAST)
        b, log = train_semisupervised(D_S, D_T, labels, replace(FAST, n_shots=2))
        assert params_bytes(a) != params_bytes(b)
        assert all(s["sup_target"] > 0 for s in log.steps)

    def test_unknown_id(self, small_data):
        D_S, D_T = small_data
        with pytest.raises(ContractError, match="nope"):
            train_semisupervised(D_S, D_T, {"nope": 10.0, D_T[0].id: 12.0}, replace(FAST, n_shots=2))

    def test_wrong_count(self, small_data):
        D_S, D_T = small_data
        with pytest.raises(ContractError):
            train_semisupervised(D_S, D_T, {D_T[0].id: 12.0}, FAST)
