"""Adam, epoch orchestration, determinism, and degenerate-config equivalences."""

import numpy as np
import pytest

from freqrec import autodiff as ad
from freqrec import model as M
from freqrec import trainer as T
from freqrec.augment import AugmentationConfig, build_correlation_index
from freqrec.corpus import (
    Corpus,
    InteractionSequence,
    ItemVocab,
    build_frequency_table,
    corpus_stats,
)
from freqrec.objective import LossConfig
from freqrec.reweight import ReweightConfig
from freqrec.rng import DOMAIN_INIT, RngStream
from freqrec.synth import SyntheticSpec, generate_synthetic
from freqrec.trainer import OptimizerState, TrainConfig, Trainer, adam_step, clip_gradients


def scalar_params(value=1.0):
    cfg = M.ModelConfig(embed_dim=2, num_layers=1, num_heads=1, max_len=2)
    t = ad.leaf(np.array([value]), "x")
    return M.ModelParams(cfg, 1, {"x": t})


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = scalar_params(1.5)
        state = OptimizerState(p)
        adam_step(p, {"x": np.zeros(1)}, state, TrainConfig())
        assert p["x"].data[0] == 1.5
        assert np.array_equal(state.m["x"], np.zeros(1))
        assert np.array_equal(state.v["x"], np.zeros(1))
        assert state.step == 1

    @pytest.mark.parametrize("g", [1e-3, 0.1, 2.0, -0.5])
    def test_first_step_magnitude_near_lr(self, g):
        p = scalar_params(0.0)
        state = OptimizerState(p)
        cfg = TrainConfig(learning_rate=0.01)
        adam_step(p, {"x": np.array([g])}, state, cfg)
        # bias-corrected first step is lr * g / (|g| + eps)
        assert abs(abs(p["x"].data[0]) - cfg.learning_rate) < 1e-6
        assert np.sign(p["x"].data[0]) == -np.sign(g)

    def test_quadratic_simulation_oracle(self):
        # standard Adam on f(x) = x^2 from x = 1 at lr 0.1: monotone descent
        # until the first zero crossing (around step 11), a momentum
        # overshoot afterwards, and |x| < 0.05 by step 100
        p = scalar_params(1.0)
        state = OptimizerState(p)
        cfg = TrainConfig(learning_rate=0.1)
        trace = []
        for _ in range(100):
            g = 2.0 * p["x"].data.copy()
            adam_step(p, {"x": g}, state, cfg)
            trace.append(abs(float(p["x"].data[0])))
        assert all(a > b for a, b in zip(trace[2:10], trace[3:11]))
        assert trace[-1] < 0.05

    def test_nonfinite_update_names_tensor(self):
        p = scalar_params(1.0)
        state = OptimizerState(p)
        with pytest.raises(ad.NumericalError) as exc:
            adam_step(p, {"x": np.array([np.inf])}, state, TrainConfig())
        assert exc.value.tensor_name == "x"

    def test_deterministic(self):
        traces = []
        for _ in range(2):
            p = scalar_params(1.0)
            state = OptimizerState(p)
            cfg = TrainConfig(learning_rate=0.05)
            for step in range(20):
                adam_step(p, {"x": np.array([np.sin(step + 1.0)])}, state, cfg)
            traces.append(p["x"].data.copy())
        assert np.array_equal(traces[0], traces[1])


class TestClip:
    def test_no_clip_below_threshold(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        norm = clip_gradients(g, 10.0)
        assert norm == pytest.approx(5.0)
        assert g["a"][0] == 3.0

    def test_clips_to_max_norm(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        clip_gradients(g, 1.0)
        total = np.sqrt(g["a"][0] ** 2 + g["b"][0] ** 2)
        assert total == pytest.approx(1.0)


def build_context(num_users=40, num_items=25, seed=0, min_len=6, max_len=12):
    raw = generate_synthetic(
        SyntheticSpec(
            num_users=num_users,
            num_items=num_items,
            zipf_exponent=1.2,
            min_len=min_len,
            max_len=max_len,
            seed=seed,
        )
    )
    vocab = ItemVocab(raw.vocabulary)
    corpus = Corpus.build(
        InteractionSequence(s.user, vocab.encode(s.items)) for s in raw.sequences
    )
    freq = build_frequency_table(corpus)
    stats = corpus_stats(corpus, freq)
    return corpus, freq, stats


def make_trainer(corpus, freq, stats, *, cl_weight, gamma, beta, mode_plain=False,
                 policy="adaptive", reweight_enabled=True, epochs=3, seed=0,
                 batch_size=16, lr=0.005, embed_dim=8):
    model_cfg = M.ModelConfig(
        embed_dim=embed_dim, num_layers=1, num_heads=2, max_len=16, dropout_rate=0.1
    )
    loss_cfg = LossConfig(cl_weight=0.0 if mode_plain else cl_weight, temperature=0.5)
    aug_cfg = AugmentationConfig(gamma=gamma, policy=policy)
    contrastive = loss_cfg.cl_weight > 0
    corr = build_correlation_index(corpus, aug_cfg) if contrastive else None
    rw = None
    if reweight_enabled and not mode_plain:
        rw = ReweightConfig(beta=beta)
    trainer = Trainer(
        train=corpus,
        freq=freq,
        stats=stats,
        item_index={i: i for i in sorted(corpus.vocabulary)},
        model_cfg=model_cfg,
        train_cfg=TrainConfig(
            learning_rate=lr, batch_size=batch_size, epochs=epochs, patience=10, seed=seed
        ),
        loss_cfg=loss_cfg,
        aug_cfg=aug_cfg if contrastive else None,
        corr=corr,
        reweight_cfg=rw,
    )
    params = M.init_params(model_cfg, len(corpus.vocabulary), RngStream(seed, DOMAIN_INIT))
    return trainer, params


def run_epochs(trainer, params, n=2):
    state = OptimizerState(params)
    history = []
    for epoch in range(n):
        history.append(trainer.train_epoch(params, state, epoch))
    return history


class TestTrainEpoch:
    def test_identical_seeds_identical_trajectories(self):
        corpus, freq, stats = build_context()
        h1 = run_epochs(*make_trainer(corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.1))
        h2 = run_epochs(*make_trainer(corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.1))
        assert h1 == h2

    def test_params_bitwise_identical_across_runs(self):
        corpus, freq, stats = build_context()
        t1, p1 = make_trainer(corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.1)
        t2, p2 = make_trainer(corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.1)
        run_epochs(t1, p1)
        run_epochs(t2, p2)
        for name in p1.names():
            assert np.array_equal(p1[name].data, p2[name].data), name

    def test_different_seed_differs(self):
        corpus, freq, stats = build_context()
        t1, p1 = make_trainer(corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.1, seed=0)
        t2, p2 = make_trainer(corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.1, seed=1)
        run_epochs(t1, p1)
        run_epochs(t2, p2)
        assert not np.array_equal(p1["item_emb"].data, p2["item_emb"].data)

    def test_degenerate_config_equals_plain_training(self):
        # gamma=0, cl_weight=0, beta=0 must be bit-identical to a plain
        # next-item run that never touches augmentation or reweighting
        corpus, freq, stats = build_context()
        t_deg, p_deg = make_trainer(corpus, freq, stats, cl_weight=0.0, gamma=0.0, beta=0.0)
        t_plain, p_plain = make_trainer(
            corpus, freq, stats, cl_weight=0.3, gamma=0.3, beta=0.1, mode_plain=True
        )
        h_deg = run_epochs(t_deg, p_deg)
        h_plain = run_epochs(t_plain, p_plain)
        assert h_deg == h_plain
        for name in p_deg.names():
            assert np.array_equal(p_deg[name].data, p_plain[name].data), name

    def test_beta_zero_equals_reweight_disabled(self):
        corpus, freq, stats = build_context()
        t_b0, p_b0 = make_trainer(corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.0)
        t_off, p_off = make_trainer(
            corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.1, reweight_enabled=False
        )
        h_b0 = run_epochs(t_b0, p_b0)
        h_off = run_epochs(t_off, p_off)
        assert h_b0 == h_off
        for name in p_b0.names():
            assert np.array_equal(p_b0[name].data, p_off[name].data), name

    def test_memorizes_separable_dataset(self):
        # every user repeats a single personal item: loss must collapse
        rows = [
            InteractionSequence(f"u{i}", tuple([i % 10] * 6)) for i in range(30)
        ]
        corpus = Corpus.build(rows)
        freq = build_frequency_table(corpus)
        stats = corpus_stats(corpus, freq)
        trainer, params = make_trainer(
            corpus, freq, stats, cl_weight=0.0, gamma=0.0, beta=0.0,
            mode_plain=True, lr=0.01, embed_dim=16, batch_size=8,
        )
        state = OptimizerState(params)
        last = None
        for epoch in range(30):
            last = trainer.train_epoch(params, state, epoch)
            if last["rec_loss"] < 0.1:
                break
        assert last["rec_loss"] < 0.1

    def test_reports_loss_components(self):
        corpus, freq, stats = build_context()
        trainer, params = make_trainer(corpus, freq, stats, cl_weight=0.2, gamma=0.3, beta=0.1)
        entry = trainer.train_epoch(params, OptimizerState(params), 0)
        for key in ("epoch", "rec_loss", "cl_loss", "total", "mean_lambda"):
            assert key in entry
        assert entry["cl_loss"] > 0
        assert entry["mean_lambda"] > 0

    def test_all_prefixes_mode_runs(self):
        corpus, freq, stats = build_context(num_users=10)
        model_cfg = M.ModelConfig(embed_dim=8, num_layers=1, num_heads=2, max_len=16)
        trainer = Trainer(
            train=corpus,
            freq=freq,
            stats=stats,
            item_index={i: i for i in sorted(corpus.vocabulary)},
            model_cfg=model_cfg,
            train_cfg=TrainConfig(batch_size=16, epochs=1, all_prefixes=True, seed=0),
            loss_cfg=LossConfig(cl_weight=0.0),
        )
        assert len(trainer.instances) == sum(len(s.items) - 1 for s in corpus.sequences)
        params = M.init_params(model_cfg, len(corpus.vocabulary), RngStream(0, DOMAIN_INIT))
        trainer.train_epoch(params, OptimizerState(params), 0)


class TestFit:
    def _context(self):
        corpus, freq, stats = build_context(num_users=20)
        valid = [(s.items[:-1], s.items[-1]) for s in corpus.sequences]
        return corpus, freq, stats, valid

    def _fit_with_scripted_metric(self, monkeypatch, metrics, patience, epochs=10):
        corpus, freq, stats, valid = self._context()
        trainer, params = make_trainer(
            corpus, freq, stats, cl_weight=0.0, gamma=0.0, beta=0.0, epochs=epochs
        )
        trainer.train_cfg = TrainConfig(
            learning_rate=0.005, batch_size=16, epochs=epochs, patience=patience, seed=0
        )
        calls = {"n": 0}
        from freqrec.evaluation import RankedResult

        def scripted(params_, cfg_, pairs_, batch_size=512):
            # rank 1 -> ndcg 1.0; rank 1000 -> ndcg 0; mix to hit the target
            target = metrics[min(calls["n"], len(metrics) - 1)]
            calls["n"] += 1
            n = 100
            top = int(round(target * n))
            return [RankedResult("u", 0, 1 if i < top else 1000) for i in range(n)]

        monkeypatch.setattr(T, "evaluate_pairs", scripted)
        return trainer.fit(params, valid)

    def test_strictly_improving_runs_all_epochs(self, monkeypatch):
        result = self._fit_with_scripted_metric(
            monkeypatch, [i / 100 for i in range(1, 11)], patience=0, epochs=8
        )
        assert len(result.history) == 8
        assert result.best_epoch == 7

    def test_patience_zero_stops_after_first_non_improvement(self, monkeypatch):
        result = self._fit_with_scripted_metric(
            monkeypatch, [0.5, 0.4, 0.9, 0.9], patience=0, epochs=10
        )
        assert len(result.history) == 2
        assert result.best_epoch == 0

    def test_patience_tolerates_plateau(self, monkeypatch):
        result = self._fit_with_scripted_metric(
            monkeypatch, [0.5, 0.4, 0.6, 0.3, 0.3, 0.3], patience=2, epochs=10
        )
        # epochs 3,4,5 are the third consecutive non-improvement after epoch 2
        assert len(result.history) == 6
        assert result.best_epoch == 2

    def test_history_matches_epochs_run(self, monkeypatch):
        result = self._fit_with_scripted_metric(
            monkeypatch, [0.2, 0.1, 0.1], patience=1, epochs=10
        )
        assert len(result.history) == 3

    def test_best_checkpoint_is_kept(self):
        corpus, freq, stats, valid = self._context()
        trainer, params = make_trainer(
            corpus, freq, stats, cl_weight=0.0, gamma=0.0, beta=0.0, epochs=3
        )
        result = trainer.fit(params, valid)
        assert result.best_epoch >= 0
        assert len(result.history) <= 3
        assert all("valid_ndcg10" in h for h in result.history)
        assert isinstance(result.best_params, M.ModelParams)


class TestTrainerValidation:
    def test_contrastive_requires_augmentation(self):
        corpus, freq, stats = build_context(num_users=10)
        with pytest.raises(ValueError):
            Trainer(
                train=corpus,
                freq=freq,
                stats=stats,
                item_index={i: i for i in sorted(corpus.vocabulary)},
                model_cfg=M.ModelConfig(embed_dim=8, num_heads=2, max_len=16),
                train_cfg=TrainConfig(batch_size=4, epochs=1),
                loss_cfg=LossConfig(cl_weight=0.5),
            )

    def test_batch_size_one_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
