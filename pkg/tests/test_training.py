import csv
import logging
from dataclasses import replace

import pytest
import torch

from conftest import gradient_pair, tiny_config
from firegan import training as T
from firegan.metrics import MetricParams


def pairs(n, size=16, split="train"):
    return [gradient_pair(k, size, split) for k in range(n)]


def params_equal(a, b):
    return all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


class TestSchedule:
    def test_ten_steps_five_d_updates(self):
        cfg = tiny_config(batch_size=2)
        state = T.init_state(cfg)
        reports = []
        for i in range(10):
            state, r = T.train_step(state, pairs(2), cfg)
            reports.append(r)
        assert state.d_updates == 5 and state.step == 10
        assert [r.d1_total is not None for r in reports] == [True, False] * 5

    def test_period_one(self):
        cfg = tiny_config(batch_size=2, d_update_period=1)
        state = T.init_state(cfg)
        for _ in range(4):
            state, _ = T.train_step(state, pairs(2), cfg)
        assert state.d_updates == 4

    def test_generators_update_every_step(self):
        cfg = tiny_config(batch_size=2)
        state = T.init_state(cfg)
        before = [p.clone() for p in state.g2.parameters()]
        d_before = [p.clone() for p in state.d1.parameters()]
        T.train_step(state, pairs(2), cfg)  # step 0: D updates
        T.train_step(state, pairs(2), cfg)
        assert not all(torch.equal(a, b) for a, b in zip(before, state.g2.parameters()))
        assert not all(torch.equal(a, b) for a, b in zip(d_before, state.d1.parameters()))

    def test_skipped_step_leaves_discriminators(self):
        cfg = tiny_config(batch_size=2)
        state = T.init_state(cfg)
        state, _ = T.train_step(state, pairs(2), cfg)
        snap = {k: v.clone() for k, v in state.d1.state_dict().items()}
        state, _ = T.train_step(state, pairs(2), cfg)
        assert all(torch.equal(snap[k], v) for k, v in state.d1.state_dict().items())


class TestOptimizers:
    def test_ttur_rates(self):
        state = T.init_state(tiny_config())
        lr = {k: o.param_groups[0]["lr"] for k, o in state.optimizers.items()}
        assert lr == {"g1": 5e-5, "g2": 5e-5, "d1": 1e-4, "d2": 1e-4}
        assert state.optimizers["g1"].param_groups[0]["betas"] == (0.5, 0.999)

    def test_equal_rates_warn(self, caplog):
        with caplog.at_level(logging.WARNING):
            T.init_state(tiny_config(lr_discriminators=5e-5))
        assert "TTUR disabled" in caplog.text

    def test_negative_rate(self):
        with pytest.raises(ValueError, match="lr_generators must be positive"):
            tiny_config(lr_generators=-1e-4)

    def test_defaults(self):
        cfg = T.TrainingConfig()
        assert (cfg.batch_size, cfg.epochs, cfg.lr_generators, cfg.lr_discriminators, cfg.d_update_period) == (
            4, 40, 5e-5, 1e-4, 2,
        )

    def test_transfer_defaults(self):
        cfg = T.transfer_config()
        assert cfg.epochs == 3 and cfg.weights.gamma == 4.5
        assert cfg.batch_size == 4 and cfg.lr_generators == 5e-5 and cfg.lr_discriminators == 1e-4

    def test_transfer_overrides(self):
        cfg = T.transfer_config(tiny_config(), epochs=5, gamma=2.0)
        assert cfg.epochs == 5 and cfg.weights.gamma == 2.0 and cfg.g1.base_filters == 8


class TestFit:
    def test_step_count(self, tmp_path):
        cfg = tiny_config(epochs=2)
        state = T.fit(pairs(8), [], cfg, out_dir=tmp_path)
        assert state.step == 4 and state.epoch == 2
        rows = list(csv.DictReader(open(tmp_path / "losses.csv")))
        assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]
        assert rows[1]["d1_total"] == "" and rows[2]["d1_total"] != ""
        assert (tmp_path / "checkpoints" / "final" / "state.json").exists()

    def test_deterministic(self):
        cfg = tiny_config(epochs=5)
        a = T.fit(pairs(4), [], cfg, max_steps=5)
        b = T.fit(pairs(4), [], cfg, max_steps=5)
        for name in ("g1", "g2", "d1", "d2"):
            assert params_equal(getattr(a, name), getattr(b, name)), name

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = tiny_config(epochs=3, checkpoint_every=2)
        data = pairs(8)
        full = T.fit(data, [], cfg, out_dir=tmp_path / "full")
        T.fit(data, [], cfg, out_dir=tmp_path / "part", max_steps=4)
        resumed = T.fit(data, [], replace(cfg, resume_from=str(tmp_path / "part" / "checkpoints" / "step_0000004")),
                        out_dir=tmp_path / "rest")
        assert resumed.step == full.step == 6
        for name in ("g1", "g2", "d1", "d2"):
            assert params_equal(getattr(full, name), getattr(resumed, name)), name
        rest = list(csv.DictReader(open(tmp_path / "rest" / "losses.csv")))
        assert [int(r["step"]) for r in rest] == [4, 5]

    def test_validation_metrics_logged(self, tmp_path):
        cfg = tiny_config(epochs=1)
        T.fit(pairs(4), pairs(2, split="val"), cfg, out_dir=tmp_path, metric_params=MetricParams(ssim_window=7))
        rows = list(csv.DictReader(open(tmp_path / "val_metrics.csv")))
        assert len(rows) == 1 and float(rows[0]["genir_ssim"]) <= 1.0

    def test_too_few_pairs(self):
        with pytest.raises(ValueError, match="smaller than batch_size"):
            T.fit(pairs(3), [], tiny_config())

    def test_lineage(self):
        cfg = tiny_config(batch_size=2)
        state = T.init_state(cfg)
        with pytest.raises(T.LineageError):
            T.train_step(state, [gradient_pair(0, 16), gradient_pair(1, 16, "val")], cfg)

    def test_non_finite_aborts(self):
        cfg = tiny_config(batch_size=2)
        state = T.init_state(cfg)
        with torch.no_grad():
            next(state.g1.parameters()).fill_(float("nan"))
        with pytest.raises(T.TrainingAborted, match="g1_total"):
            T.train_step(state, pairs(2), cfg)


class TestCheckpoint:
    def test_probe_bit_exact(self, tmp_path):
        cfg = tiny_config(batch_size=2)
        state = T.init_state(cfg)
        for _ in range(3):
            state, _ = T.train_step(state, pairs(2), cfg)
        T.save_state(state, tmp_path / "ck", cfg)
        back = T.load_state(tmp_path / "ck")
        probe = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(0)) * 2 - 1
        a, b = T.probe_forward(state, probe), T.probe_forward(back, probe)
        assert all(torch.equal(a[k], b[k]) for k in a)
        assert (back.step, back.d_updates) == (3, 2)

    def test_optimizer_state_restored(self, tmp_path):
        cfg = tiny_config(batch_size=2)
        state = T.init_state(cfg)
        state, _ = T.train_step(state, pairs(2), cfg)
        T.save_state(state, tmp_path / "ck", cfg)
        back = T.load_state(tmp_path / "ck")
        for name, opt in state.optimizers.items():
            sa, sb = opt.state_dict()["state"], back.optimizers[name].state_dict()["state"]
            assert sa.keys() == sb.keys()
            for i in sa:
                assert all(torch.equal(sa[i][k], sb[i][k]) for k in sa[i])

    def test_config_round_trip(self):
        cfg = tiny_config(seed=3)
        assert T.config_from_dict(T.config_to_dict(cfg)) == cfg

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            T.load_state(tmp_path / "nothing")


def test_transfer_learn_fresh_counters(tmp_path):
    cfg = tiny_config(batch_size=2)
    state = T.init_state(cfg)
    for _ in range(3):
        state, _ = T.train_step(state, pairs(2), cfg)
    out = T.transfer_learn(state, pairs(4), T.transfer_config(cfg, epochs=1), out_dir=tmp_path)
    assert out.step == 2 and out.d_updates == 1
    assert out.g1 is state.g1
