"""Training-loop tests: validation, determinism, sharding, tiers, skill
freezing, and checkpoint resume."""

import math
import statistics

import pytest

from hiercfr.evaluation import exploitability
from hiercfr.games import kuhn_config, leduc_config
from hiercfr.sampling import RolloutRecord
from hiercfr.strategy import StrategyProfile, dumps_strategy
from hiercfr.trainer import (
    TRAINER_METRIC_COLUMNS,
    Trainer,
    TrainerConfig,
    freeze_skills,
    load_checkpoint,
    run_hdcfr,
    save_checkpoint,
)

from os_cfr import outcome_sampling_cfr

KUHN2 = kuhn_config(num_options=2)


def make_config(**overrides):
    base = dict(cfg=KUHN2, iterations=3, traversals=8, seed=7)
    base.update(overrides)
    return TrainerConfig(**base)


def final_bytes(trainer):
    profile = trainer.average_profile()
    return dumps_strategy(profile, trainer.config.cfg, trainer.t,
                          trainer.config.seed).encode()


class TestConfigValidation:
    def test_rejects_nonpositive_sizes(self):
        with pytest.raises(ValueError):
            make_config(iterations=0)
        with pytest.raises(ValueError):
            make_config(traversals=0)
        with pytest.raises(ValueError):
            make_config(iterations=-5)

    def test_rejects_bad_knobs(self):
        with pytest.raises(ValueError):
            make_config(epsilon=1.5)
        with pytest.raises(ValueError):
            make_config(tier="neural")
        with pytest.raises(ValueError):
            make_config(baseline="oracle")
        with pytest.raises(ValueError):
            make_config(match_mode="softmax")
        with pytest.raises(ValueError):
            make_config(threads=0)
        with pytest.raises(ValueError):
            make_config(eval_every=0)

    def test_reservoir_rules(self):
        with pytest.raises(ValueError):
            make_config(reservoir_capacity=0)
        with pytest.raises(ValueError):
            make_config(tier="mc", reservoir_capacity=100)
        make_config(reservoir_capacity=100)  # hdcfr: fine


class TestSmoke:
    def test_single_iteration_populates_all_stores(self):
        trainer = Trainer(make_config(iterations=1, traversals=1))
        trainer.run()
        assert trainer.t == 1
        for i in (1, 2):
            assert trainer.models[i].high.count, i
            assert trainer.models[i].low.count, i
            assert trainer.avg_high[i].count, i
            assert trainer.avg_low[i].count, i
        # Baseline refit consumed the single traverser-1 trajectory.
        assert trainer.baseline_store.iteration == 1
        assert len(trainer.baseline_store) >= 1
        assert len(trainer.variances) == 1 and trainer.variances[0] >= 0.0

    def test_bit_reproducible(self):
        runs = [Trainer(make_config(iterations=4)) for _ in range(2)]
        for tr in runs:
            tr.run()
        assert final_bytes(runs[0]) == final_bytes(runs[1])
        assert runs[0].variances == runs[1].variances
        assert runs[0].baseline_store.mean == runs[1].baseline_store.mean

    def test_seed_changes_results(self):
        a = Trainer(make_config(iterations=4, seed=1))
        b = Trainer(make_config(iterations=4, seed=2))
        a.run()
        b.run()
        assert a.average_profile().high != b.average_profile().high

    def test_run_hdcfr_entry_point(self):
        profile, metrics = run_hdcfr(make_config(iterations=2))
        assert isinstance(profile, StrategyProfile)
        assert metrics[-1]["iteration"] == 2

    def test_eval_cadence(self):
        _, metrics = run_hdcfr(make_config(iterations=5, eval_every=2))
        assert [row["iteration"] for row in metrics] == [2, 4, 5]
        for row in metrics:
            assert set(row) == set(TRAINER_METRIC_COLUMNS)
            assert row["exploitability_mbbg"] is not None
            assert row["regret_entries"] > 0
            assert row["strategy_entries"] > 0

    def test_final_always_evaluated_without_cadence(self):
        _, metrics = run_hdcfr(make_config(iterations=5))
        assert [row["iteration"] for row in metrics] == [5]

    def test_zero_baseline_mode_keeps_store_empty(self):
        trainer = Trainer(make_config(baseline="zero"))
        trainer.run()
        assert len(trainer.baseline_store) == 0
        assert trainer.baseline_store.iteration == 0


class TestSharding:
    def test_threads_match_serial_run(self):
        serial = Trainer(make_config(iterations=3, traversals=10, threads=1))
        threaded = Trainer(make_config(iterations=3, traversals=10, threads=3))
        serial.run()
        threaded.run()
        assert final_bytes(serial) == final_bytes(threaded)
        for i in (1, 2):
            assert serial.models[i].high.mean == threaded.models[i].high.mean
            assert serial.models[i].low.mean == threaded.models[i].low.mean
        assert serial.variances == threaded.variances

    def test_more_threads_than_traversals(self):
        trainer = Trainer(make_config(iterations=1, traversals=2, threads=8))
        trainer.run()
        assert trainer.t == 1


class TestProvenance:
    def test_misrouted_snapshot_rejected(self):
        trainer = Trainer(make_config())
        rec = RolloutRecord()
        rec.strategy_high.append(("p1|0|||z-", 1, [1.0, 0.0]))
        with pytest.raises(RuntimeError):
            trainer._ingest(1, rec)  # traverser 1's turn records p2 snapshots

    def test_strategy_keys_owned_by_non_traverser(self):
        trainer = Trainer(make_config(iterations=2))
        trainer.run()
        assert all(k.startswith("p1|") for k in trainer.avg_high[1].mean)
        assert all(k.startswith("p2|") for k in trainer.avg_high[2].mean)


class TestReservoir:
    def test_bounded_buffers_and_running(self):
        trainer = Trainer(make_config(iterations=6, traversals=10,
                                      reservoir_capacity=20))
        profile, metrics = trainer.run()
        for i in (1, 2):
            assert len(trainer.buffers[i].high) <= 20
            assert len(trainer.buffers[i].low) <= 20
            assert trainer.buffers[i].high.n_seen > 20
            assert trainer.models[i].high.count  # refit each iteration
        assert metrics[-1]["exploitability_mbbg"] is not None

    def test_reservoir_checkpoint_cannot_resume(self, tmp_path):
        trainer = Trainer(make_config(reservoir_capacity=20))
        trainer.run()
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(trainer, path)
        with pytest.raises(ValueError, match="reservoir"):
            load_checkpoint(path)


class TestCheckpoint:
    def test_resume_is_bit_identical(self, tmp_path):
        straight = Trainer(make_config(iterations=6, traversals=6, seed=11))
        straight.run()

        partial = Trainer(make_config(iterations=3, traversals=6, seed=11))
        partial.run()
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(partial, path)
        resumed = load_checkpoint(path, iterations=6)
        assert resumed.t == 3
        resumed.run()

        assert final_bytes(straight) == final_bytes(resumed)
        assert straight.variances == resumed.variances
        assert straight.baseline_store.mean == resumed.baseline_store.mean
        assert straight.baseline_store.iteration == resumed.baseline_store.iteration
        for i in (1, 2):
            assert straight.models[i].high.mean == resumed.models[i].high.mean
            assert straight.models[i].low.mean == resumed.models[i].low.mean
            assert straight.avg_high[i].count == resumed.avg_high[i].count

    def test_mc_tier_checkpoint_roundtrip(self, tmp_path):
        straight = Trainer(make_config(iterations=4, tier="mc", seed=3))
        straight.run()
        partial = Trainer(make_config(iterations=2, tier="mc", seed=3))
        partial.run()
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(partial, path)
        resumed = load_checkpoint(path, iterations=4)
        resumed.run()
        assert final_bytes(straight) == final_bytes(resumed)
        assert straight.mc_store.high == resumed.mc_store.high
        assert straight.mc_store.low == resumed.mc_store.low

    def test_rejects_bad_files(self, tmp_path):
        junk = tmp_path / "junk.bin"
        junk.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(junk)

        trainer = Trainer(make_config(iterations=2))
        trainer.run()
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(trainer, path)
        raw = bytearray(path.read_bytes())
        raw[8:12] = (99).to_bytes(4, "little")
        bad = tmp_path / "bad_version.bin"
        bad.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(bad)

    def test_rejects_target_before_checkpoint(self, tmp_path):
        trainer = Trainer(make_config(iterations=4))
        trainer.run()
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(trainer, path)
        with pytest.raises(ValueError, match="past the target"):
            load_checkpoint(path, iterations=2)


class TestFreezeSkills:
    def source_profile(self):
        profile, _ = run_hdcfr(make_config(iterations=40, traversals=24, seed=5))
        return profile

    def test_frozen_tables_pinned_verbatim(self):
        source = self.source_profile()
        trainer = Trainer(make_config(iterations=15, traversals=16, seed=9))
        assert freeze_skills(source, trainer) is trainer
        snapshot = {k: {z: list(d) for z, d in v.items()}
                    for k, v in trainer.frozen_low.items()}
        profile, _ = trainer.run()
        assert trainer.frozen_low == snapshot
        assert profile.low == snapshot
        # Low-level records were neither written nor fit anywhere.
        for i in (1, 2):
            assert trainer.models[i].low.count == {}
            assert trainer.avg_low[i].count == {}
            assert trainer.models[i].high.count  # high level still trains

    def test_incompatible_action_sets_rejected(self):
        source = self.source_profile()
        target = Trainer(TrainerConfig(cfg=leduc_config(num_options=2),
                                       iterations=2, traversals=4))
        with pytest.raises(ValueError, match="actions"):
            freeze_skills(source, target)

    def test_option_outside_game_rejected(self):
        source = StrategyProfile()
        source.set_low("p1|0|||z-", 5, [0.5, 0.5])
        with pytest.raises(ValueError, match="option"):
            freeze_skills(source, Trainer(make_config()))

    def test_no_mappable_keys_rejected(self):
        source = StrategyProfile()
        source.set_low("p1|bogus|key||z-", 0, [1.0])
        with pytest.raises(ValueError, match="no source skill tables"):
            freeze_skills(source, Trainer(make_config()))


class TestDegenerateOptions:
    """Single-option games collapse onto plain outcome-sampling CFR."""

    CFG = kuhn_config(num_options=1)

    def test_high_level_regret_estimates_vanish(self):
        trainer = Trainer(TrainerConfig(cfg=self.CFG, iterations=15,
                                        traversals=8, seed=2))
        trainer.run()
        seen = 0
        for i in (1, 2):
            for vec in trainer.models[i].high.mean.values():
                seen += 1
                assert vec == [0.0]
        assert seen > 0

    def test_tiers_track_plain_os_cfr_reference(self):
        # Matched sample budgets, no baseline, five seeds per solver: final
        # exploitability confidence bands must pairwise overlap.
        T, K, seeds = 300, 32, range(5)

        def band(xs):
            m = statistics.mean(xs)
            half = 1.96 * statistics.stdev(xs) / math.sqrt(len(xs))
            return m - half, m + half

        finals = {}
        for tier in ("hdcfr", "mc"):
            vals = []
            for s in seeds:
                _, metrics = run_hdcfr(TrainerConfig(
                    cfg=self.CFG, iterations=T, traversals=K, seed=s,
                    tier=tier, baseline="zero"))
                vals.append(metrics[-1]["exploitability_mbbg"])
            finals[tier] = vals
        finals["reference"] = [
            exploitability(outcome_sampling_cfr(self.CFG, T, K, 1.0, s), self.CFG)
            for s in seeds]

        uniform_gap = exploitability(StrategyProfile(), self.CFG)
        names = list(finals)
        for name in names:
            assert statistics.mean(finals[name]) < 0.5 * uniform_gap, (
                name, finals[name])
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                lo_a, hi_a = band(finals[a])
                lo_b, hi_b = band(finals[b])
                assert lo_a <= hi_b and lo_b <= hi_a, (a, finals[a], b, finals[b])
