"""Buffer and regressor layer: closed-form fits checked against a grid-search
oracle, reservoir behavior, scale invariance of the induced strategies, and
the sampled average-strategy pipeline against exact tree computations."""

import random

import pytest

from hiercfr import tabular
from hiercfr.games import kuhn_config
from hiercfr.regression import (
    RegretBuffer,
    ReservoirBuffer,
    StrategyBuffer,
    TabularRegressor,
    fit_avg_strategy,
    fit_regret,
    model_update,
    new_regret_model,
    profile_from_model,
)
from hiercfr.sampling import RolloutRecord, ZeroBaseline, collect_traversals
from hiercfr.strategy import AvgStrategyAccumulator, normalized_average, regret_match, uniform
from hiercfr.tabular import GameTree

from support import random_hier_profile


def grid_minimize(loss, lo=-10.0, hi=10.0, rounds=6, points=201):
    """Nested-refinement grid search over a convex scalar loss."""
    best = lo
    for _ in range(rounds):
        step = (hi - lo) / (points - 1)
        best = min((lo + step * i for i in range(points)), key=loss)
        lo, hi = best - step, best + step
    return best


class TestReservoir:
    def test_rejects_bad_capacity(self):
        for cap in (0, -3):
            with pytest.raises(ValueError):
                ReservoirBuffer(cap)

    def test_unbounded_keeps_everything_in_order(self):
        buf = ReservoirBuffer()
        items = list(range(100))
        for x in items:
            buf.append(x)
        assert list(buf) == items
        assert buf.n_seen == 100

    def test_capacity_bounds_contents(self):
        buf = ReservoirBuffer(10, random.Random(7))
        for x in range(500):
            buf.append(x)
        assert len(buf) == 10
        assert buf.n_seen == 500
        assert set(buf) <= set(range(500))

    def test_short_stream_fully_kept(self):
        buf = ReservoirBuffer(10, random.Random(1))
        for x in range(10):
            buf.append(x)
        assert list(buf) == list(range(10))

    def test_deterministic_given_rng(self):
        def run(seed):
            buf = ReservoirBuffer(5, random.Random(seed))
            for x in range(200):
                buf.append(x)
            return list(buf)

        assert run(3) == run(3)
        assert run(3) != run(4)

    def test_each_item_retained_uniformly(self):
        # With capacity 2 over a 4-item stream every item should survive with
        # probability 1/2; check empirical frequencies across many buffers.
        counts = {x: 0 for x in range(4)}
        trials = 4000
        for s in range(trials):
            buf = ReservoirBuffer(2, random.Random(s))
            for x in range(4):
                buf.append(x)
            for x in buf:
                counts[x] += 1
        for x, c in counts.items():
            assert abs(c / trials - 0.5) < 0.05, (x, c / trials)


class TestBuffers:
    def make_record(self):
        rec = RolloutRecord()
        rec.regret_high.append(("p1|K||--|z-", 1, [0.5, -0.5]))
        rec.regret_low.append(("p1|K||--|z-", 0, 1, [1.0, 2.0]))
        rec.strategy_high.append(("p2|Q||c|z-", 1, [0.25, 0.75]))
        rec.strategy_low.append(("p2|Q||c|z-", 1, 1, [0.4, 0.6]))
        return rec

    def test_regret_ingest_copies_entries(self):
        rec = self.make_record()
        buf = RegretBuffer()
        buf.ingest(rec)
        assert list(buf.high) == [("p1|K||--|z-", 1, [0.5, -0.5])]
        assert list(buf.low) == [("p1|K||--|z-", 0, 1, [1.0, 2.0])]
        assert len(buf) == 2
        rec.regret_high[0][2][0] = 99.0
        assert list(buf.high)[0][2] == [0.5, -0.5]

    def test_strategy_ingest_and_len(self):
        buf = StrategyBuffer()
        buf.ingest(self.make_record())
        assert list(buf.high) == [("p2|Q||c|z-", 1, [0.25, 0.75])]
        assert list(buf.low) == [("p2|Q||c|z-", 1, 1, [0.4, 0.6])]
        assert len(buf) == 2

    def test_strategy_buffer_rejects_non_distributions(self):
        buf = StrategyBuffer()
        with pytest.raises(ValueError):
            buf.add_high("k", 1, [0.5, 0.6])
        with pytest.raises(ValueError):
            buf.add_low("k", 0, 1, [1.1, -0.1])
        buf.add_high("k", 1, [1.0, 0.0])
        assert len(buf) == 1

    def test_reservoir_capacity_applies(self):
        buf = RegretBuffer(capacity=3, seed=0)
        for n in range(50):
            buf.add_high("k", 1, [float(n)])
        assert len(buf.high) == 3
        assert buf.high.n_seen == 50


class TestTabularRegressor:
    def test_single_entry_is_its_own_minimizer(self):
        reg = TabularRegressor()
        reg.add("k", [1.0, -2.0])
        assert reg.predict("k", 2) == [1.0, -2.0]

    def test_two_entry_mean(self):
        reg = TabularRegressor()
        reg.add("k", [2.0, 0.0])
        reg.add("k", [4.0, 0.0])
        assert reg.predict("k", 2) == [3.0, 0.0]

    def test_unseen_key_defaults(self):
        assert TabularRegressor("zeros").predict("missing", 3) == [0.0] * 3
        assert TabularRegressor("uniform").predict("missing", 3) == uniform(3)

    def test_rejects_unknown_default(self):
        with pytest.raises(ValueError):
            TabularRegressor("ones")

    def test_rejects_length_change(self):
        reg = TabularRegressor()
        reg.add("k", [1.0, 2.0])
        with pytest.raises(ValueError):
            reg.add("k", [1.0, 2.0, 3.0])

    def test_predict_returns_a_copy(self):
        reg = TabularRegressor()
        reg.add("k", [1.0])
        reg.predict("k", 1)[0] = 50.0
        assert reg.predict("k", 1) == [1.0]

    def test_incremental_add_matches_fit_exactly(self):
        rng = random.Random(11)
        entries = [(f"k{rng.randrange(10)}", [rng.uniform(-3, 3) for _ in range(3)])
                   for _ in range(200)]
        incremental = TabularRegressor()
        for key, vec in entries:
            incremental.add(key, vec)
        refit = TabularRegressor().fit(entries)
        assert incremental.mean == refit.mean
        assert incremental.count == refit.count

    def test_mean_is_order_insensitive(self):
        rng = random.Random(5)
        entries = [("k", [rng.uniform(-1, 1)]) for _ in range(60)]
        a = TabularRegressor().fit(entries)
        shuffled = list(entries)
        rng.shuffle(shuffled)
        b = TabularRegressor().fit(shuffled)
        assert a.predict("k", 1)[0] == pytest.approx(b.predict("k", 1)[0], abs=1e-12)

    def test_fit_clears_previous_state(self):
        reg = TabularRegressor()
        reg.add("old", [9.0])
        reg.fit([("new", [1.0])])
        assert reg.predict("old", 1) == [0.0]
        assert reg.predict("new", 1) == [1.0]


class TestGridOracle:
    def test_fit_matches_grid_minimizer_two_entries(self):
        buf = RegretBuffer()
        buf.add_high("k", 1, [2.0, -1.0])
        buf.add_high("k", 2, [4.0, 0.5])
        fitted = fit_regret(buf).high.predict("k", 2)
        targets = [[2.0, -1.0], [4.0, 0.5]]
        for coord in range(2):
            ys = [t[coord] for t in targets]
            best = grid_minimize(lambda b: sum((b - y) ** 2 for y in ys))
            assert abs(fitted[coord] - best) < 1e-6

    def test_fit_matches_grid_minimizer_random_entries(self):
        rng = random.Random(23)
        buf = RegretBuffer()
        targets = [[rng.uniform(-5, 5) for _ in range(2)] for _ in range(7)]
        for t, vec in enumerate(targets, start=1):
            buf.add_low("k", 1, t, vec)
        fitted = fit_regret(buf).low.predict(("k", 1), 2)
        for coord in range(2):
            ys = [t[coord] for t in targets]
            best = grid_minimize(lambda b: sum((b - y) ** 2 for y in ys))
            assert abs(fitted[coord] - best) < 1e-6


class TestFitRegret:
    def test_mixed_keys_fit_by_level(self):
        buf = RegretBuffer()
        buf.add_high("I", 1, [1.0, 3.0])
        buf.add_high("I", 2, [3.0, 5.0])
        buf.add_low("I", 0, 1, [2.0])
        buf.add_low("I", 1, 1, [-4.0])
        model = fit_regret(buf)
        assert model.high.predict("I", 2) == [2.0, 4.0]
        assert model.low.predict(("I", 0), 1) == [2.0]
        assert model.low.predict(("I", 1), 1) == [-4.0]
        assert model.low.predict(("J", 0), 1) == [0.0]

    def test_empty_buffer_predicts_zero(self):
        model = fit_regret(RegretBuffer())
        assert model.high.predict("any", 3) == [0.0, 0.0, 0.0]

    def test_model_update_matches_refit_bitwise(self):
        rng = random.Random(3)
        buf = RegretBuffer()
        live = new_regret_model()
        for t in range(1, 30):
            rec = RolloutRecord()
            for _ in range(rng.randrange(1, 5)):
                key = f"p1|K||{rng.randrange(3)}|z-"
                rec.regret_high.append(
                    (key, t, [rng.uniform(-2, 2) for _ in range(2)]))
                rec.regret_low.append(
                    (key, rng.randrange(2), t, [rng.uniform(-2, 2) for _ in range(2)]))
            buf.ingest(rec)
            model_update(live, rec)
            refit = fit_regret(buf)
            assert live.high.mean == refit.high.mean
            assert live.low.mean == refit.low.mean
            assert live.high.count == refit.high.count


class TestProfileFromModel:
    def test_scaling_invariance(self):
        # Positive per-key constants cancel in regret matching, which is what
        # makes mean-fitting (frequency-weighted) a sound regret store.
        rng = random.Random(9)
        base = new_regret_model()
        scaled = new_regret_model()
        factors = [0.3, 7.0, 1000.0, 1e-4]
        for idx in range(8):
            key = f"k{idx}"
            vec = [rng.uniform(-4, 4) for _ in range(3)]
            c = factors[idx % len(factors)]
            base.high.add(key, vec)
            scaled.high.add(key, [c * x for x in vec])
            base.low.add((key, 0), vec)
            scaled.low.add((key, 0), [c * x for x in vec])
        p_base = profile_from_model(base)
        p_scaled = profile_from_model(scaled)
        for key, dist in p_base.high.items():
            assert dist == pytest.approx(p_scaled.high[key], abs=1e-12)
        for key, by_z in p_base.low.items():
            for z, dist in by_z.items():
                assert dist == pytest.approx(p_scaled.low[key][z], abs=1e-12)

    def test_all_negative_key_falls_back(self):
        model = new_regret_model()
        model.high.add("k", [-1.0, -2.0])
        assert profile_from_model(model, "uniform").high["k"] == [0.5, 0.5]
        assert profile_from_model(model, "greedy").high["k"] == [1.0, 0.0]

    def test_unseen_keys_stay_lazily_uniform(self):
        profile = profile_from_model(new_regret_model())
        assert profile.high_dist("never-seen", 3) == uniform(3)
        assert profile.low_dist("never-seen", 1, 2) == uniform(2)


class TestFitAvgStrategy:
    def test_mean_of_one_hots(self):
        buf = StrategyBuffer()
        buf.add_high("k", 1, [1.0, 0.0])
        buf.add_high("k", 2, [0.0, 1.0])
        assert fit_avg_strategy(buf).high["k"] == [0.5, 0.5]

    def test_single_visit_reproduced_exactly(self):
        buf = StrategyBuffer()
        buf.add_low("k", 2, 5, [0.1, 0.9])
        assert fit_avg_strategy(buf).low["k"][2] == [0.1, 0.9]

    def test_renormalized_against_drift(self):
        buf = StrategyBuffer()
        buf.add_high("k", 1, [0.3, 0.7 - 5e-7])
        buf.add_high("k", 2, [0.5, 0.5 - 5e-7])
        dist = fit_avg_strategy(buf).high["k"]
        assert abs(sum(dist) - 1.0) < 1e-15
        assert dist[0] == pytest.approx(0.4, abs=1e-6)

    def test_empty_buffer_gives_empty_profile(self):
        profile = fit_avg_strategy(StrategyBuffer())
        assert profile.high == {} and profile.low == {}


# ---------------------------------------------------------------------------
# Integration with sampled rollouts on Kuhn.
# ---------------------------------------------------------------------------


class TestSingleRecordFlag:
    def setup_method(self):
        self.cfg = kuhn_config(num_options=2)
        self.profile = random_hier_profile(self.cfg, seed=31)

    def collect(self, seed, flag, K=1):
        return collect_traversals(self.cfg, self.profile, ZeroBaseline(), K=K,
                                  t=1, traverser=2, epsilon=1.0, seed=seed,
                                  single_strategy_record=flag)

    def test_keeps_exactly_one_matched_pair(self):
        for seed in range(30):
            rec = self.collect(seed, True)
            assert len(rec.strategy_high) == 1
            assert len(rec.strategy_low) == 1
            # The pair comes from the same decision node.
            assert rec.strategy_high[0][0] == rec.strategy_low[0][0]
            full = self.collect(seed, False)
            assert rec.strategy_high[0] in full.strategy_high
            idx = full.strategy_high.index(rec.strategy_high[0])
            assert rec.strategy_low[0] == full.strategy_low[idx]

    def test_default_path_keeps_every_visit(self):
        lengths = {len(self.collect(seed, False).strategy_high)
                   for seed in range(50)}
        assert max(lengths) >= 2  # non-traverser acts twice on some lines

    def test_flag_leaves_regret_records_untouched(self):
        with_flag = self.collect(4, True, K=20)
        without = self.collect(4, False, K=20)
        assert with_flag.regret_high == without.regret_high
        assert with_flag.regret_low == without.regret_low
        assert len(with_flag.strategy_high) == 20
        assert len(without.strategy_high) >= 20


class TestSampledFitsAgainstTree:
    """Statistical checks of the fitted models against exact tree oracles."""

    def setup_method(self):
        self.cfg = kuhn_config(num_options=2)
        self.tree = GameTree(self.cfg)

    def test_avg_strategy_matches_reach_weighted_average(self):
        # Player 1's snapshots are recorded while player 2 traverses; visit
        # frequencies then carry exactly the player's own reach weights, so
        # the per-key mean converges on the reach-weighted exact average.
        profiles = [random_hier_profile(self.cfg, seed=100 + t) for t in range(3)]
        buf = StrategyBuffer()
        acc = AvgStrategyAccumulator()
        for t, prof in enumerate(profiles, start=1):
            buf.ingest(collect_traversals(
                self.cfg, prof, ZeroBaseline(), K=20000, t=t, traverser=2,
                epsilon=1.0, seed=77 + t))
            r1, r2, _ = tabular._reaches(self.tree, prof)
            tabular._accumulate_tree_average(self.tree, prof, acc, r1, r2)
        exact = normalized_average(acc)

        counts = TabularRegressor().fit(
            (key, [1.0]) for key, _t, _d in buf.high).count
        assert counts, "no strategy records collected"
        fitted = fit_avg_strategy(buf)
        worst = 0.0
        compared = 0
        for key, dist in fitted.high.items():
            assert key.startswith("p1|")
            if counts[key] < 100:
                continue
            compared += 1
            for a, x in enumerate(dist):
                worst = max(worst, abs(x - exact.high[key][a]))
        assert compared >= 3
        assert worst < 0.05, worst
        worst_low = max(
            abs(x - exact.low[key][z][a])
            for key, by_z in fitted.low.items() if counts[key] >= 300
            for z, dist in by_z.items()
            for a, x in enumerate(dist))
        assert worst_low < 0.07, worst_low

    def test_regret_matched_fit_tracks_exact_regrets(self):
        # The fitted mean should be a positive per-key multiple of the exact
        # immediate regret, so regret matching the fit reproduces the exact
        # matched distribution. Keys whose exact regrets sit below the
        # sampling noise floor are excluded: regret matching is discontinuous
        # at zero and no finite sample resolves a genuine near-indifference.
        profile = random_hier_profile(self.cfg, seed=55)
        buf = RegretBuffer()
        for traverser in (1, 2):
            buf.ingest(collect_traversals(
                self.cfg, profile, ZeroBaseline(), K=20000, t=1,
                traverser=traverser, epsilon=1.0, seed=40 + traverser))
        model = fit_regret(buf)
        matched = profile_from_model(model)
        high, low = tabular.immediate_regrets(self.tree, profile)

        def check(exact_vec, got, mean, tag):
            want = regret_match(exact_vec)
            err = max(abs(g - w) for g, w in zip(got, want))
            # Least-squares scale of mean against exact must be positive and
            # explain the fit (scaled residual small relative to the signal).
            c = (sum(m * r for m, r in zip(mean, exact_vec))
                 / sum(r * r for r in exact_vec))
            assert c > 0, (tag, c)
            resid = max(abs(m - c * r) for m, r in zip(mean, exact_vec))
            rel = resid / (c * max(abs(r) for r in exact_vec))
            for a, r in enumerate(exact_vec):
                if abs(r) > 0.05:
                    assert mean[a] * r > 0, (tag, a, r, mean[a])
            return err, rel

        worst = worst_rel = 0.0
        compared = 0
        for key, vec in high.items():
            assert matched.high.get(key) is not None, key
            if max(abs(r) for r in vec) < 0.02:
                continue
            err, rel = check(vec, matched.high[key],
                             model.high.predict(key, len(vec)), key)
            worst, worst_rel = max(worst, err), max(worst_rel, rel)
            compared += 1
        for key, by_z in low.items():
            for z, vec in by_z.items():
                assert matched.low.get(key, {}).get(z) is not None, (key, z)
                if max(abs(r) for r in vec) < 0.02:
                    continue
                err, rel = check(vec, matched.low[key][z],
                                 model.low.predict((key, z), len(vec)), (key, z))
                worst, worst_rel = max(worst, err), max(worst_rel, rel)
                compared += 1
        assert compared >= 20
        assert worst < 0.05, worst
        assert worst_rel < 0.3, worst_rel
