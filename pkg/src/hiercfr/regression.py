"""Replay buffers and the tabular regressors fitted over them.

Rollout records accumulate in per-player buffers: regret estimates for the
player who was traversing, strategy snapshots for the one who was not. A
regressor fitted to a buffer minimizes the squared error against the stored
target vectors independently per key, and for a table that minimizer is in
closed form: the per-key arithmetic mean. Predictions at unseen keys fall back
to zeros for regrets (matching to uniform) and to uniform for strategies.

The means equal the true cumulative regrets only up to a positive per-key
factor (visit frequencies replace exact reach weights), but regret matching is
scale-free per key, so the induced strategies are unaffected — which is the
whole reason mean-fitting is sound here.

Buffers are unbounded by default. With a capacity set they keep a uniform
reservoir sample of everything appended, at the cost of making "refit from
scratch" the only valid fitting mode (evictions break incremental updates).
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Iterable

from .sampling import RolloutRecord
from .strategy import StrategyProfile, regret_match, uniform


def _seeded(seed: int, tag: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class ReservoirBuffer:
    """Append-only list; with a capacity, a uniform sample of the stream.

    Classic single-pass replacement: item n stays with probability
    capacity/n, evicting a uniformly chosen resident. Without a capacity every
    item is kept in append order.
    """

    def __init__(self, capacity: int | None = None, rng: random.Random | None = None):
        if capacity is not None and capacity <= 0:
            raise ValueError("reservoir capacity must be positive")
        self.capacity = capacity
        self.items: list = []
        self.n_seen = 0
        self._rng = rng if rng is not None else random.Random(0)

    def append(self, item):
        self.n_seen += 1
        if self.capacity is None or len(self.items) < self.capacity:
            self.items.append(item)
            return
        j = self._rng.randrange(self.n_seen)
        if j < self.capacity:
            self.items[j] = item

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


class RegretBuffer:
    """Sampled regret targets for one player: (key, t, vec) and (key, z, t, vec)."""

    def __init__(self, capacity: int | None = None, seed: int = 0):
        self.high = ReservoirBuffer(capacity, _seeded(seed, "regret-high"))
        self.low = ReservoirBuffer(capacity, _seeded(seed, "regret-low"))

    def add_high(self, key: str, t: int, vec: list[float]):
        self.high.append((key, t, list(vec)))

    def add_low(self, key: str, z: int, t: int, vec: list[float]):
        self.low.append((key, z, t, list(vec)))

    def ingest(self, record: RolloutRecord):
        for key, t, vec in record.regret_high:
            self.add_high(key, t, vec)
        for key, z, t, vec in record.regret_low:
            self.add_low(key, z, t, vec)

    def __len__(self) -> int:
        return len(self.high) + len(self.low)


class StrategyBuffer:
    """Strategy snapshots for one player, recorded while the other traversed."""

    def __init__(self, capacity: int | None = None, seed: int = 0):
        self.high = ReservoirBuffer(capacity, _seeded(seed, "strategy-high"))
        self.low = ReservoirBuffer(capacity, _seeded(seed, "strategy-low"))

    @staticmethod
    def _check(dist: Iterable[float]) -> list[float]:
        dist = list(dist)
        if abs(sum(dist) - 1.0) > 1e-6 or min(dist) < -1e-12:
            raise ValueError(f"not a distribution: {dist}")
        return dist

    def add_high(self, key: str, t: int, dist: Iterable[float]):
        self.high.append((key, t, self._check(dist)))

    def add_low(self, key: str, z: int, t: int, dist: Iterable[float]):
        self.low.append((key, z, t, self._check(dist)))

    def ingest(self, record: RolloutRecord):
        for key, t, dist in record.strategy_high:
            self.add_high(key, t, dist)
        for key, z, t, dist in record.strategy_low:
            self.add_low(key, z, t, dist)

    def __len__(self) -> int:
        return len(self.high) + len(self.low)


class TabularRegressor:
    """Per-key running mean of target vectors — the squared-loss minimizer.

    Incrementally adding entries and refitting from scratch over the same
    entry sequence produce bit-identical tables, which is what lets the
    training loop keep means up to date instead of replaying its unbounded
    buffers every iteration.
    """

    def __init__(self, default: str = "zeros"):
        if default not in ("zeros", "uniform"):
            raise ValueError(f"unknown default mode {default!r}")
        self.default = default
        self.mean: dict = {}
        self.count: dict = {}

    def add(self, key, vec: Iterable[float]):
        vec = list(vec)
        cur = self.mean.get(key)
        if cur is None:
            self.mean[key] = vec
            self.count[key] = 1
            return
        if len(cur) != len(vec):
            raise ValueError(f"target length changed at key {key!r}")
        n = self.count[key] + 1
        self.count[key] = n
        for idx, x in enumerate(vec):
            cur[idx] += (x - cur[idx]) / n

    def fit(self, entries: Iterable[tuple]):
        self.mean.clear()
        self.count.clear()
        for key, vec in entries:
            self.add(key, vec)
        return self

    def predict(self, key, n: int) -> list[float]:
        vec = self.mean.get(key)
        if vec is not None:
            return list(vec)
        return [0.0] * n if self.default == "zeros" else uniform(n)


@dataclass
class RegretModel:
    """High and low regret regressors for one player."""

    high: TabularRegressor
    low: TabularRegressor


def new_regret_model() -> RegretModel:
    return RegretModel(TabularRegressor("zeros"), TabularRegressor("zeros"))


def fit_regret(buffer: RegretBuffer) -> RegretModel:
    """From-scratch fit over everything the buffer currently holds."""
    model = new_regret_model()
    model.high.fit((key, vec) for key, _t, vec in buffer.high)
    model.low.fit(((key, z), vec) for key, z, _t, vec in buffer.low)
    return model


def model_update(model: RegretModel, record: RolloutRecord):
    """Fold one rollout's regret entries into the running means."""
    for key, _t, vec in record.regret_high:
        model.high.add(key, vec)
    for key, z, _t, vec in record.regret_low:
        model.low.add((key, z), vec)


def profile_from_model(model: RegretModel, mode: str = "uniform") -> StrategyProfile:
    """Regret-match the fitted means; unseen keys stay lazily uniform."""
    profile = StrategyProfile()
    for key, vec in model.high.mean.items():
        profile.high[key] = regret_match(vec, mode)
    for (key, z), vec in model.low.mean.items():
        profile.low.setdefault(key, {})[z] = regret_match(vec, mode)
    return profile


def strategy_profile_from_means(high_items: Iterable[tuple],
                                low_items: Iterable[tuple]) -> StrategyProfile:
    """Renormalize mean distributions (guards float drift) into a profile.

    Takes (key, mean_vec) pairs for the high head and ((key, z), mean_vec)
    pairs for the low head.
    """
    profile = StrategyProfile()
    for key, vec in high_items:
        s = sum(vec)
        profile.high[key] = [x / s for x in vec] if s > 0 else uniform(len(vec))
    for (key, z), vec in low_items:
        s = sum(vec)
        profile.low.setdefault(key, {})[z] = (
            [x / s for x in vec] if s > 0 else uniform(len(vec)))
    return profile


def fit_avg_strategy(buffer: StrategyBuffer) -> StrategyProfile:
    """Per-key mean of the stored distributions, renormalized against drift.

    Visit frequencies supply the reach weights: a key is recorded once per
    trajectory that passes it, so keys the player actually reaches more often
    contribute proportionally more snapshots.
    """
    high = TabularRegressor("uniform").fit(
        (key, dist) for key, _t, dist in buffer.high)
    low = TabularRegressor("uniform").fit(
        ((key, z), dist) for key, z, _t, dist in buffer.low)
    return strategy_profile_from_means(high.mean.items(), low.mean.items())
