"""Regret matching, strategy tables, and average-strategy accumulation.

All three solver tiers share these containers. Keys are infoset strings as
produced by History.info_key(); the acting player is embedded in the key
("p1|..." / "p2|..."), so one flat table serves both players. The high head
maps an infoset to a distribution over options; the low head maps (infoset,
option) to a distribution over that infoset's legal primitive actions.

Stores keep raw cumulative sums. Regret matching only looks at positive parts
and ratios, so any per-key positive scaling (1/T, importance weights that are
constant within a key) leaves the induced strategy unchanged; callers exploit
that instead of renormalizing on every write.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Iterable

from .games import GameConfig


def uniform(n: int) -> list[float]:
    return [1.0 / n] * n


def regret_match(regrets: Iterable[float], mode: str = "uniform") -> list[float]:
    """Distribution proportional to positive regrets.

    With no positive mass the fallback depends on mode: "uniform" spreads
    evenly, "greedy" plays the index with the largest (least negative) regret,
    lowest index on ties.
    """
    r = list(regrets)
    if not r:
        raise ValueError("regret_match needs a non-empty vector")
    if mode not in ("uniform", "greedy"):
        raise ValueError(f"unknown regret matching mode {mode!r}")
    pos = [x if x > 0.0 else 0.0 for x in r]
    total = sum(pos)
    if total > 0.0:
        return [x / total for x in pos]
    if mode == "uniform":
        return uniform(len(r))
    best = max(range(len(r)), key=lambda i: (r[i], -i))
    out = [0.0] * len(r)
    out[best] = 1.0
    return out


class RegretStore:
    """Cumulative high/low regret sums plus the iteration counter.

    Unseen keys read as zeros (and therefore match to uniform). Writers add
    per-iteration regret vectors; nothing here divides by T, since the match
    is scale-free.
    """

    def __init__(self):
        self.high: dict[str, list[float]] = {}
        self.low: dict[str, dict[int, list[float]]] = {}
        self.iterations = 0

    def high_sum(self, key: str, n: int) -> list[float]:
        vec = self.high.get(key)
        return list(vec) if vec is not None else [0.0] * n

    def low_sum(self, key: str, z: int, n: int) -> list[float]:
        vec = self.low.get(key, {}).get(z)
        return list(vec) if vec is not None else [0.0] * n

    def add_high(self, key: str, delta: Iterable[float]):
        delta = list(delta)
        vec = self.high.get(key)
        if vec is None:
            self.high[key] = delta
        else:
            for i, d in enumerate(delta):
                vec[i] += d

    def add_low(self, key: str, z: int, delta: Iterable[float]):
        delta = list(delta)
        per_z = self.low.setdefault(key, {})
        vec = per_z.get(z)
        if vec is None:
            per_z[z] = delta
        else:
            for i, d in enumerate(delta):
                vec[i] += d


class StrategyProfile:
    """Explicit high/low probability tables with lazy uniform fallback."""

    def __init__(self, high=None, low=None):
        self.high: dict[str, list[float]] = high if high is not None else {}
        self.low: dict[str, dict[int, list[float]]] = low if low is not None else {}

    def high_dist(self, key: str, n: int) -> list[float]:
        vec = self.high.get(key)
        return vec if vec is not None else uniform(n)

    def low_dist(self, key: str, z: int, n: int) -> list[float]:
        vec = self.low.get(key, {}).get(z)
        return vec if vec is not None else uniform(n)

    def set_high(self, key: str, dist: list[float]):
        self.high[key] = list(dist)

    def set_low(self, key: str, z: int, dist: list[float]):
        self.low.setdefault(key, {})[z] = list(dist)


def strategy_from_regrets(store: RegretStore, mode: str = "uniform") -> StrategyProfile:
    """Regret-match every stored key; anything unseen stays lazily uniform."""
    profile = StrategyProfile()
    for key, vec in store.high.items():
        profile.high[key] = regret_match(vec, mode)
    for key, per_z in store.low.items():
        out = profile.low.setdefault(key, {})
        for z, vec in per_z.items():
            out[z] = regret_match(vec, mode)
    return profile


class AvgStrategyAccumulator:
    """Reach-weighted numerators and denominators for the average strategy.

    High entries are weighted by the player's own reach of the infoset; low
    entries by that reach times the current high strategy's option
    probability. Merging two accumulators is componentwise addition, so shard
    results can be combined in any order.
    """

    def __init__(self):
        self.high_num: dict[str, list[float]] = {}
        self.high_den: dict[str, float] = {}
        self.low_num: dict[tuple[str, int], list[float]] = {}
        self.low_den: dict[tuple[str, int], float] = {}

    def add_high(self, key: str, reach: float, dist: list[float]):
        num = self.high_num.get(key)
        if num is None:
            self.high_num[key] = [reach * p for p in dist]
            self.high_den[key] = reach
        else:
            for i, p in enumerate(dist):
                num[i] += reach * p
            self.high_den[key] += reach

    def add_low(self, key: str, z: int, reach: float, dist: list[float]):
        k = (key, z)
        num = self.low_num.get(k)
        if num is None:
            self.low_num[k] = [reach * p for p in dist]
            self.low_den[k] = reach
        else:
            for i, p in enumerate(dist):
                num[i] += reach * p
            self.low_den[k] += reach

    def merge(self, other: "AvgStrategyAccumulator"):
        for key, num in other.high_num.items():
            mine = self.high_num.get(key)
            if mine is None:
                self.high_num[key] = list(num)
                self.high_den[key] = other.high_den[key]
            else:
                for i, v in enumerate(num):
                    mine[i] += v
                self.high_den[key] += other.high_den[key]
        for k, num in other.low_num.items():
            mine = self.low_num.get(k)
            if mine is None:
                self.low_num[k] = list(num)
                self.low_den[k] = other.low_den[k]
            else:
                for i, v in enumerate(num):
                    mine[i] += v
                self.low_den[k] += other.low_den[k]


def accumulate_average(acc: AvgStrategyAccumulator, reach_i: float,
                       profile: StrategyProfile, key: str):
    """Fold one iteration's strategy at one infoset into the running average.

    The caller supplies the player's own reach probability of the infoset;
    option-conditional reaches for the low head are derived from the profile's
    current high distribution, so a single call covers both levels.
    """
    if not 0.0 <= reach_i <= 1.0 + 1e-12:
        raise ValueError(f"reach probability out of range: {reach_i}")
    high = profile.high.get(key)
    if high is None:
        raise KeyError(f"profile has no high entry for {key!r}")
    acc.add_high(key, reach_i, high)
    for z, dist in profile.low.get(key, {}).items():
        acc.add_low(key, z, reach_i * high[z], dist)


def normalized_average(acc: AvgStrategyAccumulator) -> StrategyProfile:
    """One exact division per key; zero-weight keys come out uniform."""
    profile = StrategyProfile()
    for key, num in acc.high_num.items():
        den = acc.high_den[key]
        profile.high[key] = [v / den for v in num] if den > 0.0 else uniform(len(num))
    for (key, z), num in acc.low_num.items():
        den = acc.low_den[(key, z)]
        dist = [v / den for v in num] if den > 0.0 else uniform(len(num))
        profile.low.setdefault(key, {})[z] = dist
    return profile


# ---------------------------------------------------------------------------
# Serialization. Canonical JSON (sorted keys, fixed separators, trailing
# newline) so identical content is byte-identical on disk.
# ---------------------------------------------------------------------------

STRATEGY_FORMAT = "hiercfr-strategy"
STRATEGY_VERSION = 1


class StrategyFormatError(ValueError):
    """Raised when a strategy file fails format or version validation."""


def strategy_document(profile: StrategyProfile, cfg: GameConfig,
                      iterations: int, seed: int | None = None,
                      extra: dict | None = None) -> dict:
    doc = {
        "format": STRATEGY_FORMAT,
        "version": STRATEGY_VERSION,
        "game": dataclasses.asdict(cfg),
        "config_hash": cfg.config_hash(),
        "num_options": cfg.num_options,
        "iterations": iterations,
        "seed": seed,
        "high": {k: list(v) for k, v in profile.high.items()},
        "low": {k: {str(z): list(v) for z, v in per_z.items()}
                for k, per_z in profile.low.items()},
    }
    if extra:
        doc.update(extra)
    return doc


def dumps_strategy(profile: StrategyProfile, cfg: GameConfig, iterations: int,
                   seed: int | None = None, extra: dict | None = None) -> str:
    doc = strategy_document(profile, cfg, iterations, seed, extra)
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_strategy(path, profile: StrategyProfile, cfg: GameConfig, iterations: int,
                  seed: int | None = None, extra: dict | None = None):
    with open(path, "w") as fh:
        fh.write(dumps_strategy(profile, cfg, iterations, seed, extra))


def load_strategy(path) -> tuple[StrategyProfile, dict]:
    """Read a strategy file back as (profile, metadata)."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("format") != STRATEGY_FORMAT:
        raise StrategyFormatError(f"{path}: not a strategy file")
    if doc.get("version") != STRATEGY_VERSION:
        raise StrategyFormatError(
            f"{path}: unsupported version {doc.get('version')!r}")
    profile = StrategyProfile(
        high={k: [float(x) for x in v] for k, v in doc["high"].items()},
        low={k: {int(z): [float(x) for x in v] for z, v in per_z.items()}
             for k, per_z in doc["low"].items()},
    )
    meta = {k: v for k, v in doc.items() if k not in ("high", "low")}
    return profile, meta
