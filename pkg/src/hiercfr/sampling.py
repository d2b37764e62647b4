"""Outcome-sampling Monte Carlo rollouts with baseline control variates.

One rollout draws a single root-to-terminal trajectory: the traverser explores
(an epsilon-mix of uniform and its current strategy, applied independently at
the option and at the action level), the other player follows the profile
as-is, and chance deals uniformly. Because the non-traverser and chance are
sampled on-policy, their probability factors cancel between the opponent-reach
numerator and the sample-reach denominator of the importance weight, leaving
the reciprocal of the traverser's own sampling probabilities as the running
correction.

Every branch not taken is scored by a baseline function, and the branch that
was taken is corrected as (child - b)/q + b. The estimate stays unbiased for
any baseline (the correction term has zero mean under the sampling
distribution), while a baseline equal to the true branch values removes the
sampling variance entirely. Chance transitions get the same correction, which
is what suppresses deal variance in card games.

Rollouts emit regret estimates for the traverser and strategy snapshots for
the non-traverser as plain record lists; downstream buffers ingest them in any
merge order. All values and baselines are tracked in player-1 chips, and
traverser-2 regrets are negated on write, so one table serves both players.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from .games import CHANCE, GameConfig, History, root
from .strategy import StrategyProfile, uniform


class ZeroBaseline:
    """The all-zero baseline: plain outcome sampling with no control variate."""

    def low(self, hkey: str, z: int, a: int) -> float:
        return 0.0


def corrected_value(q_prob: float, b: float, child_value: float) -> float:
    """Importance-corrected value of a sampled branch: (child - b)/q + b.

    Averaged over whether the branch gets sampled (probability q, with the
    baseline standing in otherwise), this equals the branch's true value for
    any b; if b already equals the true value it is exact on every sample.
    """
    if q_prob <= 0.0:
        raise ValueError("sampled a zero-probability branch")
    return (child_value - b) / q_prob + b


def derive_rng(seed: int, t: int, i: int, k: int) -> random.Random:
    """Independent, platform-stable generator for traversal k of block (t, i)."""
    digest = hashlib.sha256(f"{seed}:{t}:{i}:{k}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class SampleStrategy:
    """Per-node sampling distributions for one traverser.

    The traverser mixes uniform exploration into its profile with weight
    epsilon; the other player plays the profile exactly; chance keeps its
    natural deal distribution (a single dummy option, then a uniform card).
    The same object drives live sampling and exhaustive enumeration.
    """

    def __init__(self, traverser: int, profile: StrategyProfile,
                 epsilon: float = 1.0):
        if traverser not in (1, 2):
            raise ValueError("traverser must be 1 or 2")
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.traverser = traverser
        self.profile = profile
        self.epsilon = epsilon

    def _mix(self, dist: list[float]) -> list[float]:
        e = self.epsilon
        if e == 0.0:
            return list(dist)
        u = e / len(dist)
        return [u + (1.0 - e) * p for p in dist]

    def option_dist(self, h: History) -> list[float]:
        if h.player == CHANCE:
            return [1.0]
        dist = self.profile.high_dist(h.info_key(), h.cfg.num_options)
        return self._mix(dist) if h.player == self.traverser else list(dist)

    def action_dist(self, h: History, z: int) -> list[float]:
        n = len(h.legal_actions())
        if h.player == CHANCE:
            return uniform(n)
        dist = self.profile.low_dist(h.info_key(), z, n)
        return self._mix(dist) if h.player == self.traverser else list(dist)


@dataclass
class StepValues:
    """Diagnostic snapshot of one visited node's corrected values."""

    hkey: str
    key: str | None            # infoset key; None at chance nodes
    z: int                     # sampled option
    actions: list[int]
    high: list[float]          # corrected value per option
    low: list[float]           # corrected value per action under the sampled option


class RolloutRecord:
    """Buffer deltas produced by one or more rollouts.

    Regret entries carry the full importance-weighted estimate vectors for the
    traverser; strategy entries carry the non-traverser's current
    distributions, one per visit. Terminal histories are kept whenever player
    1 was the traverser, for baseline fitting. Merging is concatenation, so
    shard results combine in any order.
    """

    def __init__(self):
        self.regret_high: list[tuple[str, int, list[float]]] = []
        self.regret_low: list[tuple[str, int, int, list[float]]] = []
        self.strategy_high: list[tuple[str, int, list[float]]] = []
        self.strategy_low: list[tuple[str, int, int, list[float]]] = []
        self.terminals: list[History] = []
        self.values: list[StepValues] = []

    def merge(self, other: "RolloutRecord"):
        self.regret_high.extend(other.regret_high)
        self.regret_low.extend(other.regret_low)
        self.strategy_high.extend(other.strategy_high)
        self.strategy_low.extend(other.strategy_low)
        self.terminals.extend(other.terminals)
        self.values.extend(other.values)


def sample_path(cfg: GameConfig, sampler: SampleStrategy,
                rng: random.Random) -> tuple[list, History]:
    """Draw one root-to-terminal trajectory under the sample strategy.

    Returns (steps, terminal); each step is (history, z, action_index, q_z,
    q_a) with the sampling probabilities of the chosen option and action.
    """
    h = root(cfg)
    steps = []
    while not h.terminal:
        qz = sampler.option_dist(h)
        z = _draw(qz, rng)
        qa = sampler.action_dist(h, z)
        ai = _draw(qa, rng)
        steps.append((h, z, ai, qz[z], qa[ai]))
        h = h.apply((z, h.legal_actions()[ai]))
    return steps, h


def _draw(dist: list[float], rng: random.Random) -> int:
    r = rng.random()
    acc = 0.0
    last = 0
    for idx, p in enumerate(dist):
        if p <= 0.0:
            continue
        last = idx
        acc += p
        if r < acc:
            return idx
    return last


def _evaluate_path(steps: list, terminal: History, sampler: SampleStrategy,
                   baseline, t: int, record: RolloutRecord,
                   keep_values: bool) -> float:
    """Score one fixed trajectory bottom-up, appending its records.

    Deterministic given the trajectory: every off-trajectory branch reads the
    baseline, so both live rollouts and the exhaustive expectation oracle run
    through this single code path.
    """
    profile = sampler.profile
    i = sampler.traverser
    sign = 1.0 if i == 1 else -1.0

    # opponent-reach over sample-reach ratio at each prefix; only the
    # traverser's own sampling probabilities survive the cancellation
    ratios = []
    ratio = 1.0
    for h, z, ai, qz, qa in steps:
        ratios.append(ratio)
        if h.player == i:
            ratio /= qz * qa

    record.terminals.append(terminal)
    v = terminal.utility(1)

    for j in range(len(steps) - 1, -1, -1):
        h, z, ai, qz, qa = steps[j]
        acts = h.legal_actions()
        na = len(acts)

        if h.player == CHANCE:
            sigma_c = uniform(na)
            b_low = [baseline.low(h.hkey, z, a) for a in acts]
            vhat_low = list(b_low)
            vhat_low[ai] = corrected_value(qa, b_low[ai], v)
            v_low = sum(p * x for p, x in zip(sigma_c, vhat_low))
            b_high = sum(p * x for p, x in zip(sigma_c, b_low))
            vhat_high = [corrected_value(qz, b_high, v_low)]
            v = vhat_high[0]
            if keep_values:
                record.values.append(
                    StepValues(h.hkey, None, z, acts, vhat_high, vhat_low))
            continue

        key = h.info_key()
        nz = h.cfg.num_options
        sigma_high = profile.high_dist(key, nz)
        lows = [profile.low_dist(key, zz, na) for zz in range(nz)]
        b_rows = [[baseline.low(h.hkey, zz, a) for a in acts]
                  for zz in range(nz)]
        # the option-level baseline is the strategy-weighted action baseline
        b_high = [sum(p * b for p, b in zip(lows[zz], b_rows[zz]))
                  for zz in range(nz)]

        vhat_low = list(b_rows[z])
        vhat_low[ai] = corrected_value(qa, b_rows[z][ai], v)
        v_low = sum(p * x for p, x in zip(lows[z], vhat_low))

        vhat_high = list(b_high)
        vhat_high[z] = corrected_value(qz, b_high[z], v_low)
        v_high = sum(p * x for p, x in zip(sigma_high, vhat_high))

        if h.player == i:
            w_high = ratios[j]
            w_low = w_high / qz
            record.regret_high.append(
                (key, t, [sign * w_high * (x - v_high) for x in vhat_high]))
            record.regret_low.append(
                (key, z, t, [sign * w_low * (x - v_low) for x in vhat_low]))
        else:
            record.strategy_high.append((key, t, list(sigma_high)))
            record.strategy_low.append((key, z, t, list(lows[z])))
        if keep_values:
            record.values.append(
                StepValues(h.hkey, key, z, acts, vhat_high, vhat_low))
        v = v_high

    return v


def rollout(cfg: GameConfig, sampler: SampleStrategy, baseline, t: int,
            rng: random.Random,
            keep_values: bool = False) -> tuple[float, RolloutRecord]:
    """One sampled traversal; returns the corrected root value and its records."""
    steps, terminal = sample_path(cfg, sampler, rng)
    record = RolloutRecord()
    value = _evaluate_path(steps, terminal, sampler, baseline, t, record,
                           keep_values)
    return value, record


def collect_traversals(cfg: GameConfig, profile: StrategyProfile, baseline,
                       K: int, t: int, traverser: int, epsilon: float = 1.0,
                       seed: int = 0, keep_values: bool = False,
                       single_strategy_record: bool = False,
                       k_offset: int = 0) -> RolloutRecord:
    """K independent rollouts for one (iteration, traverser) block.

    Each traversal gets its own generator derived from (seed, t, traverser,
    k), so results are reproducible and independent of sharding; a worker
    handling rollouts k_offset+1..k_offset+K produces exactly the entries a
    serial run would for that slice.

    With ``single_strategy_record`` each rollout keeps just one uniformly
    chosen strategy snapshot pair instead of one per visited node. That drops
    information and is never an improvement for training; it exists so tests
    can check that visit-frequency weighting, not records-per-trajectory,
    carries the average-strategy weights.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    if t < 1:
        raise ValueError("iteration index starts at 1")
    sampler = SampleStrategy(traverser, profile, epsilon)
    record = RolloutRecord()
    for k in range(k_offset + 1, k_offset + K + 1):
        rng = derive_rng(seed, t, traverser, k)
        _, delta = rollout(cfg, sampler, baseline, t, rng, keep_values)
        if single_strategy_record and delta.strategy_high:
            # High and low snapshots are appended in lockstep, one pair per
            # non-traverser decision node, so one index picks a matched pair.
            idx = rng.randrange(len(delta.strategy_high))
            delta.strategy_high = [delta.strategy_high[idx]]
            delta.strategy_low = [delta.strategy_low[idx]]
        record.merge(delta)
    return record


def _enumerate_paths(h: History, sampler: SampleStrategy):
    """Yield every positive-probability trajectory as (steps, terminal, prob)."""
    if h.terminal:
        yield [], h, 1.0
        return
    qz = sampler.option_dist(h)
    acts = h.legal_actions()
    for z, pz in enumerate(qz):
        if pz <= 0.0:
            continue
        qa = sampler.action_dist(h, z)
        for ai, pa in enumerate(qa):
            if pa <= 0.0:
                continue
            step = (h, z, ai, pz, pa)
            child = h.apply((z, acts[ai]))
            for steps, term, p in _enumerate_paths(child, sampler):
                yield [step] + steps, term, pz * pa * p


def exhaustive_expectation(cfg: GameConfig, profile: StrategyProfile, baseline,
                           traverser: int, epsilon: float = 1.0, t: int = 1):
    """Exact expected sampled regrets, by enumerating every trajectory.

    Weights each trajectory's records by its sampling probability and sums.
    The result must reproduce the exact per-iteration regrets of the full
    traversal for any baseline; infosets with zero sampling mass contribute
    nothing. Small games only. Returns (high, low) dicts keyed like
    RegretStore.
    """
    sampler = SampleStrategy(traverser, profile, epsilon)
    high: dict[str, list[float]] = {}
    low: dict[str, dict[int, list[float]]] = {}
    for steps, terminal, prob in _enumerate_paths(root(cfg), sampler):
        rec = RolloutRecord()
        _evaluate_path(steps, terminal, sampler, baseline, t, rec, False)
        for key, _, vec in rec.regret_high:
            cur = high.setdefault(key, [0.0] * len(vec))
            for idx, x in enumerate(vec):
                cur[idx] += prob * x
        for key, z, _, vec in rec.regret_low:
            cur = low.setdefault(key, {}).setdefault(z, [0.0] * len(vec))
            for idx, x in enumerate(vec):
                cur[idx] += prob * x
    return high, low
