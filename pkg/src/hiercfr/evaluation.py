"""Strategy evaluation: flattening, best response, exploitability, matches.

Everything here walks History objects directly and enumerates lazily, so it
works for any game whose *base* tree is enumerable -- the hierarchical tree
(which grows exponentially in option count along each path) is never
materialized except where explicitly documented (switch_frequency exact mode,
expected_value_chips).

Sign conventions: chip values are for player 1 unless a function takes an
explicit player/responder argument. mbb/g = chips * 1000 / big_blind.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random

from .games import CHANCE, GameConfig, History, Z_SENTINEL, root
from .strategy import (
    AvgStrategyAccumulator,
    StrategyProfile,
    normalized_average,
    uniform,
)


class FlatStrategy:
    """Base-game behavioral strategy: base infoset key -> action distribution."""

    def __init__(self, tables=None):
        self.tables: dict[str, list[float]] = tables if tables is not None else {}

    def dist(self, key: str, n: int) -> list[float]:
        vec = self.tables.get(key)
        return vec if vec is not None else uniform(n)

    def set(self, key: str, dist: list[float]):
        self.tables[key] = list(dist)


def base_game(cfg: GameConfig) -> GameConfig:
    """The same rules with the option layer collapsed to a single dummy."""
    return dataclasses.replace(cfg, num_options=1)


def to_mbbg(chips: float, cfg: GameConfig) -> float:
    return chips * 1000.0 / cfg.big_blind


def _hier_key(base_key: str, zprev: int) -> str:
    return f"{base_key}|z{'-' if zprev == Z_SENTINEL else zprev}"


def flatten(profile: StrategyProfile, cfg: GameConfig) -> FlatStrategy:
    """Collapse a hierarchical profile into an equivalent base-game strategy.

    A player following (high, low) heads carries a hidden option variable; to
    an outside observer the induced play at a base infoset is the low-level
    mixture under the player's posterior belief over that variable. The belief
    depends only on the player's own view (card + past actions), i.e. on the
    base infoset, so a single forward pass over the base tree computes every
    table entry. Beliefs start as a point mass on the "no previous option"
    sentinel and update by Bayes rule after each observed own action; should
    an action have zero probability under the belief (it can still be forced
    by the best responder), the pre-action option marginal is kept unchanged.
    """
    flat = FlatStrategy()
    nz = cfg.num_options

    def option_tables(base_key, belief, na):
        """[(weight of z_prev, high dist, per-option low dists), ...]"""
        rows = []
        for zp, w in belief:
            key = _hier_key(base_key, zp)
            high = profile.high_dist(key, nz)
            lows = [profile.low_dist(key, z, na) for z in range(nz)]
            rows.append((w, high, lows))
        return rows

    def walk(h, beliefs):
        if h.terminal:
            return
        if h.player == CHANCE:
            for c in h.legal_actions():
                walk(h.apply((0, c)), beliefs)
            return
        p = h.player
        actions = h.legal_actions()
        na = len(actions)
        base_key = h.base_info_key()
        rows = option_tables(base_key, beliefs[p - 1], na)
        if base_key not in flat.tables:
            dist = [0.0] * na
            for w, high, lows in rows:
                for z in range(nz):
                    whz = w * high[z]
                    for ai in range(na):
                        dist[ai] += whz * lows[z][ai]
            flat.set(base_key, dist)
        for ai, a in enumerate(actions):
            post = [0.0] * nz
            for w, high, lows in rows:
                for z in range(nz):
                    post[z] += w * high[z] * lows[z][ai]
            total = sum(post)
            if total <= 0.0:
                post = [0.0] * nz
                for w, high, _ in rows:
                    for z in range(nz):
                        post[z] += w * high[z]
                total = sum(post)
            belief = [(z, post[z] / total) for z in range(nz) if post[z] > 0.0]
            nxt = list(beliefs)
            nxt[p - 1] = belief
            walk(h.apply((0, a)), tuple(nxt))

    start = ((Z_SENTINEL, 1.0),)
    walk(root(base_game(cfg)), (start, start))
    return flat


def best_response_value(flat: FlatStrategy, cfg: GameConfig, responder: int) -> float:
    """Exact expectimax value (chips) for the responder against a flat opponent.

    Standard infoset-tree best response: descend from the root multiplying
    opponent and chance probabilities, bucket the responder's decision nodes
    by their infoset, and maximize per bucket -- never per history, which
    would let the responder act on information it does not have.
    """
    if responder not in (1, 2):
        raise ValueError("responder must be 1 or 2")

    def descend(h, w, pending):
        """Terminal mass reachable before the responder's next decision."""
        if w == 0.0:
            return 0.0
        if h.terminal:
            return w * h.utility(responder)
        if h.player == CHANCE:
            cards = h.legal_actions()
            p = 1.0 / len(cards)
            return sum(descend(h.apply((0, c)), w * p, pending) for c in cards)
        if h.player == responder:
            pending.setdefault(h.base_info_key(), []).append((h, w))
            return 0.0
        actions = h.legal_actions()
        dist = flat.dist(h.base_info_key(), len(actions))
        return sum(descend(h.apply((0, a)), w * dist[ai], pending)
                   for ai, a in enumerate(actions))

    def solve(bundle):
        actions = bundle[0][0].legal_actions()
        best = -math.inf
        for a in actions:
            pending = {}
            val = sum(descend(h.apply((0, a)), w, pending) for h, w in bundle)
            val += sum(solve(b) for b in pending.values())
            best = max(best, val)
        return best

    pending = {}
    value = descend(root(base_game(cfg)), 1.0, pending)
    return value + sum(solve(b) for b in pending.values())


def exploitability_chips(profile: StrategyProfile, cfg: GameConfig) -> float:
    flat = flatten(profile, cfg)
    br1 = best_response_value(flat, cfg, 1)
    br2 = best_response_value(flat, cfg, 2)
    return 0.5 * (br1 + br2)


def exploitability(profile: StrategyProfile, cfg: GameConfig) -> float:
    """½[u_1(BR, σ_2) + u_2(σ_1, BR)] in mbb/g; 0 exactly at an equilibrium."""
    return to_mbbg(exploitability_chips(profile, cfg), cfg)


def expected_value_chips(profile: StrategyProfile, cfg: GameConfig) -> float:
    """Exact player-1 value of a hierarchical profile, by full enumeration."""
    nz = cfg.num_options

    def walk(h):
        if h.terminal:
            return h.utility(1)
        if h.player == CHANCE:
            cards = h.legal_actions()
            return sum(walk(h.apply((0, c))) for c in cards) / len(cards)
        key = h.info_key()
        actions = h.legal_actions()
        high = profile.high_dist(key, nz)
        total = 0.0
        for z in range(nz):
            if high[z] == 0.0:
                continue
            low = profile.low_dist(key, z, len(actions))
            for ai, a in enumerate(actions):
                if low[ai] == 0.0:
                    continue
                total += high[z] * low[ai] * walk(h.apply((z, a)))
        return total

    return walk(root(cfg))


# ---------------------------------------------------------------------------
# Average overall regret.
# ---------------------------------------------------------------------------

def accumulate_profile_average(cfg: GameConfig, profile: StrategyProfile,
                               acc: AvgStrategyAccumulator):
    """Add one iteration's strategy into a reach-weighted running average.

    Weights are each player's own reach probabilities (chance and opponent
    excluded): the high head at an infoset gets π_i(I), the low head at
    (I, z) gets π_i(I)·σ^H(z|I). Walks the hierarchical tree once.
    """
    nz = cfg.num_options

    def walk(h, reach1, reach2):
        if h.terminal:
            return
        if h.player == CHANCE:
            for c in h.legal_actions():
                walk(h.apply((0, c)), reach1, reach2)
            return
        p = h.player
        key = h.info_key()
        actions = h.legal_actions()
        my_reach = reach1 if p == 1 else reach2
        high = profile.high_dist(key, nz)
        acc.add_high(key, my_reach, high)
        for z in range(nz):
            low = profile.low_dist(key, z, len(actions))
            acc.add_low(key, z, my_reach * high[z], low)
            for ai, a in enumerate(actions):
                w = high[z] * low[ai]
                if w == 0.0 and my_reach == 0.0:
                    continue
                child = h.apply((z, a))
                if p == 1:
                    walk(child, reach1 * w, reach2)
                else:
                    walk(child, reach1, reach2 * w)

    walk(root(cfg), 1.0, 1.0)


def average_overall_regret(cfg: GameConfig, profiles: list[StrategyProfile],
                           player: int) -> float:
    """(1/T)·max_σ′ Σ_t [u_i(σ′, σ^t_{−i}) − u_i(σ^t)].

    The max over a fixed deviation is a best response to the reach-weighted
    average of the opponent's strategies (the sum over t is linear in σ′), so
    this reduces to one flatten + one best response + T expected values.
    """
    if not profiles:
        raise ValueError("need at least one profile")
    acc = AvgStrategyAccumulator()
    mean_u = 0.0
    for prof in profiles:
        accumulate_profile_average(cfg, prof, acc)
        mean_u += expected_value_chips(prof, cfg)
    mean_u /= len(profiles)
    flat = flatten(normalized_average(acc), cfg)
    br = best_response_value(flat, cfg, player)
    own_mean = mean_u if player == 1 else -mean_u
    return br - own_mean


# ---------------------------------------------------------------------------
# Regret-bound constants and sums.
# ---------------------------------------------------------------------------

def positive_regret_sum(store, player: int) -> float:
    """Σ_I [max_z R̄^H(I,z)]_+ + Σ_{I,z} [max_a R̄^L(I,z,a)]_+ for one player.

    The store must hold time-averaged regrets (the tabular tier keeps running
    means, so it can be passed directly).
    """
    prefix = f"p{player}|"
    total = 0.0
    for key, vec in store.high.items():
        if key.startswith(prefix):
            total += max(0.0, max(vec))
    for key, per_z in store.low.items():
        if key.startswith(prefix):
            for vec in per_z.values():
                total += max(0.0, max(vec))
    return total


def regret_rate_bound(delta_u: float, num_infosets: int, num_options: int,
                      max_actions: int, t: int) -> float:
    """Worst-case average overall regret after t iterations of regret matching."""
    return delta_u * num_infosets * (math.sqrt(num_options)
                                     + num_options * math.sqrt(max_actions)) / math.sqrt(t)


# ---------------------------------------------------------------------------
# Head-to-head matches.
# ---------------------------------------------------------------------------

def _sample_index(dist, rng) -> int:
    x = rng.random()
    acc = 0.0
    for i, p in enumerate(dist):
        acc += p
        if x < acc:
            return i
    return len(dist) - 1


def play_hand(cfg: GameConfig, seat_profiles, cards, rng):
    """Play one hand; seat_profiles[0] sits as player 1. Returns (u1, trace)."""
    nz = cfg.num_options
    h = root(cfg)
    cards = list(cards)
    trace = []
    while not h.terminal:
        if h.player == CHANCE:
            c = cards.pop(0)
            trace.append([0, 0, c])
            h = h.apply((0, c))
            continue
        prof = seat_profiles[h.player - 1]
        key = h.info_key()
        actions = h.legal_actions()
        z = _sample_index(prof.high_dist(key, nz), rng)
        a = actions[_sample_index(prof.low_dist(key, z, len(actions)), rng)]
        trace.append([h.player, z, a])
        h = h.apply((z, a))
    return h.utility(1), trace


def head_to_head(profile_a: StrategyProfile, profile_b: StrategyProfile,
                 cfg: GameConfig, n_games: int, seed: int,
                 transcript_path=None) -> tuple[float, float]:
    """Mean payoff of A in mbb/g with a 95% confidence interval.

    Each sampled deal is played twice with seats swapped and the two payoffs
    averaged, so positional advantage cancels within every sample.
    """
    if n_games <= 0:
        raise ValueError("n_games must be positive")
    rng = random.Random(seed)
    deck = list(range(cfg.deck_size))
    per_hand = []
    out = open(transcript_path, "w") if transcript_path else None
    try:
        for g in range(n_games):
            cards = rng.sample(deck, cfg.cards_dealt)
            u1_a_first, trace1 = play_hand(cfg, (profile_a, profile_b), cards, rng)
            u1_b_first, trace2 = play_hand(cfg, (profile_b, profile_a), cards, rng)
            x = 0.5 * (u1_a_first - u1_b_first)
            per_hand.append(x)
            if out is not None:
                for seat_of_a, trace, u1 in ((1, trace1, u1_a_first),
                                             (2, trace2, u1_b_first)):
                    rec = {"hand": g, "seat_of_a": seat_of_a, "cards": cards,
                           "actions": trace,
                           "payoff_a": u1 if seat_of_a == 1 else -u1}
                    out.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if out is not None:
            out.close()
    n = len(per_hand)
    mean = sum(per_hand) / n
    var = sum((x - mean) ** 2 for x in per_hand) / (n - 1) if n > 1 else 0.0
    ci = 1.96 * math.sqrt(var / n)
    return to_mbbg(mean, cfg), to_mbbg(ci, cfg)


# ---------------------------------------------------------------------------
# Skill-switch frequency.
# ---------------------------------------------------------------------------

def switch_frequency(profile: StrategyProfile, cfg: GameConfig,
                     weighted: bool = True, mc_samples: int | None = None,
                     seed: int = 0) -> float:
    """How often the acting player's option differs from its previous one.

    Only decisions with a previous option count (the first pick of a hand is
    not a switch). The exact mode enumerates the hierarchical tree; by default
    nodes are weighted by their reach probability under the profile, or
    uniformly with weighted=False. mc_samples switches to a Monte Carlo
    estimate (total switches over total eligible decisions), which is what
    makes large games affordable.
    """
    nz = cfg.num_options

    if mc_samples is not None:
        rng = random.Random(seed)
        switches = 0
        eligible = 0
        for _ in range(mc_samples):
            h = root(cfg)
            while not h.terminal:
                if h.player == CHANCE:
                    cards = h.legal_actions()
                    h = h.apply((0, cards[rng.randrange(len(cards))]))
                    continue
                key = h.info_key()
                actions = h.legal_actions()
                zprev = h.zprev[h.player - 1]
                z = _sample_index(profile.high_dist(key, nz), rng)
                if zprev != Z_SENTINEL:
                    eligible += 1
                    if z != zprev:
                        switches += 1
                a = actions[_sample_index(profile.low_dist(key, z, len(actions)), rng)]
                h = h.apply((z, a))
        return switches / eligible if eligible else 0.0

    num = 0.0
    den = 0.0

    def walk(h, reach):
        nonlocal num, den
        if h.terminal:
            return
        if h.player == CHANCE:
            cards = h.legal_actions()
            p = 1.0 / len(cards)
            for c in cards:
                walk(h.apply((0, c)), reach * p)
            return
        key = h.info_key()
        actions = h.legal_actions()
        high = profile.high_dist(key, nz)
        zprev = h.zprev[h.player - 1]
        if zprev != Z_SENTINEL:
            w = reach if weighted else 1.0
            num += w * (1.0 - high[zprev])
            den += w
        for z in range(nz):
            low = profile.low_dist(key, z, len(actions))
            for ai, a in enumerate(actions):
                p = high[z] * low[ai]
                if p > 0.0 or not weighted:
                    walk(h.apply((z, a)), reach * p)

    walk(root(cfg), 1.0)
    return num / den if den else 0.0
