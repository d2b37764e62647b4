"""Shared test helpers: profile builders and independent expectation walks."""

import random

from hiercfr.games import CHANCE, root
from hiercfr.strategy import StrategyProfile


def decision_nodes(cfg):
    """Every player decision node of the hierarchical tree, depth-first."""
    stack = [root(cfg)]
    while stack:
        h = stack.pop()
        if h.terminal:
            continue
        if h.player != CHANCE:
            yield h
        zs, acts = h.legal_moves()
        for z in zs:
            for a in acts:
                stack.append(h.apply((z, a)))


def random_hier_profile(cfg, seed):
    """Fully mixed random distributions at every hierarchical infoset."""
    rng = random.Random(seed)
    prof = StrategyProfile()
    nz = cfg.num_options

    def simplex(n):
        raw = [rng.random() + 0.05 for _ in range(n)]
        s = sum(raw)
        return [x / s for x in raw]

    seen = set()
    for h in decision_nodes(cfg):
        key = h.info_key()
        if key in seen:
            continue
        seen.add(key)
        prof.set_high(key, simplex(nz))
        for z in range(nz):
            prof.set_low(key, z, simplex(len(h.legal_actions())))
    return prof


def hier_from_flat(cfg, tables_by_player):
    """Wrap base-game action tables as a single-option hierarchical profile.

    tables_by_player: {player: {base key: action distribution}}.
    """
    assert cfg.num_options == 1
    prof = StrategyProfile()
    for h in decision_nodes(cfg):
        key = h.info_key()
        if key in prof.high:
            continue
        prof.set_high(key, [1.0])
        dist = tables_by_player[h.player][h.base_info_key()]
        prof.set_low(key, 0, list(dist))
    return prof


def always_fold_profile(cfg):
    """Folds whenever facing a bet, checks otherwise, first option always."""
    prof = StrategyProfile()
    nz = cfg.num_options
    for h in decision_nodes(cfg):
        key = h.info_key()
        if key in prof.high:
            continue
        high = [0.0] * nz
        high[0] = 1.0
        prof.set_high(key, high)
        na = len(h.legal_actions())
        dist = [0.0] * na
        dist[0] = 1.0  # fold if owed chips, otherwise check
        for z in range(nz):
            prof.set_low(key, z, dist)
    return prof


def hier_pair_value(cfg, profile_1, profile_2):
    """Exact player-1 value when seat 1 plays profile_1 and seat 2 profile_2."""
    nz = cfg.num_options

    def walk(h):
        if h.terminal:
            return h.utility(1)
        if h.player == CHANCE:
            cards = h.legal_actions()
            return sum(walk(h.apply((0, c))) for c in cards) / len(cards)
        prof = profile_1 if h.player == 1 else profile_2
        key = h.info_key()
        acts = h.legal_actions()
        high = prof.high_dist(key, nz)
        total = 0.0
        for z in range(nz):
            if high[z] == 0.0:
                continue
            low = prof.low_dist(key, z, len(acts))
            for ai, a in enumerate(acts):
                if low[ai] == 0.0:
                    continue
                total += high[z] * low[ai] * walk(h.apply((z, a)))
        return total

    return walk(root(cfg))


def flat_pair_value(cfg, flat_1, flat_2):
    """Exact player-1 value of two base-game strategies."""
    from hiercfr.evaluation import base_game

    def walk(h):
        if h.terminal:
            return h.utility(1)
        if h.player == CHANCE:
            cards = h.legal_actions()
            return sum(walk(h.apply((0, c))) for c in cards) / len(cards)
        flat = flat_1 if h.player == 1 else flat_2
        acts = h.legal_actions()
        dist = flat.dist(h.base_info_key(), len(acts))
        return sum(dist[ai] * walk(h.apply((0, a)))
                   for ai, a in enumerate(acts) if dist[ai] > 0.0)

    return walk(root(base_game(cfg)))


def hier_terminal_distribution(cfg, profile):
    """Reach probability of every (deal, action string) under full play."""
    nz = cfg.num_options
    dist = {}

    def walk(h, p):
        if p == 0.0:
            return
        if h.terminal:
            key = (h.cards, h.action_str)
            dist[key] = dist.get(key, 0.0) + p
            return
        if h.player == CHANCE:
            cards = h.legal_actions()
            for c in cards:
                walk(h.apply((0, c)), p / len(cards))
            return
        key = h.info_key()
        acts = h.legal_actions()
        high = profile.high_dist(key, nz)
        for z in range(nz):
            low = profile.low_dist(key, z, len(acts))
            for ai, a in enumerate(acts):
                walk(h.apply((z, a)), p * high[z] * low[ai])

    walk(root(cfg), 1.0)
    return dist


def flat_terminal_distribution(cfg, flat):
    from hiercfr.evaluation import base_game
    dist = {}

    def walk(h, p):
        if p == 0.0:
            return
        if h.terminal:
            key = (h.cards, h.action_str)
            dist[key] = dist.get(key, 0.0) + p
            return
        if h.player == CHANCE:
            cards = h.legal_actions()
            for c in cards:
                walk(h.apply((0, c)), p / len(cards))
            return
        acts = h.legal_actions()
        d = flat.dist(h.base_info_key(), len(acts))
        for ai, a in enumerate(acts):
            walk(h.apply((0, a)), p * d[ai])

    walk(root(base_game(cfg)), 1.0)
    return dist
