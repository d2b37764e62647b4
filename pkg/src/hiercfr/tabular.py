"""Exact full-traversal hierarchical CFR on enumerated trees.

The solver alternates exact counterfactual-regret computation with regret
matching: traverse the whole hierarchical tree under the current profile,
aggregate option-level and action-level immediate regrets per infoset, fold
them into running averages, and regret-match those averages into the next
profile. A reach-weighted average of the per-iteration profiles is the object
that converges to equilibrium.

Two independent regret routes ship on purpose. immediate_regrets computes the
recursive form (opponent-reach-weighted value gaps from one ValueCache);
definitional_regret_oracle re-derives every number from scratch as a
difference of counterfactual values under strategy overrides, enumerating to
the terminals each time. They must agree to float precision; the test suite
leans on that.
"""

from __future__ import annotations

import csv

from .games import CHANCE, GameConfig, root
from .strategy import (
    AvgStrategyAccumulator,
    RegretStore,
    StrategyProfile,
    normalized_average,
    strategy_from_regrets,
)
from . import evaluation


class TreeSizeError(RuntimeError):
    """The game tree exceeded the node budget of an exhaustive operation."""

    def __init__(self, cfg: GameConfig, budget: int):
        self.config_label = cfg.label or cfg.game_kind
        self.budget = budget
        super().__init__(
            f"hierarchical tree of {self.config_label!r} (num_options="
            f"{cfg.num_options}) exceeds the {budget}-node budget for exact "
            f"solving; use the sampled tiers for games this size")


class GameTree:
    """A fully enumerated hierarchical tree in flat parallel arrays.

    Node 0 is the root. children[n] holds (z, a, child_index) triples;
    chance_p[n] is the per-child probability at chance nodes (uniform deal).
    """

    def __init__(self, cfg: GameConfig, node_budget: int = 500_000):
        self.cfg = cfg
        self.histories: list[History] = []
        self.players: list[int] = []
        self.terminal: list[bool] = []
        self.u1: list[float] = []
        self.infokey: list[str | None] = []
        self.children: list[list[tuple[int, int, int]]] = []
        self.chance_p: list[float] = []
        self.infosets: dict[str, list[int]] = {}
        self.actions_at: dict[str, list[int]] = {}

        stack = [root(cfg)]
        parent_slot = [None]
        while stack:
            h = stack.pop()
            slot = parent_slot.pop()
            n = len(self.histories)
            if n >= node_budget:
                raise TreeSizeError(cfg, node_budget)
            self.histories.append(h)
            self.players.append(h.player if not h.terminal else -1)
            self.terminal.append(h.terminal)
            self.u1.append(h.utility(1) if h.terminal else 0.0)
            self.children.append([])
            self.chance_p.append(0.0)
            if slot is not None:
                slot.append(n)
            if h.terminal:
                self.infokey.append(None)
                continue
            if h.player == CHANCE:
                self.infokey.append(None)
                moves = [(0, c) for c in h.legal_actions()]
                self.chance_p[n] = 1.0 / len(moves)
            else:
                key = h.info_key()
                self.infokey.append(key)
                self.infosets.setdefault(key, []).append(n)
                acts = h.legal_actions()
                if key not in self.actions_at:
                    self.actions_at[key] = acts
                # option-major order; traversals rely on it
                moves = [(z, a) for z in range(cfg.num_options) for a in acts]
            entries = [[z, a] for z, a in moves]
            self.children[n] = entries
            for (z, a), entry in zip(reversed(moves), reversed(entries)):
                stack.append(h.apply((z, a)))
                parent_slot.append(entry)
        # freeze child entries as (z, a, idx) tuples
        self.children = [[(e[0], e[1], e[2]) for e in ch] for ch in self.children]

    @property
    def num_nodes(self) -> int:
        return len(self.histories)

    def infoset_keys(self, player: int) -> list[str]:
        prefix = f"p{player}|"
        return [k for k in self.infosets if k.startswith(prefix)]

    def utility_range(self, player: int) -> float:
        us = [self.u1[n] for n in range(self.num_nodes) if self.terminal[n]]
        sign = 1.0 if player == 1 else -1.0
        return max(sign * u for u in us) - min(sign * u for u in us)

    def max_action_count(self) -> int:
        return max(len(a) for a in self.actions_at.values())


class ValueCache:
    """Exact per-node v^H and per-(node, option) v^L for one profile (player-1 chips)."""

    def __init__(self, tree: GameTree):
        self.tree = tree
        self.high = [0.0] * tree.num_nodes
        self.low: dict[tuple[int, int], float] = {}


def traverse_values(tree: GameTree, profile: StrategyProfile) -> ValueCache:
    """One full bottom-up pass: terminals carry utilities, options mix actions,
    infosets mix options, chance averages uniformly."""
    cfg = tree.cfg
    nz = cfg.num_options
    vals = ValueCache(tree)
    # every child has a larger index than its parent (children are allocated
    # when the parent is expanded), so reverse index order is bottom-up
    for n in range(tree.num_nodes - 1, -1, -1):
        if tree.terminal[n]:
            vals.high[n] = tree.u1[n]
            continue
        ch = tree.children[n]
        if tree.players[n] == CHANCE:
            vals.high[n] = tree.chance_p[n] * sum(vals.high[c] for _, _, c in ch)
            continue
        key = tree.infokey[n]
        acts = tree.actions_at[key]
        high = profile.high_dist(key, nz)
        by_z = {z: 0.0 for z in range(nz)}
        it = iter(ch)
        for z in range(nz):
            low = profile.low_dist(key, z, len(acts))
            s = 0.0
            for ai in range(len(acts)):
                _, _, c = next(it)
                s += low[ai] * vals.high[c]
            by_z[z] = s
            vals.low[(n, z)] = s
        vals.high[n] = sum(high[z] * by_z[z] for z in range(nz))
    return vals


def _reaches(tree: GameTree, profile: StrategyProfile):
    """Per-node reach products: (player 1, player 2, chance), top-down."""
    cfg = tree.cfg
    nz = cfg.num_options
    r1 = [0.0] * tree.num_nodes
    r2 = [0.0] * tree.num_nodes
    rc = [0.0] * tree.num_nodes
    r1[0] = r2[0] = rc[0] = 1.0
    for n in range(tree.num_nodes):
        if tree.terminal[n]:
            continue
        ch = tree.children[n]
        if tree.players[n] == CHANCE:
            p = tree.chance_p[n]
            for _, _, c in ch:
                r1[c], r2[c], rc[c] = r1[n], r2[n], rc[n] * p
            continue
        key = tree.infokey[n]
        acts = tree.actions_at[key]
        high = profile.high_dist(key, nz)
        lows = [profile.low_dist(key, z, len(acts)) for z in range(nz)]
        mine = r1 if tree.players[n] == 1 else r2
        other = r2 if tree.players[n] == 1 else r1
        na = len(acts)
        for ci, (z, a, c) in enumerate(ch):
            w = high[z] * lows[z][ci % na]
            mine[c] = mine[n] * w
            other[c] = other[n]
            rc[c] = rc[n]
    return r1, r2, rc


def immediate_regrets(tree: GameTree, profile: StrategyProfile,
                      values: ValueCache | None = None):
    """Per-infoset option and action regrets of the current iteration.

    Option regret at (I, z): opponent-and-chance-weighted gap between playing
    z (then following the low head) and the infoset's mixed value. Action
    regret at (I, z, a): same weighting, gap between committing to a under z
    and the option's mixed value. Returns (high, low) keyed like RegretStore.
    """
    cfg = tree.cfg
    nz = cfg.num_options
    vals = values if values is not None else traverse_values(tree, profile)
    r1, r2, rc = _reaches(tree, profile)
    high: dict[str, list[float]] = {}
    low: dict[str, dict[int, list[float]]] = {}
    for key, nodes in tree.infosets.items():
        acts = tree.actions_at[key]
        na = len(acts)
        hvec = [0.0] * nz
        lvec = {z: [0.0] * na for z in range(nz)}
        player = tree.players[nodes[0]]
        sign = 1.0 if player == 1 else -1.0
        for n in nodes:
            w = (r2[n] if player == 1 else r1[n]) * rc[n]
            vh = vals.high[n]
            it = iter(tree.children[n])
            for z in range(nz):
                vl = vals.low[(n, z)]
                hvec[z] += w * sign * (vl - vh)
                row = lvec[z]
                for ai in range(na):
                    _, _, c = next(it)
                    row[ai] += w * sign * (vals.high[c] - vl)
        high[key] = hvec
        low[key] = lvec
    return high, low


def definitional_regret_oracle(tree: GameTree, profile: StrategyProfile):
    """The same regrets, recomputed from first principles by overrides.

    For every infoset I of player p and option z, the option regret is
    cf(force z at I) − cf(no override), where cf is a sum over terminals:
    paths are weighted by chance and opponent probabilities everywhere, by 1
    for p's choices before I (counterfactual reach), and by p's strategy
    after I — with the override substituting a one-hot pick at I itself.
    Action regrets additionally force a at (I, z). Costs a full enumeration
    per (infoset, override); strictly a small-game oracle.
    """
    cfg = tree.cfg
    nz = cfg.num_options

    def cf(target_key: str, player: int, force: tuple | None) -> float:
        sign = 1.0 if player == 1 else -1.0

        def walk(n: int, w: float, hit: bool) -> float:
            if w == 0.0:
                return 0.0
            if tree.terminal[n]:
                return w * sign * tree.u1[n] if hit else 0.0
            ch = tree.children[n]
            if tree.players[n] == CHANCE:
                p = tree.chance_p[n]
                return sum(walk(c, w * p, hit) for _, _, c in ch)
            key = tree.infokey[n]
            acts = tree.actions_at[key]
            na = len(acts)
            if tree.players[n] != player:
                high = profile.high_dist(key, nz)
                lows = [profile.low_dist(key, z, na) for z in range(nz)]
                total = 0.0
                it = iter(ch)
                for z in range(nz):
                    for ai in range(na):
                        _, _, c = next(it)
                        total += walk(c, w * high[z] * lows[z][ai], hit)
                return total
            if not hit:
                if key == target_key:
                    # entering the target: w is exactly the opponent+chance
                    # reach of this history
                    return at_target(n, w)
                # own decision before the target: counterfactual reach keeps
                # no own factors; branches off the target's path die out on
                # their own (they can never produce target_key again)
                return sum(walk(c, w, False) for _, _, c in ch)
            high = profile.high_dist(key, nz)
            lows = [profile.low_dist(key, z, na) for z in range(nz)]
            total = 0.0
            it = iter(ch)
            for z in range(nz):
                for ai in range(na):
                    _, _, c = next(it)
                    total += walk(c, w * high[z] * lows[z][ai], True)
            return total

        def at_target(n: int, w: float) -> float:
            key = tree.infokey[n]
            acts = tree.actions_at[key]
            na = len(acts)
            high = profile.high_dist(key, nz)
            lows = [profile.low_dist(key, z, na) for z in range(nz)]
            children = {(z, a): c for z, a, c in tree.children[n]}
            if force is None:
                total = 0.0
                for (z, a), c in children.items():
                    ai = acts.index(a)
                    total += walk(c, w * high[z] * lows[z][ai], True)
                return total
            if len(force) == 1:
                z = force[0]
                return sum(walk(children[(z, a)], w * lows[z][ai], True)
                           for ai, a in enumerate(acts))
            z, a = force
            return walk(children[(z, a)], w, True)

        return walk(0, 1.0, False)

    high: dict[str, list[float]] = {}
    low: dict[str, dict[int, list[float]]] = {}
    for key, nodes in tree.infosets.items():
        player = tree.players[nodes[0]]
        acts = tree.actions_at[key]
        base = cf(key, player, None)
        hvec = []
        lvec = {}
        for z in range(tree.cfg.num_options):
            with_z = cf(key, player, (z,))
            hvec.append(with_z - base)
            lvec[z] = [cf(key, player, (z, a)) - with_z for a in acts]
        high[key] = hvec
        low[key] = lvec
    return high, low


def _update_running_average(store: RegretStore, high, low, t: int):
    """avg_t = avg_{t−1} + (r_t − avg_{t−1})/t, componentwise, for every key."""
    for key, vec in high.items():
        cur = store.high.get(key)
        if cur is None:
            store.high[key] = [x / t for x in vec]
        else:
            for i, x in enumerate(vec):
                cur[i] += (x - cur[i]) / t
    for key, per_z in low.items():
        cur_z = store.low.setdefault(key, {})
        for z, vec in per_z.items():
            cur = cur_z.get(z)
            if cur is None:
                cur_z[z] = [x / t for x in vec]
            else:
                for i, x in enumerate(vec):
                    cur[i] += (x - cur[i]) / t
    store.iterations = t


def _accumulate_tree_average(tree: GameTree, profile: StrategyProfile,
                             acc: AvgStrategyAccumulator, r1, r2):
    cfg = tree.cfg
    nz = cfg.num_options
    for key, nodes in tree.infosets.items():
        acts = tree.actions_at[key]
        player = tree.players[nodes[0]]
        own = r1 if player == 1 else r2
        reach = sum(own[n] for n in nodes)
        high = profile.high_dist(key, nz)
        acc.add_high(key, reach, high)
        for z in range(nz):
            acc.add_low(key, z, reach * high[z], profile.low_dist(key, z, len(acts)))


METRIC_COLUMNS = ["iteration", "exploitability_mbbg", "rfull_p1", "rfull_p2",
                  "theorem2_bound", "theorem3_bound"]


def run_hcfr(cfg: GameConfig, iterations: int, mode: str = "uniform",
             node_budget: int = 500_000, eval_every: int | None = None,
             csv_path=None) -> tuple[StrategyProfile, list[dict]]:
    """Exact hierarchical CFR for `iterations` rounds.

    Returns the reach-weighted average profile and one metrics row per
    evaluation point: exploitability of the running average, each player's
    average overall regret, and the two theoretical regret bounds
    (per-player values carried alongside; the headline columns take the max).
    The final iteration is always evaluated.
    """
    if iterations <= 0:
        raise ValueError("iterations must be positive")
    tree = GameTree(cfg, node_budget)
    if eval_every is None:
        eval_every = 1 if cfg.game_kind == "kuhn" else 10
    store = RegretStore()
    acc = AvgStrategyAccumulator()
    profile = strategy_from_regrets(store, mode)
    sum_u1 = 0.0
    metrics: list[dict] = []

    nz = cfg.num_options
    n_info = {p: len(tree.infoset_keys(p)) for p in (1, 2)}
    delta_u = {p: tree.utility_range(p) for p in (1, 2)}
    max_a = tree.max_action_count()

    for t in range(1, iterations + 1):
        vals = traverse_values(tree, profile)
        r1, r2, rc = _reaches(tree, profile)
        high, low = immediate_regrets(tree, profile, vals)
        _update_running_average(store, high, low, t)
        _accumulate_tree_average(tree, profile, acc, r1, r2)
        sum_u1 += vals.high[0]

        if t % eval_every == 0 or t == iterations:
            avg = normalized_average(acc)
            flat = evaluation.flatten(avg, cfg)
            br1 = evaluation.best_response_value(flat, cfg, 1)
            br2 = evaluation.best_response_value(flat, cfg, 2)
            mean_u1 = sum_u1 / t
            row = {
                "iteration": t,
                "exploitability_mbbg": evaluation.to_mbbg(0.5 * (br1 + br2), cfg),
                "rfull_p1": br1 - mean_u1,
                "rfull_p2": br2 + mean_u1,
                "theorem2_p1": evaluation.positive_regret_sum(store, 1),
                "theorem2_p2": evaluation.positive_regret_sum(store, 2),
                "theorem3_p1": evaluation.regret_rate_bound(
                    delta_u[1], n_info[1], nz, max_a, t),
                "theorem3_p2": evaluation.regret_rate_bound(
                    delta_u[2], n_info[2], nz, max_a, t),
                "avg_value_chips": evaluation.expected_value_chips(avg, cfg),
            }
            row["theorem2_bound"] = max(row["theorem2_p1"], row["theorem2_p2"])
            row["theorem3_bound"] = max(row["theorem3_p1"], row["theorem3_p2"])
            metrics.append(row)

        profile = strategy_from_regrets(store, mode)

    if csv_path is not None:
        write_metrics_csv(csv_path, metrics)
    return normalized_average(acc), metrics


def write_metrics_csv(path, metrics: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in metrics:
            writer.writerow([row[c] for c in METRIC_COLUMNS])
