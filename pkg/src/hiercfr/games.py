"""Hierarchical extensive-form game engine.

Ships two heads-up zero-sum poker games behind one History API:

* Kuhn poker (3 ranks, one betting round, 1-chip bet) -- small enough that every
  theorem-level check in the test suite can enumerate the whole tree.
* A parameterized Leduc family (ranks, suits, per-round raise cap, stack) covering
  the standard 6-card game and scaled-up variants with deeper betting.

Every player decision is a hierarchical action (z, a): an option index z (a "skill"
slot, private to the acting player) plus a primitive poker action a. The chance
player deals cards through the same interface with a single dummy option.

Histories are immutable values; apply() returns a child and never touches the
parent, so trees can be traversed, cached and shared freely.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

CHANCE = 0

# Primitive action ids. CHECK_CALL covers both check (nothing to match) and call;
# BET_RAISE covers both the opening bet and raises. Rendering picks the right char.
FOLD = 0
CHECK_CALL = 1
BET_RAISE = 2

#: z_prev value at a player's first decision of the game.
Z_SENTINEL = -1
#: the chance player's single dummy option.
Z_CHANCE = 0

_ACTION_CHARS_OPEN = {CHECK_CALL: "k", BET_RAISE: "b"}
_ACTION_CHARS_FACING = {FOLD: "f", CHECK_CALL: "c", BET_RAISE: "r"}


class GameConfigError(ValueError):
    """Raised when a GameConfig violates its invariants."""


class IllegalMoveError(ValueError):
    """Raised when apply() is given a move that is not legal at the history."""


@dataclass(frozen=True)
class GameConfig:
    """Rules knob bundle for one game instance.

    stack is the per-player budget *including* the ante. A full raise is legal only
    while the per-round raise cap is unmet and the raiser's resulting commitment
    stays within the stack; if the full amount is unaffordable but some budget
    remains (and the cap is unmet), a single all-in raise for the remainder is
    offered instead, after which the opponent can only fold or call.
    """

    game_kind: str
    ranks: int
    suits: int
    raise_cap_per_round: int
    stack: int
    bet_sizes: tuple[int, ...]
    num_options: int = 3
    big_blind: int = 0  # 0 = default to the round-1 bet size
    ante: int = 1
    label: str = ""

    def __post_init__(self):
        if self.game_kind not in ("kuhn", "leduc"):
            raise GameConfigError(f"unknown game_kind {self.game_kind!r}")
        if self.num_options < 1:
            raise GameConfigError("num_options must be >= 1")
        if self.ranks < 2 or self.suits < 1:
            raise GameConfigError("need at least 2 ranks and 1 suit")
        if len(self.bet_sizes) != self.num_rounds:
            raise GameConfigError(
                f"{self.game_kind} needs {self.num_rounds} bet sizes, got {len(self.bet_sizes)}")
        if any(b <= 0 for b in self.bet_sizes):
            raise GameConfigError("bet_sizes must be positive")
        if self.raise_cap_per_round < 0:
            raise GameConfigError("raise_cap_per_round must be >= 0")
        if self.ante < 1:
            raise GameConfigError("ante must be >= 1")
        if self.stack < self.ante + self.bet_sizes[0]:
            raise GameConfigError("stack too small to ever bet")
        if self.deck_size < self.cards_dealt:
            raise GameConfigError("deck too small for the deal")
        if self.big_blind == 0:
            object.__setattr__(self, "big_blind", self.bet_sizes[0])
        if not isinstance(self.bet_sizes, tuple):
            object.__setattr__(self, "bet_sizes", tuple(self.bet_sizes))

    @property
    def num_rounds(self) -> int:
        return 1 if self.game_kind == "kuhn" else 2

    @property
    def deck_size(self) -> int:
        return self.ranks * self.suits

    @property
    def cards_dealt(self) -> int:
        # one private card each, plus a board card per round after the first
        return 2 + (self.num_rounds - 1)

    def rank_of(self, card: int) -> int:
        return card // self.suits

    def config_hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


def kuhn_config(num_options: int = 2, **overrides) -> GameConfig:
    base = dict(game_kind="kuhn", ranks=3, suits=1, raise_cap_per_round=1,
                stack=2, bet_sizes=(1,), num_options=num_options, label="kuhn")
    base.update(overrides)
    return GameConfig(**base)


def leduc_config(num_options: int = 3, **overrides) -> GameConfig:
    base = dict(game_kind="leduc", ranks=3, suits=2, raise_cap_per_round=2,
                stack=13, bet_sizes=(2, 4), num_options=num_options, label="leduc")
    base.update(overrides)
    return GameConfig(**base)


# Scaled family: larger deck, deeper raise caps, bigger stacks. Horizon
# (total raise cap over both rounds) is twice the per-round cap.
_LEDUC_FAMILY = {
    "leduc": dict(),
    "leduc_10": dict(ranks=12, suits=2, raise_cap_per_round=10, stack=60),
    "leduc_15": dict(ranks=12, suits=2, raise_cap_per_round=15, stack=80),
    "leduc_20": dict(ranks=12, suits=2, raise_cap_per_round=20, stack=100),
}


def leduc_family(name: str, num_options: int = 3) -> GameConfig:
    if name not in _LEDUC_FAMILY:
        raise GameConfigError(f"unknown Leduc variant {name!r}; choose from {sorted(_LEDUC_FAMILY)}")
    return leduc_config(num_options=num_options, label=name, **_LEDUC_FAMILY[name])


class History:
    """One concrete game-tree node: chance outcomes plus every (player, z, a) so far.

    Instances are immutable; use apply() to get children. Player ids are 1 and 2,
    chance is 0. All chip amounts are per-player total commitments including the
    ante, so pot == sum(commits) at every node.
    """

    __slots__ = ("cfg", "cards", "moves", "player", "terminal", "folded",
                 "round_idx", "commits", "facing", "raises", "checks",
                 "zprev", "action_str", "hkey")

    def __init__(self, cfg: GameConfig):
        self.cfg = cfg
        self.cards: tuple[int, ...] = ()
        self.moves: tuple[tuple[int, int, int], ...] = ()
        self.player = CHANCE
        self.terminal = False
        self.folded = 0              # player id who folded, 0 if nobody
        self.round_idx = 0
        self.commits = (cfg.ante, cfg.ante)
        self.facing = 0
        self.raises = 0
        self.checks = 0
        self.zprev = (Z_SENTINEL, Z_SENTINEL)
        self.action_str = ""
        self.hkey = ""

    # -- structure ---------------------------------------------------------

    @property
    def pot(self) -> int:
        return self.commits[0] + self.commits[1]

    def is_prefix(self, other: "History") -> bool:
        """h ⊑ h': True iff self is on the path from the root to other."""
        n = len(self.moves)
        return len(other.moves) >= n and other.moves[:n] == self.moves

    def _cards_needed(self) -> int:
        if len(self.cards) < 2:
            return 2 - len(self.cards)
        # board card for the current round is dealt once the previous round closed
        return 0

    def remaining_deck(self) -> list[int]:
        dealt = set(self.cards)
        return [c for c in range(self.cfg.deck_size) if c not in dealt]

    def legal_options(self) -> range:
        if self.terminal:
            raise IllegalMoveError("terminal history has no moves")
        if self.player == CHANCE:
            return range(1)
        return range(self.cfg.num_options)

    def legal_actions(self) -> list[int]:
        if self.terminal:
            raise IllegalMoveError("terminal history has no moves")
        if self.player == CHANCE:
            return self.remaining_deck()
        return _legal_player_actions(self.cfg, self.round_idx, self.commits,
                                     self.facing, self.raises, self.player)

    def legal_moves(self) -> tuple[range, list[int]]:
        """(Z(h), A(h)); every (z, a) pair from the product is a legal HierAction."""
        return self.legal_options(), self.legal_actions()

    # -- transitions --------------------------------------------------------

    def apply(self, move: tuple[int, int]) -> "History":
        z, a = move
        if self.terminal:
            raise IllegalMoveError("cannot act at a terminal history")
        if z not in self.legal_options():
            raise IllegalMoveError(f"illegal option {z} at {self.hkey or 'root'}")
        if a not in self.legal_actions():
            raise IllegalMoveError(f"illegal action {a} at {self.hkey or 'root'}")

        child = History.__new__(History)
        child.cfg = self.cfg
        child.moves = self.moves + ((self.player, z, a),)
        child.folded = 0
        child.zprev = self.zprev

        if self.player == CHANCE:
            child.cards = self.cards + (a,)
            child.hkey = self.hkey + f";*{a}"
            child.round_idx = self.round_idx
            child.commits = self.commits
            child.facing = 0
            child.raises = 0
            child.checks = 0
            child.action_str = self.action_str
            child.terminal = False
            if child._cards_needed() > 0:
                child.player = CHANCE
            else:
                child.player = 1
            return child

        child.cards = self.cards
        child.hkey = self.hkey + f";{self.player}:{z}.{a}"
        me = self.player - 1
        zp = list(self.zprev)
        zp[me] = z
        child.zprev = (zp[0], zp[1])
        child.action_str = self.action_str + _action_char(self.facing, a)

        commits = list(self.commits)
        round_over = False
        child.terminal = False
        child.round_idx = self.round_idx
        child.raises = self.raises
        child.checks = self.checks
        child.facing = self.facing

        if a == FOLD:
            child.terminal = True
            child.folded = self.player
            child.player = CHANCE  # unused; terminal
        elif a == CHECK_CALL:
            if self.facing == 0:
                child.checks = self.checks + 1
                if child.checks == 2:
                    round_over = True
                else:
                    child.player = 3 - self.player
                    child.facing = 0
            else:
                commits[me] += self.facing
                round_over = True
        else:  # BET_RAISE
            amount = _raise_amount(self.cfg, self.round_idx, self.commits,
                                   self.facing, self.player)
            commits[me] += self.facing + amount
            child.raises = self.raises + 1
            child.checks = 0
            child.facing = amount
            child.player = 3 - self.player

        child.commits = (commits[0], commits[1])

        if round_over:
            if self.round_idx + 1 == self.cfg.num_rounds:
                child.terminal = True
                child.player = CHANCE  # unused; terminal
            else:
                child.round_idx = self.round_idx + 1
                child.player = CHANCE  # board card next
                child.facing = 0
                child.raises = 0
                child.checks = 0
                child.action_str = child.action_str + "/"
        return child

    # -- payoffs and information -------------------------------------------

    def utility(self, player: int) -> float:
        """Terminal payoff in chips for player 1 or 2; u_1 == -u_2 exactly."""
        if not self.terminal:
            raise IllegalMoveError("utility of a non-terminal history")
        u1 = self._utility_p1()
        return u1 if player == 1 else -u1

    def _utility_p1(self) -> float:
        if self.folded:
            winner = 3 - self.folded
            return float(self.commits[1]) if winner == 1 else -float(self.commits[0])
        w = _showdown_winner(self.cfg, self.cards)
        if w == 0:
            return 0.0
        return float(self.commits[1]) if w == 1 else -float(self.commits[0])

    def info_key(self) -> str:
        """Canonical infoset key: p{player}|{private}|{board}|{actions}|z{prev}.

        Carries the acting player's private card, the public board and action
        sequence, and that player's previous option only -- opponent options and
        the player's own older options never appear (one-step conditioning).
        """
        if self.terminal or self.player == CHANCE:
            raise IllegalMoveError("info_key is defined at player decision nodes")
        private = self.cfg.rank_of(self.cards[self.player - 1])
        board = self.cfg.rank_of(self.cards[2]) if len(self.cards) > 2 else ""
        zp = self.zprev[self.player - 1]
        zp_str = "-" if zp == Z_SENTINEL else str(zp)
        return f"p{self.player}|{private}|{board}|{self.action_str}|z{zp_str}"

    def base_info_key(self) -> str:
        """info_key without the z_prev field: the base-game infoset id."""
        key = self.info_key()
        return key[:key.rindex("|")]

    def __repr__(self):
        return f"History({self.cfg.label or self.cfg.game_kind}, '{self.hkey}')"


def root(cfg: GameConfig) -> History:
    """Initial chance node: antes posted, no cards dealt."""
    return History(cfg)


def _action_char(facing: int, a: int) -> str:
    return (_ACTION_CHARS_FACING if facing > 0 else _ACTION_CHARS_OPEN)[a]


def _raise_amount(cfg, round_idx, commits, facing, player):
    """Chips added on top of the call; may be an all-in for less than a full raise."""
    budget = cfg.stack - commits[player - 1] - facing
    return min(cfg.bet_sizes[round_idx], budget)


def _legal_player_actions(cfg, round_idx, commits, facing, raises, player):
    actions = []
    if facing > 0:
        actions.append(FOLD)
    actions.append(CHECK_CALL)
    if raises < cfg.raise_cap_per_round:
        if cfg.stack - commits[player - 1] - facing > 0:
            actions.append(BET_RAISE)
    return actions


def _showdown_winner(cfg, cards):
    """1, 2, or 0 for a split. Board pairing beats rank; then higher rank wins."""
    r1, r2 = cfg.rank_of(cards[0]), cfg.rank_of(cards[1])
    if cfg.num_rounds > 1:
        rb = cfg.rank_of(cards[2])
        if r1 == rb and r2 == rb:
            return 0
        if r1 == rb:
            return 1
        if r2 == rb:
            return 2
    if r1 == r2:
        return 0
    return 1 if r1 > r2 else 2


def count_base_tree(cfg: GameConfig) -> int:
    """Exhaustive node count of the base game's public tree.

    The public tree branches on betting actions and on board-card reveals over the
    full deck; private deals are not branched (they are invisible in the public
    state). The count excludes the root node, i.e. it counts every state reached
    by at least one public move. Options never affect the base tree, but the
    contract is a num_options == 1 config, so that is forced here.
    """
    cfg = dataclasses.replace(cfg, num_options=1)

    def walk(round_idx, commits, facing, raises, checks, player):
        """Number of strict descendants of this public betting node."""
        total = 0
        for a in _legal_player_actions(cfg, round_idx, commits, facing, raises, player):
            total += 1
            if a == FOLD:
                continue
            if a == CHECK_CALL:
                if facing == 0:
                    if checks + 1 == 2:
                        total += after_round(round_idx, commits)
                    else:
                        total += walk(round_idx, commits, 0, raises, checks + 1, 3 - player)
                else:
                    c = list(commits)
                    c[player - 1] += facing
                    total += after_round(round_idx, tuple(c))
            else:
                amount = _raise_amount(cfg, round_idx, commits, facing, player)
                c = list(commits)
                c[player - 1] += facing + amount
                total += walk(round_idx, tuple(c), amount, raises + 1, 0, 3 - player)
        return total

    def after_round(round_idx, commits):
        """Descendants hanging off a completed betting round (0 if it was the last)."""
        if round_idx + 1 == cfg.num_rounds:
            return 0
        # one public chance node, branching over every deck card
        return cfg.deck_size * (1 + walk(round_idx + 1, commits, 0, 0, 0, 1))

    return walk(0, (cfg.ante, cfg.ante), 0, 0, 0, 1)
