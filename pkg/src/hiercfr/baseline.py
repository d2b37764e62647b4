"""History-level baseline values learned from sampled trajectories.

The control variate used by the rollouts is a table of per-(history, option,
action) values in player-1 chips. After each iteration's traversals, every
trajectory collected while player 1 was the traverser is walked backward: the
value seen below each transition becomes a regression target for that
transition, lifted through the same (child - b)/q + b correction and
strategy-weighted mixing the rollouts use — but with next iteration's strategy
supplying the weights, so the fitted table tracks the values of the profile it
will actually be correcting. The per-key arithmetic mean of the targets is the
exact minimizer of the squared fitting loss, and it converges to the true
values as the trajectory count grows.

Each refit starts from the previous table and folds the new buffer's targets
into the per-key running means — the incremental analog of taking a few
training steps from the previous fit on fresh data. Carrying state across
iterations matters on games deep enough that one iteration's buffer cannot
cover the tree: per-key estimates keep sharpening as visits accumulate, and
keys absent from a buffer keep their values instead of oscillating back to 0.
The importance-corrected targets are heavy-tailed, so one extreme draw at a
thinly-visited key could plant a value far outside anything the game can pay
and then leak noise into every rollout that reads it; since no true value can
exceed the largest terminal payoff, each fit ends by projecting every stored
mean into the payoff range observed so far, which never increases an entry's
error. Option-level values are never stored: they are the current low
strategy's weighted sum of action-level values, recomputed on demand.
"""

from __future__ import annotations

from typing import Iterable

from .games import CHANCE, History, root
from .sampling import SampleStrategy, corrected_value
from .strategy import StrategyProfile, uniform


class BaselineStore:
    """Per-(history, option, action) running means in player-1 chips."""

    def __init__(self, iteration: int = 0):
        self.mean: dict[tuple[str, int, int], float] = {}
        self.count: dict[tuple[str, int, int], int] = {}
        self.bound = 0.0
        self.iteration = iteration

    def low(self, hkey: str, z: int, a: int) -> float:
        return self.mean.get((hkey, z, a), 0.0)

    def add_target(self, hkey: str, z: int, a: int, value: float):
        k = (hkey, z, a)
        n = self.count.get(k, 0) + 1
        self.count[k] = n
        if n == 1:
            self.mean[k] = value
        else:
            self.mean[k] += (value - self.mean[k]) / n

    def __len__(self) -> int:
        return len(self.mean)


def high_baseline(store, hkey: str, z: int, actions: list[int],
                  low_dist: list[float]) -> float:
    """Option-level value: the low strategy's weighted action-level values."""
    return sum(p * store.low(hkey, z, a) for p, a in zip(low_dist, actions))


def sampled_baseline_targets(terminal: History, prev, sigma_next: StrategyProfile,
                             sampler_q: SampleStrategy) -> dict:
    """Regression targets for every transition along one trajectory.

    Walks the trajectory backward from its terminal payoff. At each step the
    running value is first recorded as the target for that (history, option,
    action) key, then lifted one level: off-trajectory branches read the
    previous baseline, the taken branch is importance-corrected by the
    sampling probability the trajectory was drawn under, and both levels are
    mixed with the next profile's strategy (chance keeps its deal weights).
    """
    cfg = terminal.cfg
    steps = []
    h = root(cfg)
    for player, z, a in terminal.moves:
        steps.append((h, z, a))
        h = h.apply((z, a))
    if not h.terminal:
        raise ValueError("trajectory does not end at a terminal history")

    targets: dict[tuple[str, int, int], float] = {}
    v = terminal.utility(1)
    for h, z, a in reversed(steps):
        targets[(h.hkey, z, a)] = v
        acts = h.legal_actions()
        ai = acts.index(a)
        qz = sampler_q.option_dist(h)[z]
        qa = sampler_q.action_dist(h, z)[ai]
        if h.player == CHANCE:
            sigma_high = [1.0]
            lows = [uniform(len(acts))]
        else:
            key = h.info_key()
            sigma_high = sigma_next.high_dist(key, cfg.num_options)
            lows = [sigma_next.low_dist(key, zz, len(acts))
                    for zz in range(cfg.num_options)]
        b_rows = [[prev.low(h.hkey, zz, act) for act in acts]
                  for zz in range(len(sigma_high))]
        b_high = [sum(p * b for p, b in zip(lows[zz], b_rows[zz]))
                  for zz in range(len(sigma_high))]

        bhat_low = list(b_rows[z])
        bhat_low[ai] = corrected_value(qa, b_rows[z][ai], v)
        bhat_z = sum(p * x for p, x in zip(lows[z], bhat_low))

        bhat_high = list(b_high)
        bhat_high[z] = corrected_value(qz, b_high[z], bhat_z)
        v = sum(p * x for p, x in zip(sigma_high, bhat_high))
    return targets


def fit_baseline(terminals: Iterable[History], prev,
                 sigma_next: StrategyProfile, sampler_q: SampleStrategy,
                 iteration: int = 0) -> BaselineStore:
    """Fold one iteration's trajectory buffer into the baseline table.

    When ``prev`` is a ``BaselineStore``, its means, counts, and payoff bound
    seed the new store and the buffer's targets continue the per-key running
    means; otherwise the fit starts cold and per-key values are exactly the
    arithmetic means of the buffer's targets — the minimizer of the squared
    fitting loss. Every stored mean is then projected into the payoff range
    observed so far. An empty buffer over a cold ``prev`` yields a cold
    (all-zero) store.
    """
    store = BaselineStore(iteration)
    if isinstance(prev, BaselineStore):
        store.mean.update(prev.mean)
        store.count.update(prev.count)
        store.bound = prev.bound
    for terminal in terminals:
        store.bound = max(store.bound, abs(terminal.utility(1)))
        for (hkey, z, a), target in sampled_baseline_targets(
                terminal, prev, sigma_next, sampler_q).items():
            store.add_target(hkey, z, a, target)
    for key, value in store.mean.items():
        if value > store.bound:
            store.mean[key] = store.bound
        elif value < -store.bound:
            store.mean[key] = -store.bound
    return store
