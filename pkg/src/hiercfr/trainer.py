"""Sampled-training orchestration: iteration loop, buffer lifecycle, refits.

Each iteration: both players take a turn as traverser, running K rollouts
against the current profile with the current baseline; regret estimates feed
the traverser's regret model, strategy snapshots feed the *other* player's
average-strategy means, and player 1's terminals feed the baseline refit. The
next iteration's profile regret-matches the just-updated models, and the
baseline targets are built from that next profile plus the sampler actually
used this iteration.

Two sampled tiers share the loop and differ only in regret aggregation:
``hdcfr`` fits per-key means over everything collected (with an optional
reservoir cap, under which models are refit from the bounded buffers every
iteration); ``mc`` adds estimates into cumulative per-key sums, classic
outcome-sampling style. Regret matching is scale-free per key, so at
unbounded capacity the two aggregations induce the same strategies up to
float noise; they are kept as separately checkable artifacts.

Everything is deterministic given (config, seed): rollout k of iteration t
for traverser i draws from its own derived generator, so a threaded run
merges shard records in slice order and matches the serial run exactly.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import statistics
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import chain

from . import evaluation
from .baseline import BaselineStore, fit_baseline
from .games import GameConfig
from .regression import (
    RegretBuffer,
    TabularRegressor,
    fit_regret,
    model_update,
    new_regret_model,
    profile_from_model,
    strategy_profile_from_means,
)
from .sampling import SampleStrategy, ZeroBaseline, collect_traversals
from .strategy import RegretStore, StrategyProfile, strategy_from_regrets

log = logging.getLogger(__name__)

TRAINER_METRIC_COLUMNS = ["iteration", "exploitability_mbbg", "rhat_variance",
                          "regret_entries", "strategy_entries"]

_TIERS = ("hdcfr", "mc")
_BASELINES = ("learned", "zero")


@dataclass
class TrainerConfig:
    """Knobs for one sampled-training run."""

    cfg: GameConfig
    iterations: int
    traversals: int
    epsilon: float = 1.0
    seed: int = 0
    match_mode: str = "uniform"
    eval_every: int | None = None
    tier: str = "hdcfr"
    baseline: str = "learned"
    reservoir_capacity: int | None = None
    threads: int = 1

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.traversals <= 0:
            raise ValueError("traversals per iteration must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.tier not in _TIERS:
            raise ValueError(f"unknown tier {self.tier!r}; choose from {_TIERS}")
        if self.baseline not in _BASELINES:
            raise ValueError(
                f"unknown baseline mode {self.baseline!r}; choose from {_BASELINES}")
        if self.match_mode not in ("uniform", "greedy"):
            raise ValueError(f"unknown regret-match mode {self.match_mode!r}")
        if self.reservoir_capacity is not None:
            if self.tier != "hdcfr":
                raise ValueError("reservoir capacity applies to the hdcfr tier only")
            if self.reservoir_capacity <= 0:
                raise ValueError("reservoir capacity must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.eval_every is not None and self.eval_every <= 0:
            raise ValueError("eval cadence must be positive")


class Trainer:
    """Mutable run state; drive with run() or one run_iteration() at a time."""

    def __init__(self, config: TrainerConfig):
        self.config = config
        self.t = 0
        # hdcfr aggregation: per-player mean models, optionally backed by
        # bounded reservoir buffers that force from-scratch refits.
        self.models = {1: new_regret_model(), 2: new_regret_model()}
        self.buffers = None
        if config.reservoir_capacity is not None:
            self.buffers = {
                i: RegretBuffer(config.reservoir_capacity, seed=config.seed + i)
                for i in (1, 2)}
        # mc aggregation: cumulative sums shared across both players' keys.
        self.mc_store = RegretStore()
        # Average-strategy sufficient statistics (per-key means + counts) —
        # identical to fitting over an unbounded snapshot buffer, entry order
        # being the same.
        self.avg_high = {1: TabularRegressor("uniform"), 2: TabularRegressor("uniform")}
        self.avg_low = {1: TabularRegressor("uniform"), 2: TabularRegressor("uniform")}
        self.baseline_store = BaselineStore()
        self.frozen_low: dict[str, dict[int, list[float]]] | None = None
        self.seed_low: dict[str, dict[int, list[float]]] | None = None
        self.metrics: list[dict] = []
        self.variances: list[float] = []

    # -- profiles -----------------------------------------------------------

    def current_profile(self) -> StrategyProfile:
        """σ for the next traversal block, regret-matched from current state."""
        mode = self.config.match_mode
        if self.config.tier == "mc":
            profile = strategy_from_regrets(self.mc_store, mode)
        else:
            profile = profile_from_model(self.models[1], mode)
            other = profile_from_model(self.models[2], mode)
            profile.high.update(other.high)
            profile.low.update(other.low)
        if self.frozen_low is not None:
            profile.low = {key: {z: list(d) for z, d in per_z.items()}
                           for key, per_z in self.frozen_low.items()}
        elif self.seed_low is not None:
            for key, per_z in self.seed_low.items():
                target = profile.low.setdefault(key, {})
                for z, dist in per_z.items():
                    if z not in target:
                        target[z] = list(dist)
        return profile

    def average_profile(self) -> StrategyProfile:
        """Mean of recorded strategy snapshots — the returned equilibrium."""
        profile = strategy_profile_from_means(
            chain(self.avg_high[1].mean.items(), self.avg_high[2].mean.items()),
            chain(self.avg_low[1].mean.items(), self.avg_low[2].mean.items()))
        if self.frozen_low is not None:
            profile.low = {key: {z: list(d) for z, d in per_z.items()}
                           for key, per_z in self.frozen_low.items()}
        return profile

    # -- one iteration ------------------------------------------------------

    def _collect(self, profile, baseline, t, traverser):
        c = self.config
        workers = min(c.threads, c.traversals)
        if workers <= 1:
            return collect_traversals(c.cfg, profile, baseline, c.traversals,
                                      t, traverser, c.epsilon, c.seed)
        base, extra = divmod(c.traversals, workers)
        shards = []
        offset = 0
        for w in range(workers):
            size = base + (1 if w < extra else 0)
            shards.append((offset, size))
            offset += size
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(collect_traversals, c.cfg, profile, baseline, size,
                            t, traverser, c.epsilon, c.seed, False, False, off)
                for off, size in shards]
            merged = None
            for fut in futures:  # slice order == serial order
                rec = fut.result()
                if merged is None:
                    merged = rec
                else:
                    merged.merge(rec)
        return merged

    def _ingest(self, traverser: int, record):
        c = self.config
        if c.tier == "mc":
            for key, _t, vec in record.regret_high:
                self.mc_store.add_high(key, vec)
            for key, z, _t, vec in record.regret_low:
                self.mc_store.add_low(key, z, vec)
        elif self.buffers is not None:
            self.buffers[traverser].ingest(record)
        else:
            model_update(self.models[traverser], record)

        other = 3 - traverser
        prefix = f"p{other}|"
        for key, _t, dist in record.strategy_high:
            if not key.startswith(prefix):
                raise RuntimeError(
                    f"strategy snapshot for {key!r} recorded in player {other}'s turn")
            self.avg_high[other].add(key, dist)
        for key, z, _t, dist in record.strategy_low:
            if not key.startswith(prefix):
                raise RuntimeError(
                    f"strategy snapshot for {key!r} recorded in player {other}'s turn")
            self.avg_low[other].add((key, z), dist)

    def run_iteration(self):
        c = self.config
        t = self.t + 1
        profile_t = self.current_profile()
        baseline = (self.baseline_store if c.baseline == "learned"
                    else ZeroBaseline())
        terminals: dict[int, list] = {}
        components: list[float] = []
        for i in (1, 2):
            record = self._collect(profile_t, baseline, t, i)
            if self.frozen_low is not None:
                record.regret_low = []
                record.strategy_low = []
            for _key, _t2, vec in record.regret_high:
                components.extend(vec)
            for _key, _z, _t2, vec in record.regret_low:
                components.extend(vec)
            self._ingest(i, record)
            terminals[i] = record.terminals
        if self.buffers is not None:
            for i in (1, 2):
                self.models[i] = fit_regret(self.buffers[i])

        # Baseline targets mix the *next* profile (from the just-updated
        # regret state) with the sampler the trajectories were drawn under.
        # Both blocks' trajectories carry player-1 payoffs, so both feed the
        # fit, each corrected under its own block's sampler.
        if c.baseline == "learned":
            sigma_next = self.current_profile()
            for i in (1, 2):
                self.baseline_store = fit_baseline(
                    terminals[i], self.baseline_store, sigma_next,
                    SampleStrategy(i, profile_t, c.epsilon), iteration=t)

        self.variances.append(
            statistics.pvariance(components) if len(components) > 1 else 0.0)
        self.t = t

    # -- full run -----------------------------------------------------------

    def _regret_entries(self) -> int:
        if self.config.tier == "mc":
            return (len(self.mc_store.high)
                    + sum(len(v) for v in self.mc_store.low.values()))
        if self.buffers is not None:
            return sum(len(b) for b in self.buffers.values())
        return sum(len(m.high.count) + len(m.low.count)
                   for m in self.models.values())

    def _strategy_entries(self) -> int:
        return sum(sum(r.count.values()) for r in
                   chain(self.avg_high.values(), self.avg_low.values()))

    def _evaluate(self) -> dict:
        row = {
            "iteration": self.t,
            "exploitability_mbbg": None,
            "rhat_variance": self.variances[-1] if self.variances else 0.0,
            "regret_entries": self._regret_entries(),
            "strategy_entries": self._strategy_entries(),
        }
        try:
            row["exploitability_mbbg"] = evaluation.exploitability(
                self.average_profile(), self.config.cfg)
        except Exception:
            log.warning("evaluation failed at iteration %d", self.t, exc_info=True)
        return row

    def run(self) -> tuple[StrategyProfile, list[dict]]:
        c = self.config
        while self.t < c.iterations:
            self.run_iteration()
            due = c.eval_every is not None and self.t % c.eval_every == 0
            if due or self.t == c.iterations:
                self.metrics.append(self._evaluate())
        return self.average_profile(), self.metrics


def run_hdcfr(config: TrainerConfig) -> tuple[StrategyProfile, list[dict]]:
    """Run a full sampled-training session and return (profile, metrics)."""
    return Trainer(config).run()


def map_low_tables(profile_source: StrategyProfile,
                   trainer: Trainer) -> tuple[dict[str, dict[int, list[float]]], int]:
    """Match source low-level tables onto the trainer's game, structurally.

    A source entry applies where the target game has an infoset with the same
    key and action count; mismatched action counts or out-of-range options are
    a validation error. Returns (mapped tables, count of unmappable keys).
    """
    from .tabular import GameTree  # deferred: enumeration is desk-scale only

    cfg = trainer.config.cfg
    tree = GameTree(cfg)
    mapped: dict[str, dict[int, list[float]]] = {}
    unmapped = 0
    target_keys = {key: len(acts) for key, acts in tree.actions_at.items()}
    for key, per_z in profile_source.low.items():
        n_actions = target_keys.get(key)
        if n_actions is None:
            unmapped += 1
            continue
        table: dict[int, list[float]] = {}
        for z, dist in per_z.items():
            if not 0 <= z < cfg.num_options:
                raise ValueError(
                    f"skill option {z} at {key!r} outside the game's option set")
            if len(dist) != n_actions:
                raise ValueError(
                    f"skill table at {key!r} has {len(dist)} actions; "
                    f"the game has {n_actions}")
            table[z] = list(dist)
        mapped[key] = table
    if not mapped:
        raise ValueError("no source skill tables map onto this game")
    return mapped, unmapped


def freeze_skills(profile_source: StrategyProfile, trainer: Trainer) -> Trainer:
    """Pin low-level strategies to the source profile's tables.

    From then on only high-level regrets are collected and fit; low-level
    regret and snapshot records are dropped, and every emitted profile carries
    the frozen tables verbatim. Target keys with no source entry fall back to
    uniform play.
    """
    frozen, unmapped = map_low_tables(profile_source, trainer)
    if unmapped:
        log.info("freeze_skills: %d source keys have no counterpart and were dropped",
                 unmapped)
    trainer.frozen_low = frozen
    return trainer


def warm_start_skills(profile_source: StrategyProfile, trainer: Trainer) -> Trainer:
    """Seed low-level play from the source tables without pinning them.

    Seeded entries stand in for the uniform default at keys the low-level
    models have not yet fit; once regret data arrives for a key, the fitted
    strategy takes over and adapts freely.
    """
    seeded, unmapped = map_low_tables(profile_source, trainer)
    if unmapped:
        log.info("warm_start_skills: %d source keys have no counterpart and were "
                 "dropped", unmapped)
    trainer.seed_low = seeded
    return trainer


# ---------------------------------------------------------------------------
# Checkpoints. A small versioned binary container: magic, format version,
# then a canonical-JSON snapshot of everything except replay buffers. For
# unbounded runs the stored mean/count tables are sufficient statistics, so a
# resumed run continues bit-identically; reservoir contents are not saved,
# and resuming such a run is refused rather than silently drifting.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"HCFRCKPT"
CHECKPOINT_VERSION = 1


def _reg_payload(reg: TabularRegressor, low_keys: bool) -> list:
    if low_keys:
        return [[key, z, vec, reg.count[(key, z)]]
                for (key, z), vec in reg.mean.items()]
    return [[key, vec, reg.count[key]] for key, vec in reg.mean.items()]


def _reg_restore(reg: TabularRegressor, payload: list, low_keys: bool):
    for entry in payload:
        if low_keys:
            key, z, vec, count = entry
            key = (key, z)
        else:
            key, vec, count = entry
        reg.mean[key] = list(vec)
        reg.count[key] = count


def _low_tables_payload(tables: dict[str, dict[int, list[float]]] | None):
    if tables is None:
        return None
    return [[key, z, dist] for key, per_z in tables.items()
            for z, dist in per_z.items()]


def _low_tables_restore(payload) -> dict[str, dict[int, list[float]]] | None:
    if payload is None:
        return None
    tables: dict[str, dict[int, list[float]]] = {}
    for key, z, dist in payload:
        tables.setdefault(key, {})[z] = list(dist)
    return tables


def save_checkpoint(trainer: Trainer, path):
    c = trainer.config
    body = {
        "format": "hiercfr-checkpoint",
        "game": dataclasses.asdict(c.cfg),
        "config_hash": c.cfg.config_hash(),
        "solver": {
            "iterations": c.iterations, "traversals": c.traversals,
            "epsilon": c.epsilon, "seed": c.seed, "match_mode": c.match_mode,
            "eval_every": c.eval_every, "tier": c.tier, "baseline": c.baseline,
            "reservoir_capacity": c.reservoir_capacity, "threads": c.threads,
        },
        "iteration": trainer.t,
        "models": {
            str(i): {"high": _reg_payload(m.high, False),
                     "low": _reg_payload(m.low, True)}
            for i, m in trainer.models.items()},
        "mc_store": {
            "high": [[k, v] for k, v in trainer.mc_store.high.items()],
            "low": [[k, z, v] for k, per_z in trainer.mc_store.low.items()
                    for z, v in per_z.items()],
        },
        "avg": {
            str(i): {"high": _reg_payload(trainer.avg_high[i], False),
                     "low": _reg_payload(trainer.avg_low[i], True)}
            for i in (1, 2)},
        "baseline": {
            "iteration": trainer.baseline_store.iteration,
            "bound": trainer.baseline_store.bound,
            "entries": [[k[0], k[1], k[2], m, trainer.baseline_store.count[k]]
                        for k, m in trainer.baseline_store.mean.items()],
        },
        "frozen_low": _low_tables_payload(trainer.frozen_low),
        "seed_low": _low_tables_payload(trainer.seed_low),
        "variances": trainer.variances,
        "metrics": trainer.metrics,
    }
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(blob)


def load_checkpoint(path, iterations: int | None = None) -> Trainer:
    """Rebuild a Trainer mid-run; optionally retarget the total iterations."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version = struct.unpack("<I", raw[8:12])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    body = json.loads(raw[12:].decode())

    game = dict(body["game"])
    game["bet_sizes"] = tuple(game["bet_sizes"])
    solver = dict(body["solver"])
    if solver.get("reservoir_capacity") is not None:
        raise ValueError(
            "reservoir buffers are not checkpointed; this run cannot resume")
    if iterations is not None:
        solver["iterations"] = iterations
    trainer = Trainer(TrainerConfig(cfg=GameConfig(**game), **solver))
    trainer.t = body["iteration"]
    if trainer.t > trainer.config.iterations:
        raise ValueError(
            f"checkpoint is at iteration {trainer.t}, past the target "
            f"{trainer.config.iterations}")
    for i in (1, 2):
        payload = body["models"][str(i)]
        _reg_restore(trainer.models[i].high, payload["high"], False)
        _reg_restore(trainer.models[i].low, payload["low"], True)
        payload = body["avg"][str(i)]
        _reg_restore(trainer.avg_high[i], payload["high"], False)
        _reg_restore(trainer.avg_low[i], payload["low"], True)
    for key, vec in body["mc_store"]["high"]:
        trainer.mc_store.high[key] = list(vec)
    for key, z, vec in body["mc_store"]["low"]:
        trainer.mc_store.low.setdefault(key, {})[z] = list(vec)
    trainer.baseline_store.iteration = body["baseline"]["iteration"]
    trainer.baseline_store.bound = body["baseline"].get("bound", 0.0)
    for hkey, z, a, mean, count in body["baseline"]["entries"]:
        trainer.baseline_store.mean[(hkey, z, a)] = mean
        trainer.baseline_store.count[(hkey, z, a)] = count
    trainer.frozen_low = _low_tables_restore(body["frozen_low"])
    trainer.seed_low = _low_tables_restore(body.get("seed_low"))
    trainer.variances = list(body["variances"])
    trainer.metrics = list(body["metrics"])
    return trainer
