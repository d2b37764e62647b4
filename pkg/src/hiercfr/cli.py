"""Command-line surface: configure runs, train, evaluate, and ship strategies.

An experiment is described by one config file (TOML or JSON) with three
sections — ``game``, ``solver``, ``output`` — validated strictly: unknown
fields are rejected by their dotted name so typos never pass silently. Every
artifact a command writes is stamped with the game's config hash and the run
seed, and ``eval``/``match`` refuse to compare strategies whose hashes
disagree. All randomness in a run derives from the single ``solver.seed``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .evaluation import exploitability, head_to_head
from .games import GameConfig, count_base_tree, kuhn_config, leduc_family
from .strategy import StrategyProfile, load_strategy, save_strategy
from .tabular import METRIC_COLUMNS, run_hcfr
from .trainer import (TRAINER_METRIC_COLUMNS, Trainer, TrainerConfig,
                      freeze_skills, save_checkpoint, warm_start_skills)

log = logging.getLogger(__name__)


class CliError(ValueError):
    """A user-facing failure: bad config, bad file, or refused operation."""


class ConfigError(CliError):
    """A config file violates the experiment schema."""


# ---------------------------------------------------------------------------
# Experiment config: schema, loading, validation.
# ---------------------------------------------------------------------------

_GAME_KINDS = ("kuhn", "leduc", "leduc_10", "leduc_15", "leduc_20")
_TIERS = ("tabular", "mc", "hdcfr")
_FORMATS = ("csv", "json", "bin")

_GAME_FIELDS = {
    "kind": str, "num_options": int, "ranks": int, "suits": int,
    "raise_cap_per_round": int, "stack": int, "bet_sizes": list,
    "big_blind": int, "ante": int, "label": str,
}
_SOLVER_FIELDS = {
    "tier": str, "iterations": int, "traversals": int, "epsilon": (int, float),
    "match_mode": str, "reservoir_capacity": int, "eval_every": int,
    "seed": int, "baseline": str,
}
_OUTPUT_FIELDS = {"directory": str, "formats": list}

_TYPE_NAMES = {str: "a string", int: "an integer", list: "a list",
               (int, float): "a number"}


@dataclass
class ExperimentConfig:
    """One fully-resolved run: the game, the solver knobs, and where output goes."""

    cfg: GameConfig
    tier: str
    iterations: int
    traversals: int | None
    epsilon: float
    match_mode: str
    reservoir_capacity: int | None
    eval_every: int | None
    seed: int
    baseline: str
    out_dir: str
    formats: list[str]


def _check_fields(section: str, data, spec: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a table of fields")
    for field, value in data.items():
        if field not in spec:
            raise ConfigError(f"unknown field: {section}.{field}")
        want = spec[field]
        if isinstance(value, bool) or not isinstance(value, want):
            raise ConfigError(
                f"{section}.{field} must be {_TYPE_NAMES[want]}, "
                f"got {value!r}")


def _require(data: dict, section: str, field: str, note: str = ""):
    if field not in data:
        raise ConfigError(f"missing required field: {section}.{field}{note}")
    return data[field]


def _enum(section: str, field: str, value, choices):
    if value not in choices:
        raise ConfigError(
            f"{section}.{field} must be one of {', '.join(choices)}; "
            f"got {value!r}")
    return value


def _positive(section: str, field: str, value):
    if value <= 0:
        raise ConfigError(f"{section}.{field} must be positive, got {value}")
    return value


def _parse_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix == ".toml":
            return tomllib.loads(text)
        if path.suffix == ".json":
            return json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(
        f"{path}: unsupported config format {path.suffix!r} (use .toml or .json)")


def _build_game(game: dict) -> GameConfig:
    _check_fields("game", game, _GAME_FIELDS)
    kind = _enum("game", "kind", _require(game, "game", "kind"), _GAME_KINDS)
    num_options = game.get("num_options", 2 if kind == "kuhn" else 3)
    _positive("game", "num_options", num_options)
    overrides = {k: v for k, v in game.items()
                 if k not in ("kind", "num_options")}
    if "bet_sizes" in overrides:
        sizes = overrides["bet_sizes"]
        if not sizes or not all(isinstance(x, int) and not isinstance(x, bool)
                                for x in sizes):
            raise ConfigError(
                "game.bet_sizes must be a non-empty list of integers")
        overrides["bet_sizes"] = tuple(sizes)
    if kind == "kuhn":
        return kuhn_config(num_options=num_options, **overrides)
    cfg = leduc_family(kind, num_options)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def load_experiment(path) -> ExperimentConfig:
    """Parse and validate one experiment config file."""
    doc = _parse_config_file(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table of sections")
    for section in doc:
        if section not in ("game", "solver", "output"):
            raise ConfigError(f"unknown section: {section}")
    if "game" not in doc:
        raise ConfigError("missing required section: game")
    if "solver" not in doc:
        raise ConfigError("missing required section: solver")

    cfg = _build_game(doc["game"])

    solver = doc["solver"]
    _check_fields("solver", solver, _SOLVER_FIELDS)
    tier = _enum("solver", "tier", _require(solver, "solver", "tier"), _TIERS)
    iterations = _positive("solver", "iterations",
                           _require(solver, "solver", "iterations"))
    traversals = solver.get("traversals")
    if tier != "tabular":
        _positive("solver", "traversals",
                  _require(solver, "solver", "traversals",
                           note=f" (required for tier {tier!r})"))
        traversals = solver["traversals"]
    epsilon = float(solver.get("epsilon", 1.0))
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"solver.epsilon must lie in [0, 1], got {epsilon}")
    match_mode = _enum("solver", "match_mode",
                       solver.get("match_mode", "uniform"),
                       ("uniform", "greedy"))
    reservoir = solver.get("reservoir_capacity")
    if reservoir is not None:
        _positive("solver", "reservoir_capacity", reservoir)
        if tier != "hdcfr":
            raise ConfigError(
                "solver.reservoir_capacity applies only to tier 'hdcfr'")
    eval_every = solver.get("eval_every")
    if eval_every is not None:
        _positive("solver", "eval_every", eval_every)
    seed = solver.get("seed", 0)
    baseline = _enum("solver", "baseline", solver.get("baseline", "learned"),
                     ("learned", "zero"))

    output = doc.get("output", {})
    _check_fields("output", output, _OUTPUT_FIELDS)
    out_dir = output.get("directory", "out")
    formats = output.get("formats", list(_FORMATS))
    for fmt in formats:
        if fmt not in _FORMATS:
            raise ConfigError(
                f"output.formats contains unknown format {fmt!r}; "
                f"choose from {', '.join(_FORMATS)}")

    return ExperimentConfig(cfg=cfg, tier=tier, iterations=iterations,
                            traversals=traversals, epsilon=epsilon,
                            match_mode=match_mode,
                            reservoir_capacity=reservoir,
                            eval_every=eval_every, seed=seed,
                            baseline=baseline, out_dir=out_dir,
                            formats=list(formats))


def _apply_overrides(exp: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        exp.seed = args.seed
    if getattr(args, "out", None) is not None:
        exp.out_dir = args.out
    if getattr(args, "eval_every", None) is not None:
        _positive("solver", "eval_every", args.eval_every)
        exp.eval_every = args.eval_every
    return exp


# ---------------------------------------------------------------------------
# Artifacts. Every file carries the config hash and the seed; metrics.csv
# keeps a stable per-tier column set under a one-line provenance comment.
# ---------------------------------------------------------------------------

SKILLS_FORMAT = "hiercfr-skills"
SKILLS_VERSION = 1


def write_metrics_csv(path, columns, rows, config_hash: str, seed):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash} seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(col) is None else row.get(col)
                             for col in columns])


def _dump_json(path, doc: dict):
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def skills_document(low_tables: dict, meta: dict) -> dict:
    return {
        "format": SKILLS_FORMAT,
        "version": SKILLS_VERSION,
        "game": meta["game"],
        "config_hash": meta["config_hash"],
        "num_options": meta["num_options"],
        "iterations": meta["iterations"],
        "seed": meta["seed"],
        "low": {key: {str(z): list(dist) for z, dist in per_z.items()}
                for key, per_z in low_tables.items()},
    }


def load_skills(path) -> tuple[dict, dict]:
    """Read a skills file back as (low tables, full document)."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("format") != SKILLS_FORMAT:
        raise CliError(f"{path}: not a skills file")
    if doc.get("version") != SKILLS_VERSION:
        raise CliError(f"{path}: unsupported skills version {doc.get('version')!r}")
    low = {key: {int(z): [float(x) for x in dist] for z, dist in per_z.items()}
           for key, per_z in doc["low"].items()}
    return low, doc


def _game_from_meta(meta: dict) -> GameConfig:
    game = dict(meta["game"])
    game["bet_sizes"] = tuple(game["bet_sizes"])
    return GameConfig(**game)


def _check_hashes(paths, metas, want: str | None = None, source: str = "config"):
    hashes = [meta["config_hash"] for meta in metas]
    if want is not None:
        for path, found in zip(paths, hashes):
            if found != want:
                raise CliError(
                    f"config hash mismatch: {path} was produced under "
                    f"{found}, the {source} gives {want}")
    if len(set(hashes)) > 1:
        raise CliError(
            "config hash mismatch between strategy files: "
            + ", ".join(f"{p}={h}" for p, h in zip(paths, hashes)))
    return hashes[0]


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------

def _build_trainer(exp: ExperimentConfig, threads: int) -> Trainer:
    return Trainer(TrainerConfig(
        cfg=exp.cfg, iterations=exp.iterations, traversals=exp.traversals,
        epsilon=exp.epsilon, seed=exp.seed, match_mode=exp.match_mode,
        eval_every=exp.eval_every, tier=exp.tier, baseline=exp.baseline,
        reservoir_capacity=exp.reservoir_capacity, threads=threads))


def _train_and_emit(exp: ExperimentConfig, threads: int,
                    trainer: Trainer | None = None,
                    extra: dict | None = None) -> int:
    out = Path(exp.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if exp.tier == "tabular":
        profile, metrics = run_hcfr(exp.cfg, exp.iterations, exp.match_mode,
                                    eval_every=exp.eval_every)
        columns = METRIC_COLUMNS
    else:
        if trainer is None:
            trainer = _build_trainer(exp, threads)
        profile, metrics = trainer.run()
        columns = TRAINER_METRIC_COLUMNS

    config_hash = exp.cfg.config_hash()
    print(f"game {exp.cfg.label} (config {config_hash}), tier {exp.tier}, "
          f"seed {exp.seed}, {exp.iterations} iterations")
    final = metrics[-1].get("exploitability_mbbg") if metrics else None
    if final is not None:
        print(f"final exploitability: {final:.3f} mbb/g")

    if "csv" in exp.formats:
        path = out / "metrics.csv"
        write_metrics_csv(path, columns, metrics, config_hash, exp.seed)
        print(f"wrote {path}")
    if "json" in exp.formats:
        path = out / "strategy.json"
        save_strategy(path, profile, exp.cfg, exp.iterations, exp.seed,
                      extra={"tier": exp.tier, **(extra or {})})
        print(f"wrote {path}")
    if "bin" in exp.formats and exp.tier != "tabular":
        path = out / "checkpoint.bin"
        save_checkpoint(trainer, path)
        print(f"wrote {path}")
    return 0


def cmd_train(args) -> int:
    exp = _apply_overrides(load_experiment(args.config), args)
    return _train_and_emit(exp, args.threads)


def cmd_eval(args) -> int:
    if len(args.strategy) > 2:
        raise CliError("eval takes one strategy file, or two to pit head-to-head")
    loaded = [load_strategy(path) for path in args.strategy]
    metas = [meta for _, meta in loaded]
    want = None
    if args.config is not None:
        want = load_experiment(args.config).cfg.config_hash()
    config_hash = _check_hashes(args.strategy, metas, want)
    cfg = _game_from_meta(metas[0])

    report = {"config_hash": config_hash, "seed": args.seed}
    if len(loaded) == 1:
        value = exploitability(loaded[0][0], cfg)
        report["exploitability_mbbg"] = value
        print(f"exploitability: {value:.3f} mbb/g (config {config_hash})")
    else:
        mean, ci = head_to_head(loaded[0][0], loaded[1][0], cfg,
                                args.games, args.seed)
        report.update(games=args.games, mean_mbbg=mean, ci95_mbbg=ci,
                      strategy_a=str(args.strategy[0]),
                      strategy_b=str(args.strategy[1]))
        print(f"head-to-head: {mean:+.1f} ± {ci:.1f} mbb/g for "
              f"{args.strategy[0]} over {args.games} hands")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "eval.json"
        _dump_json(path, report)
        print(f"wrote {path}")
    return 0


def cmd_match(args) -> int:
    loaded = [load_strategy(path) for path in (args.strategy_a, args.strategy_b)]
    config_hash = _check_hashes((args.strategy_a, args.strategy_b),
                                [meta for _, meta in loaded])
    cfg = _game_from_meta(loaded[0][1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    transcript = out / "transcript.ndjson"
    mean, ci = head_to_head(loaded[0][0], loaded[1][0], cfg, args.games,
                            args.seed, transcript_path=transcript)
    report = {
        "format": "hiercfr-match", "version": 1,
        "config_hash": config_hash, "seed": args.seed, "games": args.games,
        "mean_mbbg": mean, "ci95_mbbg": ci,
        "strategy_a": str(args.strategy_a), "strategy_b": str(args.strategy_b),
    }
    path = out / "match.json"
    _dump_json(path, report)
    print(f"match: {mean:+.1f} ± {ci:.1f} mbb/g for {args.strategy_a} "
          f"over {args.games} hands")
    print(f"wrote {transcript}")
    print(f"wrote {path}")
    return 0


def cmd_export_skills(args) -> int:
    profile, meta = load_strategy(args.strategy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "skills.json"
    _dump_json(path, skills_document(profile.low, meta))
    print(f"wrote {path} ({len(profile.low)} low-level tables)")
    return 0


def cmd_import_skills(args) -> int:
    exp = _apply_overrides(load_experiment(args.config), args)
    if exp.tier == "tabular":
        raise CliError("import-skills requires a sampled tier (mc or hdcfr)")
    low, _doc = load_skills(args.skills)
    source = StrategyProfile(low=low)
    trainer = _build_trainer(exp, args.threads)
    if args.frozen:
        freeze_skills(source, trainer)
        mapped = len(trainer.frozen_low)
    else:
        warm_start_skills(source, trainer)
        mapped = len(trainer.seed_low)
    unmapped = len(low) - mapped
    mode = "frozen" if args.frozen else "warm-start"
    print(f"{mode} import: {mapped} low-level tables mapped, "
          f"{unmapped} unmappable")
    return _train_and_emit(exp, args.threads, trainer=trainer,
                           extra={"skills": mode})


def cmd_count_tree(args) -> int:
    exp = load_experiment(args.config)
    nodes = count_base_tree(exp.cfg)
    print(f"{exp.cfg.label}: {nodes} nodes (config {exp.cfg.config_hash()})")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

def _add_run_flags(parser):
    parser.add_argument("--config", required=True,
                        help="experiment config file (.toml or .json)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override solver.seed")
    parser.add_argument("--out", default=None,
                        help="override output.directory")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for sampled tiers")
    parser.add_argument("--eval-every", type=int, default=None,
                        dest="eval_every", help="override solver.eval_every")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiercfr",
        description="Hierarchical CFR solvers for two-player zero-sum "
                    "betting games.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    for name in ("solve", "train"):
        p = sub.add_parser(name, help="run the configured solver and write "
                                      "strategy artifacts")
        _add_run_flags(p)
        p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="exploitability of one strategy, or "
                                    "head-to-head value of two")
    p.add_argument("strategy", nargs="+", help="strategy.json file(s)")
    p.add_argument("--config", default=None,
                   help="refuse strategies not trained under this config")
    p.add_argument("--games", type=int, default=10000,
                   help="hands for head-to-head evaluation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="also write eval.json here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("match", help="play two strategies and record a "
                                     "hand-by-hand transcript")
    p.add_argument("strategy_a")
    p.add_argument("strategy_b")
    p.add_argument("--games", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("export-skills", help="extract a strategy's low-level "
                                             "tables into skills.json")
    p.add_argument("strategy")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_export_skills)

    p = sub.add_parser("import-skills", help="train with low-level play "
                                             "seeded (or pinned) from a "
                                             "skills file")
    p.add_argument("skills", help="skills.json file")
    p.add_argument("--frozen", action="store_true",
                   help="pin the imported tables; train high level only")
    _add_run_flags(p)
    p.set_defaults(func=cmd_import_skills)

    p = sub.add_parser("count-tree", help="count the base game's public "
                                          "tree nodes")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_count_tree)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
