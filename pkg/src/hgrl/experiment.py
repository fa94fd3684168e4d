"""Experiment orchestration: config loading, training, evaluation, exports.

Seeding: every random stream is derived from the master seed plus a fixed
stream id and a counter, e.g. evaluation episode ``i`` uses
``default_rng([seed, EVAL_ENV, i])``, so any episode can be replayed alone
and all managers face the same evaluation graphs.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import env as envmod
from .env import ConfigError, EnvConfig, NetworkPDEnv, types_to_letters
from .graph import edge_list
from .manager import FlatAgent, FlatManager, HgrlManager, LinkAgent, NodeAgent, RandomManager, hgrl_param_count
from .metrics import STEP_COLUMNS, aggregate, mean_std, mean_timeseries, record, summarize_episode
from .nn import load_checkpoint, read_checkpoint, save_checkpoint
from .rl import DqnConfig, train_flat_agent, train_phase1_link_agent, train_phase2_node_agent

log = logging.getLogger(__name__)

MANAGERS = ("hgrl", "flat", "random")

# stream ids for np.random.default_rng([seed, stream, ...])
TRAIN_ENV, EVAL_ENV, AGENT, INIT, EVAL_POLICY = 1, 2, 3, 4, 5

SNAPSHOT_SCHEMA = {
    "format": "hgrl-snapshots",
    "version": 1,
    "record": {
        "t": "int, 0 is the initial graph, t >= 1 is the round played at step t",
        "edges": "list of [u, v] with u < v",
        "types": "list of 'C' or 'D', the types that played this round",
        "utilities": "list of float, per-agent utility of this round",
        "welfare": "float, sum of utilities",
    },
}

CURVE_COLUMNS = ["episode", "mean_epsilon", "episode_return", "loss_mean"]
COMPARE_COLUMNS = ["manager", "p", "avg_welfare_mean", "avg_welfare_std", "final_welfare_mean", "final_welfare_std"]


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    manager: str = "hgrl"
    eval_episodes: int = 1_000
    snapshot_every: int | None = None
    out: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        if self.manager not in MANAGERS:
            raise ConfigError(f"manager must be one of {MANAGERS}, got {self.manager!r}")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be a positive step count or off")

    def to_dict(self) -> dict:
        return {
            "env": self.env.to_dict(),
            "dqn": self.dqn.to_dict(),
            "manager": self.manager,
            "eval_episodes": self.eval_episodes,
            "snapshot_every": self.snapshot_every,
            "out": self.out,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {"env", "dqn", "manager", "eval_episodes", "snapshot_every", "out", "seed", "preset"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in d:
            raise ConfigError("config must set a seed")
        base = preset(d["preset"]) if d.get("preset") else cls()
        env_d = {**base.env.to_dict(), **(d.get("env") or {})}
        if "horizon" not in (d.get("env") or {}) and "n" in (d.get("env") or {}):
            env_d["horizon"] = default_horizon(int(env_d["n"]))
        dqn_d = {**base.dqn.to_dict(), **(d.get("dqn") or {})}
        snap = d.get("snapshot_every", base.snapshot_every)
        if snap in ("off", False, 0):
            snap = None
        return cls(
            env=EnvConfig.from_dict(env_d),
            dqn=DqnConfig.from_dict(dqn_d),
            manager=str(d.get("manager", base.manager)),
            eval_episodes=int(d.get("eval_episodes", base.eval_episodes)),
            snapshot_every=None if snap is None else int(snap),
            out=str(d.get("out", base.out)),
            seed=int(d["seed"]),
        )


def persisted(config: ExperimentConfig) -> dict:
    """Config as written next to results; the output path is left out so runs compare byte for byte."""
    d = config.to_dict()
    del d["out"]
    return d


def default_horizon(n: int) -> int:
    return 100 if n >= 20 else 50


def preset(name: str, n: int = 10) -> ExperimentConfig:
    """``desk``: 10 nodes, 2,000 training / 200 eval episodes. ``paper``: 10,000 / 1,000."""
    if name == "desk":
        return ExperimentConfig(
            env=EnvConfig(n=10, horizon=50), dqn=DqnConfig(episodes=2_000), eval_episodes=200
        )
    if name == "paper":
        return ExperimentConfig(
            env=EnvConfig(n=n, horizon=default_horizon(n)), dqn=DqnConfig(episodes=10_000), eval_episodes=1_000
        )
    raise ConfigError(f"unknown preset {name!r}")


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    try:
        return ExperimentConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def build_agents(config: ExperimentConfig) -> dict:
    h = config.dqn.hidden
    if config.manager == "hgrl":
        return {
            "node": NodeAgent(h, rng=rng_for(config.seed, INIT, 0)),
            "link": LinkAgent(h, rng=rng_for(config.seed, INIT, 1)),
        }
    if config.manager == "flat":
        return {"flat": FlatAgent(config.env.n, rng=rng_for(config.seed, INIT, 2), match_hidden=h)}
    return {}


def make_manager(kind: str, agents: dict):
    if kind == "hgrl":
        return HgrlManager(agents["node"], agents["link"])
    if kind == "flat":
        return FlatManager(agents["flat"])
    return RandomManager()


def train_env_factory(config: ExperimentConfig, phase: int):
    def factory(episode: int) -> NetworkPDEnv:
        return NetworkPDEnv(config.env, rng_for(config.seed, TRAIN_ENV, phase, episode))

    return factory


def phase_episodes(total: int) -> tuple[int, int]:
    """HGRL splits its training budget evenly between the link and node phases."""
    first = total // 2
    return first, total - first


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def parameter_report(config: ExperimentConfig) -> dict:
    return {
        "hgrl": hgrl_param_count(config.dqn.hidden),
        "flat": FlatAgent(config.env.n, match_hidden=config.dqn.hidden).n_params(),
    }


def cmd_train(config: ExperimentConfig, out: Path | None = None) -> dict:
    """Train the configured manager and write checkpoints plus learning curves."""
    if config.manager == "random":
        raise ConfigError("random manager requires no training")
    out = Path(out or config.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    counts = parameter_report(config)
    print(f"parameters: hgrl={counts['hgrl']} flat={counts['flat']}")
    agents = build_agents(config)
    curves = {}
    if config.manager == "hgrl":
        n1, n2 = phase_episodes(config.dqn.episodes)
        curves["link"] = train_phase1_link_agent(
            train_env_factory(config, 1), agents["link"], config.dqn, n1, rng_for(config.seed, AGENT, 1)
        )
        frozen = [p.copy() for p in agents["link"].params()]
        curves["node"] = train_phase2_node_agent(
            train_env_factory(config, 2), agents["link"], agents["node"], config.dqn, n2, rng_for(config.seed, AGENT, 2)
        )
        assert all(np.array_equal(a, b) for a, b in zip(frozen, agents["link"].params()))
    else:
        curves["flat"] = train_flat_agent(
            train_env_factory(config, 3), agents["flat"], config.dqn, config.dqn.episodes, rng_for(config.seed, AGENT, 3)
        )
    meta = {"manager": config.manager, "n": config.env.n, "hidden": config.dqn.hidden}
    for name, agent in agents.items():
        save_checkpoint(out / "checkpoints" / f"{name}.json", agent, {**meta, "agent": name})
    for name, curve in curves.items():
        _write_csv(
            out / f"train_{name}.csv",
            CURVE_COLUMNS,
            ([r.episode, r.mean_epsilon, r.episode_return, r.loss_mean] for r in curve),
        )
    _write_json(out / "config.json", persisted(config))
    return agents


def load_agents(config: ExperimentConfig, checkpoint_dir) -> dict:
    agents = build_agents(config)
    for name, agent in agents.items():
        path = Path(checkpoint_dir) / f"{name}.json"
        if not path.exists():
            raise ConfigError(f"missing checkpoint {path}")
        meta = read_checkpoint(path)["meta"]
        if meta.get("manager") != config.manager or meta.get("n") != config.env.n:
            raise ValueError(
                f"checkpoint {path} was trained for manager={meta.get('manager')} n={meta.get('n')}, "
                f"config asks for manager={config.manager} n={config.env.n}"
            )
        load_checkpoint(path, agent)
    return agents


def snapshot(t: int, adj, types, utilities) -> dict:
    return {
        "t": t,
        "edges": [list(e) for e in edge_list(adj)],
        "types": types_to_letters(types),
        "utilities": [float(u) for u in utilities],
        "welfare": float(np.sum(utilities)),
    }


def run_episode(env: NetworkPDEnv, manager, rng, snapshot_every: int | None = None):
    """Roll out one episode. Returns (EpisodeSummary, snapshots)."""
    state = env.reset()
    initial = record(0, state.adj, state.played_types, state.last_utilities)
    snaps = [snapshot(0, state.adj, state.played_types, state.last_utilities)] if snapshot_every else []
    records = []
    done = False
    while not done:
        state, _, done = env.step(manager.act(state, rng))
        records.append(record(state.t, state.adj, state.played_types, state.last_utilities))
        if snapshot_every and (state.t % snapshot_every == 0 or done):
            snaps.append(snapshot(state.t, state.adj, state.played_types, state.last_utilities))
    return summarize_episode(records, initial), snaps


def evaluate(config: ExperimentConfig, manager, episodes: int | None = None):
    episodes = config.eval_episodes if episodes is None else episodes
    summaries, snapshots = [], []
    for i in range(episodes):
        env = NetworkPDEnv(config.env, rng_for(config.seed, EVAL_ENV, i))
        summary, snaps = run_episode(env, manager, rng_for(config.seed, EVAL_POLICY, i), config.snapshot_every)
        summaries.append(summary)
        snapshots.append(snaps)
    return summaries, snapshots


def cmd_eval(config: ExperimentConfig, checkpoint_dir=None, out: Path | None = None, p_values=None) -> list[dict]:
    """Greedy evaluation; one output directory per imitation probability."""
    base = Path(out or config.out)
    if config.manager == "random":
        agents = {}
    else:
        agents = load_agents(config, checkpoint_dir or base / "checkpoints")
    manager = make_manager(config.manager, agents)
    results = []
    sweep = p_values is not None
    for p in p_values if sweep else [config.env.p_imitate]:
        cfg = replace(config, env=replace(config.env, p_imitate=float(p)))
        target = base / (f"eval_p{float(p)}" if sweep else "eval")
        target.mkdir(parents=True, exist_ok=True)
        summaries, snapshots = evaluate(cfg, manager)
        _write_eval(target, cfg, summaries, snapshots)
        result = {"config": persisted(cfg), "manager": cfg.manager, "p": cfg.env.p_imitate, **aggregate(summaries)}
        finals = [s.series[-1] for s in summaries]
        result["final_avg_degree"] = mean_std([r.avg_degree for r in finals])
        result["initial_avg_degree"] = mean_std([s.initial.avg_degree for s in summaries])
        _write_json(target / "summary.json", result)
        results.append(result)
    return results


def _write_eval(target: Path, cfg: ExperimentConfig, summaries, snapshots) -> None:
    _write_csv(
        target / "episodes.csv",
        ["episode", "avg_welfare", "final_welfare"],
        ([i, s.avg_welfare, s.final_welfare] for i, s in enumerate(summaries)),
    )
    _write_csv(
        target / "steps.csv",
        ["episode"] + STEP_COLUMNS,
        ([i] + r.row() for i, s in enumerate(summaries) for r in s.series),
    )
    ts = mean_timeseries(summaries)
    _write_csv(target / "timeseries.csv", STEP_COLUMNS, ([row[c] for c in STEP_COLUMNS] for row in ts))
    with (target / "snapshots.jsonl").open("w") as fh:
        if cfg.snapshot_every:
            for i, snaps in enumerate(snapshots):
                fh.write(json.dumps({"episode": i, "snapshots": snaps}, sort_keys=True) + "\n")


def cmd_snapshot_export(run_dir, out=None) -> dict:
    """Bundle ``snapshots.jsonl`` from an eval directory into one JSON document."""
    run_dir = Path(run_dir)
    source = run_dir / "snapshots.jsonl"
    if not source.exists():
        candidates = sorted(run_dir.glob("eval*/snapshots.jsonl"))
        if len(candidates) != 1:
            raise FileNotFoundError(f"no unique snapshots.jsonl under {run_dir}")
        source = candidates[0]
    episodes = [json.loads(line) for line in source.read_text().splitlines() if line.strip()]
    bundle = {"schema": SNAPSHOT_SCHEMA, "episodes": episodes}
    target = Path(out) if out else source.parent / "snapshots_bundle.json"
    _write_json(target, bundle)
    return bundle


def _eval_dirs(paths) -> list[Path]:
    dirs = []
    for p in map(Path, paths):
        if (p / "summary.json").exists():
            dirs.append(p)
        else:
            found = sorted(q.parent for q in p.glob("eval*/summary.json"))
            if not found:
                raise FileNotFoundError(f"no evaluation results under {p}")
            dirs.extend(found)
    return dirs


def _read_column(path: Path, column: str) -> list[float]:
    with path.open() as fh:
        return [float(row[column]) for row in csv.DictReader(fh)]


def cmd_compare(paths, out=None) -> list[dict]:
    """Welfare table per (manager, p), recomputed from each run's episodes.csv."""
    dirs = _eval_dirs(paths)
    if len(dirs) < 2:
        raise ValueError("compare needs at least two evaluation runs")
    rows, reference = [], None
    for d in dirs:
        summary = json.loads((d / "summary.json").read_text())
        env_cfg = dict(summary["config"]["env"])
        p = env_cfg.pop("p_imitate")
        env_cfg.pop("seed", None)
        if reference is None:
            reference = env_cfg
        elif env_cfg != reference:
            raise ValueError(f"environment config of {d} differs from {dirs[0]}")
        avg = mean_std(_read_column(d / "episodes.csv", "avg_welfare"))
        fin = mean_std(_read_column(d / "episodes.csv", "final_welfare"))
        rows.append(
            {
                "manager": summary["manager"],
                "p": p,
                "avg_welfare_mean": avg["mean"],
                "avg_welfare_std": avg["std"],
                "final_welfare_mean": fin["mean"],
                "final_welfare_std": fin["std"],
            }
        )
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "compare.csv", COMPARE_COLUMNS, ([r[c] for c in COMPARE_COLUMNS] for r in rows))
        (out / "compare.txt").write_text(format_table(rows) + "\n")
    return rows


def format_table(rows: list[dict]) -> str:
    cells = [COMPARE_COLUMNS] + [
        [str(r[c]) if c in ("manager", "p") else f"{r[c]:.4f}" for c in COMPARE_COLUMNS] for r in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(COMPARE_COLUMNS))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells)


__all__ = [
    "ExperimentConfig",
    "cmd_train",
    "cmd_eval",
    "cmd_snapshot_export",
    "cmd_compare",
    "evaluate",
    "load_config",
    "preset",
    "envmod",
]
