"""Discrete navigation episodes over a graph, metrics and baseline agents."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..scene.types import NavGraph
from ..triplets.forge import VlnTriplet

SUCCESS_RADIUS = 3.0
METRICS = ("SR", "OSR", "SPL", "RGS", "RGSPL")


class IllegalActionError(ValueError):
    """Move to a node that is not adjacent to the current one."""


class EpisodeStateError(RuntimeError):
    """Action on an episode that has already stopped (or never started)."""


@dataclass(frozen=True)
class Move:
    target: int


@dataclass(frozen=True)
class Stop:
    object_id: int | None = None


def bearing(src, dst) -> tuple[float, float]:
    d = np.asarray(dst, np.float64) - np.asarray(src, np.float64)
    return math.atan2(d[1], d[0]), math.atan2(d[2], math.hypot(d[0], d[1]))


@dataclass
class Episode:
    triplet: VlnTriplet
    current: int
    visited: list[int]
    status: str = "running"
    grounded_object: int | None = None


class Simulator:
    """Moves an agent between adjacent graph nodes.

    ``visible`` maps node id to ids of objects seen from it and ``centroids``
    maps object id to its position; both only feed observations.
    """

    def __init__(self, graph: NavGraph, visible: dict | None = None, centroids: dict | None = None):
        self.graph = graph
        self.visible = visible or {}
        self.centroids = centroids or {}
        self.episode: Episode | None = None

    def observe(self) -> dict:
        ep = self.episode
        here = self.graph.nodes[ep.current]
        objs = []
        for oid in sorted(self.visible.get(ep.current, ())):
            c = self.centroids.get(oid)
            h, e = bearing(here, c) if c is not None else (float("nan"), float("nan"))
            objs.append({"id": int(oid), "heading": h, "elevation": e})
        return {"node": ep.current, "adjacent": self.graph.neighbors(ep.current), "objects": objs,
                "status": ep.status}

    def reset(self, triplet: VlnTriplet) -> dict:
        if triplet.start_node not in self.graph.nodes:
            raise KeyError(f"start node {triplet.start_node} not in graph")
        self.episode = Episode(triplet, triplet.start_node, [triplet.start_node])
        return self.observe()

    def step(self, action) -> dict:
        ep = self.episode
        if ep is None or ep.status != "running":
            raise EpisodeStateError("episode is not running")
        if isinstance(action, Stop):
            ep.status = "stopped"
            ep.grounded_object = action.object_id
        elif isinstance(action, Move):
            if not self.graph.has_edge(ep.current, action.target):
                raise IllegalActionError(f"node {action.target} is not adjacent to {ep.current}")
            ep.current = int(action.target)
            ep.visited.append(ep.current)
        else:
            raise TypeError(f"unknown action {action!r}")
        return self.observe()


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    oracle_success: bool
    spl: float
    rgs: bool
    rgspl: float
    path_length: float
    shortest_length: float
    scene_id: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def walk_length(graph: NavGraph, walk) -> float:
    return float(sum(graph.weight(a, b) for a, b in zip(walk, walk[1:])))


def score(episode: Episode, graph: NavGraph, radius: float = SUCCESS_RADIUS, strict: bool = False) -> EpisodeResult:
    """Success, oracle success, SPL and grounding metrics of a stopped episode.

    Success means the final node lies within ``radius`` (Euclidean) of some
    goal node, or with ``strict`` is itself a goal node. Path lengths sum edge
    weights; an agent that succeeds without moving gets p = l.
    """
    if episode.status != "stopped":
        raise EpisodeStateError("score needs a stopped episode")
    t = episode.triplet
    goals = np.array([graph.nodes[g] for g in t.goal_nodes])

    def near(n):
        if strict:
            return n in t.goal_nodes
        return bool(np.min(np.linalg.norm(goals - graph.nodes[n], axis=1)) <= radius)

    success = near(episode.visited[-1])
    oracle = any(near(n) for n in episode.visited)
    l = walk_length(graph, t.expert_path)
    p = walk_length(graph, episode.visited)
    if success and p == 0:
        p = l
    ratio = l / max(p, l) if max(p, l) > 0 else 1.0
    spl = ratio if success else 0.0
    rgs = success and episode.grounded_object is not None and episode.grounded_object == t.target_object
    return EpisodeResult(success, oracle, spl, rgs, ratio if rgs else 0.0, p, l, t.scene_id)


def aggregate(results, by_env: bool = False) -> dict:
    """Metric means x 100 rounded to 2 decimals (plus per-environment blocks)."""
    results = list(results)
    if not results:
        raise ValueError("no episode results to aggregate")

    def block(rs):
        n = len(rs)
        vals = {
            "SR": sum(r.success for r in rs) / n,
            "OSR": sum(r.oracle_success for r in rs) / n,
            "SPL": sum(r.spl for r in rs) / n,
            "RGS": sum(r.rgs for r in rs) / n,
            "RGSPL": sum(r.rgspl for r in rs) / n,
        }
        out = {k: round(100.0 * v, 2) for k, v in vals.items()}
        out["episodes"] = n
        return out

    out = block(results)
    if by_env:
        envs: dict[str, list] = {}
        for r in results:
            envs.setdefault(r.scene_id, []).append(r)
        out["environments"] = {e: block(rs) for e, rs in sorted(envs.items())}
    return out


class OracleAgent:
    """Follows the expert path and grounds the target object."""

    def actions(self, triplet: VlnTriplet, sim: Simulator):
        for n in triplet.expert_path[1:]:
            yield Move(n)
        yield Stop(triplet.target_object)


class RandomAgent:
    """Random walk of ``steps`` moves, then stops grounding a random visible object."""

    def __init__(self, rng: np.random.Generator, steps: int = 20):
        self.rng = rng
        self.steps = steps

    def actions(self, triplet: VlnTriplet, sim: Simulator):
        obs = sim.observe()
        for _ in range(self.steps):
            if not obs["adjacent"]:
                break
            nxt = obs["adjacent"][int(self.rng.integers(len(obs["adjacent"])))]
            obs = yield Move(nxt)
            if obs is None:
                obs = sim.observe()
        objs = sim.observe()["objects"]
        pick = objs[int(self.rng.integers(len(objs)))]["id"] if objs else None
        yield Stop(pick)


class ReplayAgent:
    """Replays logged actions: a list per episode of {"move": id} / {"stop": id or null}."""

    def __init__(self, logs: list[list[dict]]):
        self.logs = list(logs)
        self.cursor = 0

    def actions(self, triplet: VlnTriplet, sim: Simulator):
        if self.cursor >= len(self.logs):
            raise ValueError("action log has fewer episodes than the dataset")
        log = self.logs[self.cursor]
        self.cursor += 1
        for a in log:
            if "move" in a:
                yield Move(int(a["move"]))
            elif "stop" in a:
                yield Stop(None if a["stop"] is None else int(a["stop"]))
                return
            else:
                raise ValueError(f"unknown logged action {a!r}")
        yield Stop(None)


def run_episode(sim: Simulator, triplet: VlnTriplet, agent, max_steps: int = 100) -> Episode:
    sim.reset(triplet)
    gen = agent.actions(triplet, sim)
    obs = None
    for _ in range(max_steps + 1):
        try:
            action = gen.send(obs) if obs is not None else next(gen)
        except StopIteration:
            break
        if isinstance(action, Move) and len(sim.episode.visited) > max_steps:
            break
        obs = sim.step(action)
        if sim.episode.status == "stopped":
            break
    if sim.episode.status == "running":
        sim.step(Stop(None))
    return sim.episode


@dataclass
class EvalSetup:
    graphs: dict                      # scene id -> NavGraph
    visible: dict = field(default_factory=dict)    # scene id -> {node -> object ids}
    centroids: dict = field(default_factory=dict)  # scene id -> {object id -> xyz}


def evaluate(triplets, setup: EvalSetup, agent, radius: float = SUCCESS_RADIUS, strict: bool = False,
             max_steps: int = 100) -> list[EpisodeResult]:
    out = []
    sims: dict[str, Simulator] = {}
    for t in triplets:
        if t.scene_id not in setup.graphs:
            raise KeyError(f"no graph for scene {t.scene_id}")
        sim = sims.get(t.scene_id)
        if sim is None:
            sim = sims[t.scene_id] = Simulator(setup.graphs[t.scene_id], setup.visible.get(t.scene_id),
                                               setup.centroids.get(t.scene_id))
        ep = run_episode(sim, t, agent, max_steps)
        out.append(score(ep, setup.graphs[t.scene_id], radius, strict))
    return out
