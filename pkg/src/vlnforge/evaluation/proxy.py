"""Pretraining proxy-task samples: masked words, single-step actions, object grounding."""
from __future__ import annotations

import heapq

import numpy as np

from ..scene.types import NavGraph
from ..triplets.dataset import tokenize
from ..triplets.forge import VlnTriplet

STOP = "STOP"
MASK = "[MASK]"


class ConsistencyError(ValueError):
    """A triplet's target is not among the objects visible at its final node."""


def shortest_distances(graph: NavGraph, source: int, metric: str = "geodesic") -> dict[int, float]:
    """Dijkstra over edge weights (``"geodesic"``) or unit weights (``"hops"``)."""
    if metric not in ("geodesic", "hops"):
        raise ValueError(f"unknown metric {metric!r}")
    adj = graph.adjacency
    dist = {source: 0.0}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in adj[u].items():
            nd = d + (w if metric == "geodesic" else 1.0)
            if nd < dist.get(v, float("inf")):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def best_waypoint(graph: NavGraph, vi: int, vt: int, metric: str = "geodesic", neighbors_only: bool = False,
                  tol: float = 1e-9, cache: dict | None = None) -> int | None:
    """Node n != vi minimizing d(vi, n) + d(n, vt); sums within ``tol`` tie, lowest id wins."""
    cache = {} if cache is None else cache

    def dist(s):
        if s not in cache:
            cache[s] = shortest_distances(graph, s, metric)
        return cache[s]

    from_i, to_t = dist(vi), dist(vt)
    cands = graph.neighbors(vi) if neighbors_only else graph.node_ids()
    vals = {n: from_i[n] + to_t[n] for n in cands if n != vi and n in from_i and n in to_t}
    if not vals:
        return None
    low = min(vals.values())
    return min(n for n, v in vals.items() if v <= low + tol)


def sap_samples(t: VlnTriplet, graph: NavGraph, rng: np.random.Generator, n_random: int = 1,
                metric: str = "geodesic", neighbors_only: bool = False) -> list[dict]:
    """Single-step action samples of the three kinds.

    ``full``: the whole path, target STOP. ``prefix``: the first t nodes,
    target node t+1. ``random``: a random node V_i of V_T's component
    (V_i != V_T) whose target is the best waypoint toward V_T.
    """
    path = list(t.expert_path)
    out = [{"kind": "full", "history": path, "target": STOP}]
    for k in range(1, len(path)):
        out.append({"kind": "prefix", "history": path[:k], "target": path[k]})
    vt = path[-1]
    reach = sorted(n for n in shortest_distances(graph, vt, "hops") if n != vt)
    cache: dict = {}
    for _ in range(n_random if reach else 0):
        vi = reach[int(rng.integers(len(reach)))]
        tgt = best_waypoint(graph, vi, vt, metric, neighbors_only, cache=cache)
        out.append({"kind": "random", "history": [vi], "goal": vt, "target": tgt})
    return out


def mlm_mask(tokens, rng: np.random.Generator, mask_prob: float = 0.15) -> tuple[list[str], list[tuple[int, str]]]:
    """Mask each token with ``mask_prob``; at least one token is always masked."""
    tokens = tokenize(tokens) if isinstance(tokens, str) else list(tokens)
    if not tokens:
        raise ValueError("need at least one token")
    if not 0 <= mask_prob <= 1:
        raise ValueError("mask_prob must be a probability")
    mask = rng.random(len(tokens)) < mask_prob
    if not mask.any():
        mask[int(rng.integers(len(tokens)))] = True
    masked = [MASK if m else tok for tok, m in zip(tokens, mask)]
    targets = [(i, tokens[i]) for i in np.flatnonzero(mask)]
    return masked, [(int(i), s) for i, s in targets]


def og_sample(t: VlnTriplet, visible: dict, rng: np.random.Generator | None = None) -> dict:
    """Candidates = objects visible at the final node (shuffled when ``rng`` is given)."""
    node = t.expert_path[-1]
    cands = sorted(int(i) for i in visible.get(node, ()))
    if rng is not None:
        cands = [cands[i] for i in rng.permutation(len(cands))]
    if t.target_object not in cands:
        raise ConsistencyError(f"object {t.target_object} not visible at node {node} of {t.scene_id}")
    return {"trajectory": list(t.expert_path), "candidates": cands, "target": cands.index(t.target_object)}
