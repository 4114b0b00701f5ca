"""Triplet dataset I/O, statistics, environment subsets and balanced mixing."""
from __future__ import annotations

import json
from collections import Counter
from pathlib import Path

import numpy as np

from .forge import VlnTriplet

VOCAB_MIN_COUNT = 5  # a token must occur more than this many times


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def dataset_stats(triplets) -> dict:
    """Environment, object and instruction counts, vocabulary size and mean length.

    The vocabulary holds lowercase whitespace tokens seen more than five
    times; objects are distinct (scene, target object) pairs.
    """
    triplets = list(triplets)
    if not triplets:
        return {"n_env": 0, "n_objects": 0, "n_instructions": 0, "vocab_size": 0, "mean_instruction_length": 0.0}
    counts: Counter = Counter()
    lengths = []
    for t in triplets:
        toks = tokenize(t.instruction)
        counts.update(toks)
        lengths.append(len(toks))
    return {
        "n_env": len({t.scene_id for t in triplets}),
        "n_objects": len({(t.scene_id, t.target_object) for t in triplets}),
        "n_instructions": len(triplets),
        "vocab_size": sum(1 for c in counts.values() if c > VOCAB_MIN_COUNT),
        "mean_instruction_length": round(float(np.mean(lengths)), 6),
    }


def subset_by_environments(triplets, k, rng: np.random.Generator | None = None,
                           cap: int | None = None) -> list[VlnTriplet]:
    """Keep the triplets of ``k`` environments (a count or explicit ids).

    With ``cap`` the subset instead spans every selected environment but
    holds exactly ``cap`` triplets: one per environment first, the rest drawn
    uniformly without replacement. Original order is preserved.
    """
    triplets = list(triplets)
    envs = sorted({t.scene_id for t in triplets})
    if isinstance(k, (int, np.integer)):
        if k < 0 or k > len(envs):
            raise ValueError(f"cannot pick {k} of {len(envs)} environments")
        if k == len(envs):
            keep_envs = set(envs)
        else:
            if rng is None:
                raise ValueError("an rng is needed to sample environments")
            keep_envs = set(rng.choice(envs, size=int(k), replace=False).tolist()) if k else set()
    else:
        keep_envs = {str(e) for e in k}
        missing = keep_envs - set(envs)
        if missing:
            raise ValueError(f"unknown environments: {sorted(missing)}")
    idx = [i for i, t in enumerate(triplets) if t.scene_id in keep_envs]
    if cap is None:
        return [triplets[i] for i in idx]
    if cap > len(idx):
        raise ValueError(f"cap {cap} exceeds the {len(idx)} available triplets")
    if cap < len(keep_envs):
        raise ValueError("cap is smaller than the number of environments to span")
    if rng is None:
        raise ValueError("an rng is needed for the matched-count mode")
    by_env: dict[str, list[int]] = {}
    for i in idx:
        by_env.setdefault(triplets[i].scene_id, []).append(i)
    chosen = {int(rng.choice(by_env[e])) for e in sorted(by_env)}
    rest = np.array(sorted(set(idx) - chosen), dtype=np.int64)
    if cap > len(chosen):
        chosen |= set(rng.choice(rest, size=cap - len(chosen), replace=False).tolist())
    return [triplets[i] for i in sorted(chosen)]


def mix_balanced(a, b, rng: np.random.Generator) -> list:
    """Resample the smaller set with replacement to the larger size, concatenate, shuffle."""
    a, b = list(a), list(b)
    if not a or not b:
        raise ValueError("both datasets must be non-empty")
    if len(a) < len(b):
        a = [a[i] for i in rng.integers(len(a), size=len(b))]
    elif len(b) < len(a):
        b = [b[i] for i in rng.integers(len(b), size=len(a))]
    merged = a + b
    order = rng.permutation(len(merged))
    return [merged[i] for i in order]


def write_jsonl(path, records) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            d = r.to_dict() if hasattr(r, "to_dict") else r
            fh.write(json.dumps(d, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{n}: {e.msg}") from None
    return out


def read_triplets(path) -> list[VlnTriplet]:
    return [VlnTriplet.from_dict(d) for d in read_jsonl(path)]


def merge_instructions(triplets, texts: list[str]) -> list[VlnTriplet]:
    """Replace instructions with externally generated ones, line by line."""
    from dataclasses import replace
    triplets = list(triplets)
    if len(texts) != len(triplets):
        raise ValueError(f"{len(texts)} instructions for {len(triplets)} triplets")
    return [replace(t, instruction=s.strip(), meta={**t.meta, "instruction_source": "external"})
            for t, s in zip(triplets, texts)]
