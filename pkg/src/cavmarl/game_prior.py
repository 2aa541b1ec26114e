"""Interaction-object selection from attention weights and the priority ranking built on it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence


@dataclass(frozen=True)
class PriorConfig:
    dis0: float = 40.0  # m
    delta0: float = 0.05
    q_max: int = 5

    def __post_init__(self):
        if not self.dis0 > 0:
            raise ValueError("dis0 must be positive")
        if not 0.0 <= self.delta0 < 1.0:
            raise ValueError("delta0 must lie in [0, 1)")
        if self.q_max < 1:
            raise ValueError("q_max must be at least 1")


@dataclass(frozen=True)
class LevelRank:
    bat: dict[int, float]
    rank: dict[int, int]  # vehicle id -> priority index, 0 first

    def order(self) -> list[int]:
        return sorted(self.rank, key=self.rank.__getitem__)


def select_interaction_objects(at_i: Mapping[int, float], distances: Mapping[int, float],
                               cfg: PriorConfig = PriorConfig()) -> list[tuple[int, float]]:
    """Vehicles with distance < dis0 and weight > delta0, heaviest first, at most q_max.

    Ties on weight go to the nearer vehicle, then the lower id.
    """
    keep = [(vid, w) for vid, w in at_i.items()
            if distances[vid] < cfg.dis0 and w > cfg.delta0]
    keep.sort(key=lambda item: (-item[1], distances[item[0]], item[0]))
    return keep[: cfg.q_max]


def global_attention(interaction_sets: Mapping[int, Sequence[tuple[int, float]]],
                     vehicle_ids: Sequence[int] = ()) -> dict[int, float]:
    """Attention each vehicle receives, summed over the interaction sets containing it."""
    bat = {vid: 0.0 for vid in vehicle_ids}
    for entries in interaction_sets.values():
        for vid, w in entries:
            bat[vid] = bat.get(vid, 0.0) + w
    return bat


def rank_levels(bat: Mapping[int, float]) -> LevelRank:
    order = sorted(bat, key=lambda vid: (-bat[vid], vid))
    return LevelRank(dict(bat), {vid: k for k, vid in enumerate(order)})


def hierarchical_priors(attention: Mapping[int, Mapping[int, float]],
                        distances: Mapping[int, Mapping[int, float]],
                        cfg: PriorConfig = PriorConfig(),
                        vehicle_ids: Sequence[int] = ()) -> tuple[dict[int, list], LevelRank]:
    """Interaction sets per CAV plus the global ranking.

    ``attention[i]`` maps observed vehicle ids to CAV i's combined weights; the
    ego's weight on itself is dropped since a vehicle does not interact with itself.
    """
    sets = {}
    for i, at_i in attention.items():
        others = {j: w for j, w in at_i.items() if j != i}
        sets[i] = select_interaction_objects(others, distances[i], cfg)
    ids = list(vehicle_ids) or sorted(set(attention) | {j for s in sets.values() for j, _ in s})
    return sets, rank_levels(global_attention(sets, ids))
