"""One-dimensional track race as a discrete-time stochastic process.

Each competitor has a base pace and a linear pace profile running from an
early-race factor to a late-race factor.  Every tick its velocity is

    v = base_pace * (early * (1 - rho) + late * rho) * (1 + eps),  eps ~ U[-delta, delta]

with ``rho`` the fraction of the track covered.  A competitor whose nearest
rival strictly ahead is within ``block_gap`` is capped at ``block_slow``
times that rival's previous velocity; otherwise one with a rival strictly
behind within ``hurry_gap`` is sped up by ``hurry_boost``.  Updates are
synchronous: all velocities are computed from the previous tick's state.

Noise contract: every tick consumes exactly ``n_competitors`` uniforms from
the race stream, in competitor-index order, finished competitors included
(their draws are discarded).  This makes stepwise runs and the fused
rollout kernel produce identical trajectories from the same stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Optional

import numpy as np
from numba import njit

from .errors import ConfigError, RaceStateError

_ROLLOUT_CHUNK = 64


@dataclass(frozen=True)
class RaceConfig:
    track_length: float = 200.0
    n_competitors: int = 5
    tick_seconds: float = 1.0
    noise_halfwidth: float = 0.1
    block_gap: float = 1.0
    block_slow: float = 0.95
    hurry_gap: float = 0.5
    hurry_boost: float = 1.05
    pace_lo: float = 0.9
    pace_hi: float = 1.1
    seed: int = 0

    def validate(self) -> "RaceConfig":
        if not self.track_length > 0:
            raise ConfigError("track_length", "must be > 0")
        if int(self.n_competitors) != self.n_competitors or self.n_competitors < 2:
            raise ConfigError("n_competitors", "must be an integer >= 2")
        if not self.tick_seconds > 0:
            raise ConfigError("tick_seconds", "must be > 0")
        if not 0 <= self.noise_halfwidth < 1:
            raise ConfigError("noise_halfwidth", "must lie in [0, 1)")
        if self.block_gap < 0:
            raise ConfigError("block_gap", "must be >= 0")
        if self.hurry_gap < 0:
            raise ConfigError("hurry_gap", "must be >= 0")
        if not 0 < self.block_slow < 1:
            raise ConfigError("block_slow", "must lie in (0, 1)")
        if not self.hurry_boost > 1:
            raise ConfigError("hurry_boost", "must be > 1")
        if not 0 < self.pace_lo <= self.pace_hi:
            raise ConfigError("pace_lo", "need 0 < pace_lo <= pace_hi")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "RaceConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"race.{key}", "unknown key")
        return cls(**data).validate()

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def max_ticks(self) -> int:
        """Upper bound on race duration implied by the slowest admissible velocity."""
        floor = self.pace_lo * 0.9 * (1 - self.noise_halfwidth) * self.block_slow ** (self.n_competitors - 1)
        return math.ceil(self.track_length / floor) + 1


@dataclass(frozen=True)
class CompetitorState:
    id: int
    distance: float
    base_pace: float
    early_factor: float
    late_factor: float
    finished: bool
    finish_time: Optional[int]


class RaceState:
    """Mutable state of one race.  Arrays are indexed by competitor id."""

    __slots__ = ("config", "t", "distance", "velocity", "base_pace", "early", "late",
                 "finished", "finish_time", "rng")

    def __init__(self, config, t, distance, velocity, base_pace, early, late,
                 finished, finish_time, rng):
        self.config = config
        self.t = t
        self.distance = distance
        self.velocity = velocity
        self.base_pace = base_pace
        self.early = early
        self.late = late
        self.finished = finished
        self.finish_time = finish_time
        self.rng = rng

    @property
    def n(self) -> int:
        return self.distance.shape[0]

    @property
    def complete(self) -> bool:
        return bool(self.finished.all())

    @property
    def any_finished(self) -> bool:
        return bool(self.finished.any())

    @property
    def competitors(self) -> list[CompetitorState]:
        return [
            CompetitorState(
                id=i,
                distance=float(self.distance[i]),
                base_pace=float(self.base_pace[i]),
                early_factor=float(self.early[i]),
                late_factor=float(self.late[i]),
                finished=bool(self.finished[i]),
                finish_time=int(self.finish_time[i]) if self.finished[i] else None,
            )
            for i in range(self.n)
        ]

    def copy(self, rng: Optional[np.random.Generator] = None) -> "RaceState":
        """Deep copy; the copy gets ``rng`` as its stream (or shares none if given)."""
        return RaceState(
            self.config, self.t, self.distance.copy(), self.velocity.copy(),
            self.base_pace, self.early, self.late, self.finished.copy(),
            self.finish_time.copy(), rng if rng is not None else _copy_rng(self.rng),
        )

    def fingerprint(self) -> bytes:
        return b"".join([
            np.int64(self.t).tobytes(), self.distance.tobytes(), self.velocity.tobytes(),
            self.finished.tobytes(), self.finish_time.tobytes(),
            self.base_pace.tobytes(), self.early.tobytes(), self.late.tobytes(),
        ])


def _copy_rng(rng: np.random.Generator) -> np.random.Generator:
    bg = type(rng.bit_generator)()
    bg.state = rng.bit_generator.state
    return np.random.Generator(bg)


def init_race(config: RaceConfig, pool_seed: int) -> RaceState:
    """Draw a field of competitors from the pool and place them at the start."""
    config.validate()
    n = int(config.n_competitors)
    pool = np.random.Generator(np.random.PCG64(pool_seed))
    draws = pool.random((n, 3))
    base = config.pace_lo + (config.pace_hi - config.pace_lo) * draws[:, 0]
    early = 0.9 + 0.2 * draws[:, 1]
    late = 0.9 + 0.2 * draws[:, 2]
    return RaceState(
        config=config,
        t=0,
        distance=np.zeros(n),
        velocity=np.zeros(n),
        base_pace=base,
        early=early,
        late=late,
        finished=np.zeros(n, dtype=np.bool_),
        finish_time=np.full(n, -1, dtype=np.int64),
        rng=np.random.Generator(np.random.PCG64(config.seed)),
    )


@njit(cache=True)
def _advance(dist, vel, base, early, late, finished, finish_time, eps, t_next,
             length, block_gap, block_slow, hurry_gap, hurry_boost):
    n = dist.shape[0]
    new_v = np.zeros(n)
    for i in range(n):
        if finished[i]:
            continue
        rho = dist[i] / length
        if rho > 1.0:
            rho = 1.0
        v = base[i] * (early[i] * (1.0 - rho) + late[i] * rho) * (1.0 + eps[i])
        ahead_gap = np.inf
        ahead = -1
        behind_gap = np.inf
        for j in range(n):
            if j == i or finished[j]:
                continue
            d = dist[j] - dist[i]
            if d > 0.0:
                if d < ahead_gap:
                    ahead_gap = d
                    ahead = j
            elif d < 0.0:
                if -d < behind_gap:
                    behind_gap = -d
        if ahead >= 0 and ahead_gap <= block_gap:
            cap = block_slow * vel[ahead]
            if cap < v:
                v = cap
        elif behind_gap <= hurry_gap:
            v = v * hurry_boost
        new_v[i] = v
    for i in range(n):
        if finished[i]:
            continue
        dist[i] += new_v[i]
        vel[i] = new_v[i]
        if dist[i] >= length:
            finished[i] = True
            finish_time[i] = t_next


@njit(cache=True)
def _advance_many(dist, vel, base, early, late, finished, finish_time, noise, t0,
                  length, block_gap, block_slow, hurry_gap, hurry_boost):
    """Run up to ``len(noise)`` ticks; returns the number of ticks consumed."""
    rows = noise.shape[0]
    for k in range(rows):
        _advance(dist, vel, base, early, late, finished, finish_time, noise[k], t0 + k + 1,
                 length, block_gap, block_slow, hurry_gap, hurry_boost)
        done = True
        for i in range(finished.shape[0]):
            if not finished[i]:
                done = False
                break
        if done:
            return k + 1
    return rows


def _kernel_args(state: RaceState):
    c = state.config
    return (c.track_length, c.block_gap, c.block_slow, c.hurry_gap, c.hurry_boost)


def step_race(state: RaceState) -> RaceState:
    """Advance ``state`` by one tick in place and return it."""
    if state.complete:
        raise RaceStateError(f"race already complete at t={state.t}")
    c = state.config
    eps = state.rng.uniform(-c.noise_halfwidth, c.noise_halfwidth, state.n)
    _advance(state.distance, state.velocity, state.base_pace, state.early, state.late,
             state.finished, state.finish_time, eps, state.t + 1, *_kernel_args(state))
    state.t += 1
    return state


def rank_order(state: RaceState) -> list[int]:
    """Competitor ids from leader to last.

    Finished competitors come first by finish time; the rest by distance
    descending.  Ties go to the lower id.
    """
    return sorted(range(state.n), key=lambda i: _rank_key(state, i))


def _rank_key(state: RaceState, i: int):
    if state.finished[i]:
        return (0, int(state.finish_time[i]), i)
    return (1, -float(state.distance[i]), i)


def ranks_by_competitor(order: list[int]) -> list[int]:
    """Invert an id ordering into per-competitor ranks (1 = leader)."""
    ranks = [0] * len(order)
    for pos, cid in enumerate(order):
        ranks[cid] = pos + 1
    return ranks


def winner_of(state: RaceState) -> int:
    if not state.complete:
        raise RaceStateError("race has no winner until every competitor finishes")
    # argmin returns the lowest id among dead heats
    return int(np.argmin(state.finish_time))


@dataclass
class RaceResult:
    state: RaceState
    winner: int
    trace: list  # (t, ranking, distances) per tick


Observer = Callable[[int, list, tuple], None]


def run_race(start: RaceState, observer: Optional[Observer] = None, copy: bool = False) -> RaceResult:
    """Step ``start`` until every competitor has finished.

    With ``copy=True`` the input state is left untouched (rollouts from a
    live race must not disturb it).
    """
    state = start.copy() if copy else start
    trace = []
    while not state.complete:
        step_race(state)
        ranking = rank_order(state)
        distances = tuple(float(d) for d in state.distance)
        trace.append((state.t, ranking, distances))
        if observer is not None:
            observer(state.t, ranking, distances)
    return RaceResult(state=state, winner=winner_of(state), trace=trace)


def rollout_winner(live: RaceState, rng: np.random.Generator) -> int:
    """Finish a private copy of ``live`` on stream ``rng`` and return its winner.

    Same trajectory as ``run_race`` on a copy seeded with ``rng``, computed
    in compiled chunks without per-tick bookkeeping.
    """
    if live.complete:
        return winner_of(live)
    dist = live.distance.copy()
    vel = live.velocity.copy()
    finished = live.finished.copy()
    finish_time = live.finish_time.copy()
    c = live.config
    t = live.t
    args = _kernel_args(live)
    while True:
        noise = rng.uniform(-c.noise_halfwidth, c.noise_halfwidth, (_ROLLOUT_CHUNK, live.n))
        used = _advance_many(dist, vel, live.base_pace, live.early, live.late,
                             finished, finish_time, noise, t, *args)
        t += used
        if finished.all():
            return int(np.argmin(finish_time))
