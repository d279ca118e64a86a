"""Bettor strategies.

Every bettor wakes on its own cadence, looks at a public view of the race
and the market summary, and returns one :class:`Decision`.  Strategies:

ZI     random competitor, side, ladder price and stake
LW     backs the current leader
UD     backs the runner-up while it is within ``theta`` of the leader
BTF    backs the market favourite at the market price
LinEx  extrapolates each competitor's recent speed and backs the earliest finisher
RB     favourite/longshot-biased picks with round-number stakes
RP     runs ``n`` private rollouts of the true race and backs the modal winner
MODEL  scores every competitor with a trained back/lay classifier

LW, UD and LinEx hold a confidence in their pick that rises linearly from
``1/N`` at the start to 1 at the finish (by the leader's progress).  Any
non-ZI strategy lays its pick instead of backing it when the price it could
lay at implies a probability more than ``margin`` above its own estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Sequence, Union

import numpy as np

from .errors import ConfigError
from .exchange import LADDER, MIN_STAKE, MarketSummary, Side, snap_to_ladder, to_cents
from .race_sim import RaceState, rollout_winner

STRATEGIES = ("ZI", "LW", "UD", "BTF", "LinEx", "RP", "RB", "MODEL")

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "ZI": {},
    "LW": {},
    "UD": {"theta": 5.0},
    "BTF": {},
    "LinEx": {"window": 10},
    "RP": {"n": 1, "dmin": 10.0, "dmax": 15.0},
    "RB": {"alpha_fav": 0.5, "alpha_long": 0.3},
    "MODEL": {"threshold": 0.1},
}
COMMON_PARAMS = {"dmin": 5.0, "dmax": 10.0, "margin": 0.05, "max_order_age": 30.0}

ZI_STAKES = (2, 5, 10, 20)
RB_STAKES = (2, 5, 10, 20, 50, 100)


@dataclass(frozen=True)
class BettorSpec:
    bettor_id: int
    strategy: str
    params: dict = field(default_factory=dict)
    stake: float = 10.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"unknown strategy {self.strategy!r}")
        allowed = set(DEFAULT_PARAMS[self.strategy]) | set(COMMON_PARAMS) | {"model"}
        for key in self.params:
            if key not in allowed:
                raise ConfigError(f"params.{key}", f"not a parameter of {self.strategy}")
        merged = {**COMMON_PARAMS, **DEFAULT_PARAMS[self.strategy], **self.params}
        object.__setattr__(self, "params", merged)
        if merged["dmin"] > merged["dmax"] or merged["dmin"] <= 0:
            raise ConfigError("params.dmin", "need 0 < dmin <= dmax")
        if self.strategy == "UD" and merged["theta"] <= 0:
            raise ConfigError("params.theta", "must be > 0")
        if self.strategy == "RP" and int(merged["n"]) < 1:
            raise ConfigError("params.n", "must be >= 1")
        if self.strategy == "LinEx" and int(merged["window"]) < 1:
            raise ConfigError("params.window", "must be >= 1")
        if to_cents(self.stake) < MIN_STAKE:
            raise ConfigError("stake", "below the exchange minimum")

    @property
    def cadence(self) -> tuple[float, float]:
        return float(self.params["dmin"]), float(self.params["dmax"])


@dataclass(frozen=True)
class Place:
    competitor_id: int
    side: Side
    odds: int   # pips
    stake: int  # cents


@dataclass(frozen=True)
class Cancel:
    order_id: int


@dataclass(frozen=True)
class Decision:
    action: Union[Place, Cancel, None]
    next_wakeup: float  # delay in seconds until the bettor wakes again
    prediction: Optional[int] = None


@dataclass(frozen=True)
class RaceView:
    """Public information about the race at one instant."""

    t: int
    seconds: float
    ranks: tuple[int, ...]           # rank of each competitor, 1 = leader
    distances: tuple[float, ...]
    track_length: float
    history: tuple[tuple[float, ...], ...] = ()  # past distance vectors, oldest first, current last

    @property
    def n(self) -> int:
        return len(self.distances)


class Scorer(Protocol):
    def predict_proba(self, rows: np.ndarray) -> np.ndarray: ...


def odds_from_prob(p: float) -> int:
    """Fair odds ``1/p`` snapped to the ladder (pips); ``p <= 0`` maps to the longest price."""
    if p <= 0:
        return LADDER[-1]
    return snap_to_ladder(1.0 / p)


def snap_stake(raw: float, choices: Sequence[float] = RB_STAKES) -> float:
    """Nearest preferred stake; equidistant raw stakes go to the smaller one."""
    return min(choices, key=lambda c: (abs(c - raw), c))


def _wait(spec: BettorSpec, rng: np.random.Generator) -> float:
    lo, hi = spec.cadence
    return float(rng.uniform(lo, hi))


def _confidence(view: RaceView) -> float:
    n = view.n
    progress = min(max(view.distances) / view.track_length, 1.0)
    return 1.0 / n + (1.0 - 1.0 / n) * progress


def _leader(view: RaceView) -> int:
    return view.ranks.index(1)


def _linex_pick(view: RaceView, window: int) -> Optional[int]:
    if len(view.history) < 2:
        return None
    w = min(window, len(view.history) - 1)
    now, then = view.history[-1], view.history[-1 - w]
    best, best_time = None, np.inf
    for c in range(view.n):
        speed = (now[c] - then[c]) / w
        if speed <= 0:
            continue
        remaining = max(view.track_length - now[c], 0.0) / speed
        if remaining < best_time:
            best, best_time = c, remaining
    return best


def _estimate(spec: BettorSpec, view: RaceView, market: MarketSummary,
              rng: np.random.Generator) -> tuple[Optional[int], float]:
    """The strategy's pick and its subjective win probability for that pick."""
    s = spec.strategy
    if s == "LW":
        return _leader(view), _confidence(view)
    if s == "UD":
        second = view.ranks.index(2)
        gap = view.distances[_leader(view)] - view.distances[second]
        if gap > spec.params["theta"]:
            return None, 0.0
        return second, _confidence(view)
    if s == "LinEx":
        pick = _linex_pick(view, int(spec.params["window"]))
        return pick, _confidence(view)
    if s == "BTF":
        fav = market.favourite
        if fav is None:
            return None, 0.0
        return fav, market.implied_prob(fav)
    if s == "RB":
        u = rng.random()
        a_f, a_l = spec.params["alpha_fav"], spec.params["alpha_long"]
        priced = [m for m in market.competitors if m.best_back is not None]
        if u < a_f and market.favourite is not None:
            pick = market.favourite
        elif a_f <= u < a_f + a_l and priced:
            pick = max(priced, key=lambda m: (m.best_back, -m.competitor_id)).competitor_id
        else:
            pick = int(rng.integers(view.n))
        p = market.implied_prob(pick)
        return pick, (1.0 / view.n if p is None else p)
    raise ValueError(f"no estimator for strategy {s}")


def decide_simple(spec: BettorSpec, view: RaceView, market: MarketSummary,
                  rng: np.random.Generator) -> Decision:
    """One wakeup of a ZI, LW, UD, BTF, LinEx or RB bettor."""
    if spec.strategy == "ZI":
        action = Place(
            competitor_id=int(rng.integers(view.n)),
            side=Side.BACK if rng.random() < 0.5 else Side.LAY,
            odds=LADDER[int(rng.integers(len(LADDER)))],
            stake=to_cents(ZI_STAKES[int(rng.integers(len(ZI_STAKES)))]),
        )
        return Decision(action, _wait(spec, rng))

    target, p_own = _estimate(spec, view, market, rng)
    if spec.strategy == "RB":
        stake = snap_stake(float(rng.uniform(2.0, 20.0)))
    else:
        stake = spec.stake
    wait = _wait(spec, rng)
    if target is None:
        return Decision(None, wait)
    side = Side.BACK
    best_lay = market.competitors[target].best_lay
    if best_lay is not None and p_own < 100.0 / best_lay - spec.params["margin"]:
        side = Side.LAY
    return Decision(Place(target, side, odds_from_prob(p_own), to_cents(stake)), wait)


def modal_winner(winners: Sequence[int]) -> tuple[int, int]:
    """Most frequent winner (ties to the lower id) and its count."""
    counts: dict[int, int] = {}
    for w in winners:
        counts[w] = counts.get(w, 0) + 1
    best = min(counts, key=lambda c: (-counts[c], c))
    return best, counts[best]


def decide_rp(spec: BettorSpec, live: RaceState, market: MarketSummary,
              rng: np.random.Generator, rollout_rng: np.random.Generator,
              previous: Optional[int] = None) -> Decision:
    """Run ``n`` private rollouts from the live positions; back the modal winner if it changed."""
    n = int(spec.params["n"])
    winners = [rollout_winner(live, rollout_rng) for _ in range(n)]
    pick, count = modal_winner(winners)
    wait = _wait(spec, rng)
    if pick == previous:
        return Decision(None, wait, prediction=pick)
    action = Place(pick, Side.BACK, odds_from_prob(count / n), to_cents(spec.stake))
    return Decision(action, wait, prediction=pick)


def model_features(view: RaceView, stake: float) -> np.ndarray:
    """Feature rows (distance, time, rank, stake), one per competitor."""
    return np.array([[view.distances[c], view.seconds, view.ranks[c], stake] for c in range(view.n)],
                    dtype=float)


def decide_model(spec: BettorSpec, view: RaceView, market: MarketSummary, model: Scorer,
                 rng: np.random.Generator) -> Decision:
    """Back or lay the competitor the classifier is most confident about."""
    probs = np.asarray(model.predict_proba(model_features(view, spec.stake)), dtype=float)
    wait = _wait(spec, rng)
    c = int(np.argmax(np.abs(probs - 0.5)))
    p = float(probs[c])
    tau = spec.params["threshold"]
    if p >= 0.5 + tau:
        side, counter = Side.BACK, market.competitors[c].best_back
    elif p <= 0.5 - tau:
        side, counter = Side.LAY, market.competitors[c].best_lay
    else:
        return Decision(None, wait)
    odds = counter if counter is not None else odds_from_prob(p)
    return Decision(Place(c, side, odds, to_cents(spec.stake)), wait)


class Bettor:
    """A bettor's private state across one race: stream, prediction, open orders."""

    def __init__(self, spec: BettorSpec, rng: np.random.Generator,
                 rollout_rng: Optional[np.random.Generator] = None, model: Optional[Scorer] = None):
        self.spec = spec
        self.rng = rng
        self.rollout_rng = rollout_rng
        self.model = model
        self.prediction: Optional[int] = None
        self.open_orders: list[tuple[float, int]] = []  # (submit time, order id)
        if spec.strategy == "MODEL" and model is None:
            raise ConfigError("model", "MODEL bettors need a trained model")

    @property
    def bettor_id(self) -> int:
        return self.spec.bettor_id

    def first_wakeup(self) -> float:
        return float(self.rng.uniform(0.0, self.spec.cadence[1]))

    def deliberate(self, now: float, view: RaceView, market: MarketSummary,
                   live: RaceState, remaining) -> Decision:
        """Cancel the oldest stale open order if there is one, otherwise run the strategy.

        ``remaining(order_id)`` reports the unmatched stake of an order.
        """
        self.open_orders = [(ts, oid) for ts, oid in self.open_orders if remaining(oid) > 0]
        if self.open_orders and now - self.open_orders[0][0] >= self.spec.params["max_order_age"]:
            return Decision(Cancel(self.open_orders[0][1]), _wait(self.spec, self.rng))
        s = self.spec.strategy
        if s == "RP":
            d = decide_rp(self.spec, live, market, self.rng, self.rollout_rng, self.prediction)
            self.prediction = d.prediction
            return d
        if s == "MODEL":
            return decide_model(self.spec, view, market, self.model, self.rng)
        return decide_simple(self.spec, view, market, self.rng)

    def placed(self, now: float, order_id: int) -> None:
        self.open_orders.append((now, order_id))
