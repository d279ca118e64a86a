"""Per-race betting exchange: limit book, matching, market data, settlement.

Money and odds are integers throughout: stakes and profits in cents,
decimal odds in hundredths ("pips", so 3.35 is 335).  This keeps
settlement exactly zero-sum.

Matching uses price-time priority.  An incoming back at odds ``o`` takes
resting lays priced at ``o`` or longer, longest first; an incoming lay at
``o`` takes resting backs priced at ``o`` or shorter, shortest first.
Fills happen at the resting order's price.  With ``price_improvement``
off, only resting orders at exactly ``o`` are eligible.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional

from .errors import AuthorizationError, ExchangeError, OrderRejected

MIN_STAKE = 100  # cents
DEFAULT_COMMISSION = 0.05

_LADDER_BANDS = [
    # (first, last, step) in pips
    (101, 200, 1),
    (202, 300, 2),
    (305, 400, 5),
    (410, 600, 10),
    (620, 1000, 20),
    (1050, 2000, 50),
    (2100, 3000, 100),
    (3200, 5000, 200),
    (5500, 10000, 500),
]

LADDER: tuple[int, ...] = tuple(p for lo, hi, step in _LADDER_BANDS for p in range(lo, hi + 1, step))
_LADDER_SET = frozenset(LADDER)
MIN_ODDS = LADDER[0]
MAX_ODDS = LADDER[-1]


def to_pips(odds: float) -> int:
    return int(round(odds * 100))


def to_cents(amount: float) -> int:
    return int(round(amount * 100))


def on_ladder(pips: int) -> bool:
    return pips in _LADDER_SET


def snap_to_ladder(odds: float) -> int:
    """Nearest ladder tick to decimal ``odds`` (clamped; ties go to the shorter price)."""
    target = odds * 100
    if target <= MIN_ODDS:
        return MIN_ODDS
    if target >= MAX_ODDS:
        return MAX_ODDS
    k = bisect.bisect_left(LADDER, target)
    lo, hi = LADDER[k - 1], LADDER[k]
    if hi == target:
        return hi
    return lo if target - lo <= hi - target else hi


class Side(str, Enum):
    BACK = "back"
    LAY = "lay"


@dataclass
class Order:
    order_id: int
    bettor_id: int
    competitor_id: int
    side: Side
    odds: int
    stake: int
    submit_time: float = 0.0
    matched: int = 0
    cancelled: bool = False

    @property
    def remaining(self) -> int:
        return 0 if self.cancelled else self.stake - self.matched

    def snapshot(self) -> dict:
        return {
            "order_id": self.order_id,
            "bettor_id": self.bettor_id,
            "competitor_id": self.competitor_id,
            "side": self.side.value,
            "odds": self.odds,
            "stake": self.stake,
            "matched": self.matched,
            "submit_time": self.submit_time,
        }


@dataclass(frozen=True)
class MatchFill:
    back_order_id: int
    lay_order_id: int
    back_bettor: int
    lay_bettor: int
    competitor_id: int
    odds: int
    stake: int
    time: float

    def to_dict(self) -> dict:
        return {
            "back_order_id": self.back_order_id,
            "lay_order_id": self.lay_order_id,
            "back_bettor": self.back_bettor,
            "lay_bettor": self.lay_bettor,
            "competitor_id": self.competitor_id,
            "odds": self.odds,
            "stake": self.stake,
            "time": self.time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchFill":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class LadderLevel:
    odds: int
    back_stake: int  # resting unmatched backs at this price
    lay_stake: int   # resting unmatched lays at this price


@dataclass(frozen=True)
class CompetitorMarket:
    competitor_id: int
    ladder: tuple[LadderLevel, ...]
    best_back: Optional[int]  # longest price a backer can take now (best resting lay)
    best_lay: Optional[int]   # shortest price a layer can take now (best resting back)


@dataclass(frozen=True)
class MarketSummary:
    competitors: tuple[CompetitorMarket, ...]
    favourite: Optional[int]

    def implied_prob(self, competitor_id: int) -> Optional[float]:
        """Probability implied by the best price available to back ``competitor_id``."""
        best = self.competitors[competitor_id].best_back
        return None if best is None else 100.0 / best


def _queue_key(order: Order):
    return (order.submit_time, order.order_id)


class MarketBook:
    """Resting orders for every competitor in one race."""

    def __init__(self, n_competitors: int, price_improvement: bool = True, min_stake: int = MIN_STAKE):
        self.n_competitors = n_competitors
        self.price_improvement = price_improvement
        self.min_stake = min_stake
        self.orders: dict[int, Order] = {}
        self.fills: list[MatchFill] = []
        self.open = True
        # [competitor][side] -> {pips: [orders in priority order]}
        self._queues = [{Side.BACK: {}, Side.LAY: {}} for _ in range(n_competitors)]
        self._depth = [{Side.BACK: {}, Side.LAY: {}} for _ in range(n_competitors)]
        self._version = 0
        self._summary: Optional[tuple[int, MarketSummary]] = None
        self._next_id = 1

    def next_order_id(self) -> int:
        oid = self._next_id
        self._next_id += 1
        return oid

    def close(self) -> None:
        """Stop accepting orders (in-play cutoff)."""
        self.open = False

    def _validate(self, order: Order) -> None:
        if not self.open:
            raise OrderRejected("market closed: in-play cutoff has passed")
        if order.order_id in self.orders:
            raise OrderRejected(f"duplicate order_id {order.order_id}")
        if not 0 <= order.competitor_id < self.n_competitors:
            raise OrderRejected(f"unknown competitor {order.competitor_id}")
        if not isinstance(order.side, Side):
            raise OrderRejected(f"bad side {order.side!r}")
        if order.odds not in _LADDER_SET:
            raise OrderRejected(f"odds {order.odds} not on the tick ladder")
        if not isinstance(order.stake, int) or order.stake < self.min_stake:
            raise OrderRejected(f"stake {order.stake} below minimum {self.min_stake}")
        if order.matched != 0 or order.cancelled:
            raise OrderRejected("new orders must be unmatched and live")

    def submit(self, order: Order, now: float) -> list[MatchFill]:
        self._validate(order)
        order.submit_time = now
        self.orders[order.order_id] = order
        self._version += 1

        opposite = Side.LAY if order.side is Side.BACK else Side.BACK
        queues = self._queues[order.competitor_id][opposite]
        depth = self._depth[order.competitor_id][opposite]
        if order.side is Side.BACK:
            # backer is happy with any price at least as long as asked
            levels = [p for p in queues if p >= order.odds] if self.price_improvement else \
                [p for p in queues if p == order.odds]
            levels.sort(reverse=True)
        else:
            levels = [p for p in queues if p <= order.odds] if self.price_improvement else \
                [p for p in queues if p == order.odds]
            levels.sort()

        fills = []
        for price in levels:
            queue = queues[price]
            while queue and order.remaining > 0:
                resting = queue[0]
                qty = min(resting.remaining, order.remaining)
                resting.matched += qty
                order.matched += qty
                depth[price] -= qty
                back, lay = (order, resting) if order.side is Side.BACK else (resting, order)
                fills.append(MatchFill(back.order_id, lay.order_id, back.bettor_id, lay.bettor_id,
                                       order.competitor_id, price, qty, now))
                if resting.remaining == 0:
                    queue.pop(0)
            if not queue:
                del queues[price]
                del depth[price]
            if order.remaining == 0:
                break

        if order.remaining > 0:
            own_q = self._queues[order.competitor_id][order.side].setdefault(order.odds, [])
            bisect.insort(own_q, order, key=_queue_key)
            own_d = self._depth[order.competitor_id][order.side]
            own_d[order.odds] = own_d.get(order.odds, 0) + order.remaining
        self.fills.extend(fills)
        return fills

    def cancel(self, order_id: int, bettor_id: int) -> int:
        order = self.orders.get(order_id)
        if order is None or order.bettor_id != bettor_id:
            raise AuthorizationError(f"order {order_id} not found for bettor {bettor_id}")
        left = order.remaining
        if left == 0:
            return 0
        queues = self._queues[order.competitor_id][order.side]
        queue = queues[order.odds]
        queue.remove(order)
        depth = self._depth[order.competitor_id][order.side]
        depth[order.odds] -= left
        if not queue:
            del queues[order.odds]
            del depth[order.odds]
        order.cancelled = True
        self._version += 1
        return left

    def remaining(self, order_id: int) -> int:
        return self.orders[order_id].remaining

    def depth(self, competitor_id: int, side: Side) -> dict[int, int]:
        return dict(self._depth[competitor_id][side])

    def resting(self, competitor_id: int, side: Side) -> dict[int, list[Order]]:
        return {p: list(q) for p, q in self._queues[competitor_id][side].items()}

    def summary(self) -> MarketSummary:
        if self._summary is not None and self._summary[0] == self._version:
            return self._summary[1]
        markets = []
        for c in range(self.n_competitors):
            backs = self._depth[c][Side.BACK]
            lays = self._depth[c][Side.LAY]
            prices = sorted(set(backs) | set(lays))
            ladder = tuple(LadderLevel(p, backs.get(p, 0), lays.get(p, 0)) for p in prices)
            markets.append(CompetitorMarket(
                competitor_id=c,
                ladder=ladder,
                best_back=max(lays) if lays else None,
                best_lay=min(backs) if backs else None,
            ))
        favourite = None
        for m in markets:
            if m.best_back is not None and (favourite is None or m.best_back < markets[favourite].best_back):
                favourite = m.competitor_id
        summary = MarketSummary(tuple(markets), favourite)
        self._summary = (self._version, summary)
        return summary


def submit_order(book: MarketBook, order: Order, now: float) -> tuple[list[MatchFill], int]:
    """Match ``order`` against the book; returns the fills and the resting remainder."""
    fills = book.submit(order, now)
    return fills, order.remaining


def cancel_order(book: MarketBook, order_id: int, bettor_id: int) -> int:
    return book.cancel(order_id, bettor_id)


def market_summary(book: MarketBook) -> MarketSummary:
    return book.summary()


@dataclass
class SettlementReport:
    winner_id: int
    gross: dict[int, int] = field(default_factory=dict)
    commission: dict[int, int] = field(default_factory=dict)
    net: dict[int, int] = field(default_factory=dict)
    exchange_revenue: int = 0

    def to_dict(self) -> dict:
        return {
            "winner_id": self.winner_id,
            "gross": {str(k): v for k, v in sorted(self.gross.items())},
            "commission": {str(k): v for k, v in sorted(self.commission.items())},
            "net": {str(k): v for k, v in sorted(self.net.items())},
            "exchange_revenue": self.exchange_revenue,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SettlementReport":
        return cls(
            winner_id=d["winner_id"],
            gross={int(k): v for k, v in d["gross"].items()},
            commission={int(k): v for k, v in d["commission"].items()},
            net={int(k): v for k, v in d["net"].items()},
            exchange_revenue=d["exchange_revenue"],
        )


def fill_payout(stake: int, odds: int) -> int:
    """Backer's winnings (cents) on a winning fill: stake * (odds - 1), half-even to the cent."""
    return round(Fraction(stake * (odds - 100), 100))


def settle_race(fills: Iterable[MatchFill], winner_id: int, commission_rate: float,
                n_competitors: int, bettors: Iterable[int] = ()) -> SettlementReport:
    """Pay out every fill, then charge commission on each bettor's positive gross."""
    if not 0 <= winner_id < n_competitors:
        raise ExchangeError(f"unknown winner {winner_id}")
    if not 0 <= commission_rate < 1:
        raise ExchangeError(f"commission_rate {commission_rate} outside [0, 1)")
    rate = Fraction(Decimal(str(commission_rate)))
    gross: dict[int, int] = {b: 0 for b in bettors}
    for f in fills:
        gross.setdefault(f.back_bettor, 0)
        gross.setdefault(f.lay_bettor, 0)
        if f.competitor_id == winner_id:
            amount = fill_payout(f.stake, f.odds)
            gross[f.back_bettor] += amount
            gross[f.lay_bettor] -= amount
        else:
            gross[f.back_bettor] -= f.stake
            gross[f.lay_bettor] += f.stake
    report = SettlementReport(winner_id=winner_id)
    for b in sorted(gross):
        g = gross[b]
        fee = round(rate * g) if g > 0 else 0
        report.gross[b] = g
        report.commission[b] = fee
        report.net[b] = g - fee
        report.exchange_revenue += fee
    return report
