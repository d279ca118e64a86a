"""Race sessions, race records and training-sample extraction.

A race record is the ordered event log of one race.  Every event is a
dict with ``t`` (seconds) and ``kind``:

``tick``       ``ranks`` (per competitor, 1 = leader) and ``distances``
``placed``     ``order``: order snapshot at submission
``matched``    ``fill``: one :class:`~betsim.exchange.MatchFill`
``cancelled``  ``order_id``, ``bettor_id``, ``amount`` (cents returned)
``settled``    ``report``: settlement report; always the last event

Record files are JSON lines: a header object (schema name, version,
population, race settings) followed by one event per line tagged with its
``race`` index.  A ``.gz`` suffix switches on gzip.
"""
from __future__ import annotations

import csv
import gzip
import heapq
import io
import json
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .agents import Bettor, BettorSpec, Cancel, Place, RaceView
from .errors import DataError
from .exchange import MarketBook, Order, Side, settle_race, SettlementReport
from .race_sim import RaceConfig, init_race, rank_order, ranks_by_competitor, step_race, winner_of
from .rng import derive_seed, stream

RECORD_SCHEMA = "betsim.race-record"
RECORD_VERSION = 1
SAMPLE_HEADER = ("distance", "time", "rank", "stake", "label")
FEATURES = ("distance", "time", "rank", "stake")


@dataclass
class RaceRecord:
    race_index: int
    bettors: dict[int, str]  # bettor id -> strategy
    events: list[dict]

    @property
    def settlement(self) -> SettlementReport:
        if not self.events or self.events[-1]["kind"] != "settled":
            raise DataError(f"race {self.race_index} has no settlement event")
        return SettlementReport.from_dict(self.events[-1]["report"])


def simulate_race(race_index: int, race_config: RaceConfig, population: Sequence[BettorSpec],
                  master_seed: int, commission_rate: float = 0.05, model=None,
                  price_improvement: bool = True) -> RaceRecord:
    """Run one race with its betting market from start to settlement.

    Bettors due at a tick act in wakeup-time order (ties to the lower id),
    each seeing the market as left by the previous one.  Orders are taken
    until the first competitor finishes.
    """
    config = replace(race_config, seed=derive_seed(master_seed, race_index, "race"))
    state = init_race(config, derive_seed(master_seed, race_index, "pool"))
    book = MarketBook(state.n, price_improvement=price_improvement)
    bettors = {}
    for spec in population:
        rollout = stream(master_seed, race_index, "rollout", spec.bettor_id) if spec.strategy == "RP" else None
        bettors[spec.bettor_id] = Bettor(spec, stream(master_seed, race_index, "agent", spec.bettor_id),
                                         rollout, model if spec.strategy == "MODEL" else None)
    window = max([int(s.params.get("window", 0)) for s in population] + [1])
    history: deque = deque(maxlen=window + 1)
    wakeups = sorted((b.first_wakeup(), bid) for bid, b in bettors.items())
    heapq.heapify(wakeups)
    events: list[dict] = []
    dt = config.tick_seconds

    def record_tick() -> tuple:
        ranks = tuple(ranks_by_competitor(rank_order(state)))
        distances = tuple(state.distance.tolist())
        history.append(distances)
        events.append({"t": state.t * dt, "kind": "tick", "ranks": list(ranks), "distances": list(distances)})
        return ranks, distances

    def run_bettors(ranks, distances) -> None:
        now = state.t * dt
        if not wakeups or wakeups[0][0] > now:
            return
        view = RaceView(state.t, now, ranks, distances, config.track_length, tuple(history))
        while wakeups and wakeups[0][0] <= now:
            when, bid = heapq.heappop(wakeups)
            bettor = bettors[bid]
            decision = bettor.deliberate(now, view, book.summary(), state, book.remaining)
            action = decision.action
            if isinstance(action, Place):
                order = Order(book.next_order_id(), bid, action.competitor_id, action.side,
                              action.odds, action.stake)
                fills = book.submit(order, now)
                snap = order.snapshot()
                snap["matched"] = 0
                events.append({"t": now, "kind": "placed", "order": snap})
                for f in fills:
                    events.append({"t": now, "kind": "matched", "fill": f.to_dict()})
                if order.remaining > 0:
                    bettor.placed(now, order.order_id)
            elif isinstance(action, Cancel):
                amount = book.cancel(action.order_id, bid)
                events.append({"t": now, "kind": "cancelled", "order_id": action.order_id,
                               "bettor_id": bid, "amount": amount})
            heapq.heappush(wakeups, (when + decision.next_wakeup, bid))

    run_bettors(*record_tick())
    while not state.complete:
        step_race(state)
        ranks, distances = record_tick()
        if book.open and state.any_finished:
            book.close()
        if book.open:
            run_bettors(ranks, distances)
    report = settle_race(book.fills, winner_of(state), commission_rate, state.n, sorted(bettors))
    events.append({"t": state.t * dt, "kind": "settled", "report": report.to_dict()})
    return RaceRecord(race_index, {s.bettor_id: s.strategy for s in population}, events)


# -- record files -------------------------------------------------------------

def _open(path: Path, mode: str):
    if mode.startswith("r") and not path.exists():
        raise DataError(f"{path}: no such record file")
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.GzipFile(path, mode[0] + "b", mtime=0), encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def record_header(population: Sequence[BettorSpec], extra: Optional[dict] = None) -> dict:
    header = {
        "schema": RECORD_SCHEMA,
        "version": RECORD_VERSION,
        "population": [{"bettor_id": s.bettor_id, "strategy": s.strategy} for s in population],
    }
    if extra:
        header.update(extra)
    return header


def dump_record(record: RaceRecord) -> str:
    return "".join(
        json.dumps({"race": record.race_index, **ev}, separators=(",", ":")) + "\n" for ev in record.events
    )


def write_records(path: str | Path, header: dict, records: Iterable[RaceRecord]) -> int:
    n = 0
    with _open(Path(path), "w") as fh:
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for rec in records:
            fh.write(dump_record(rec))
            n += 1
    return n


def read_header(path: str | Path) -> dict:
    with _open(Path(path), "r") as fh:
        line = fh.readline()
    return _parse_header(line, path)


def _parse_header(line: str, path) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError:
        raise DataError(f"{path}: missing record header") from None
    if not isinstance(header, dict) or header.get("schema") != RECORD_SCHEMA:
        raise DataError(f"{path}: not a race-record file")
    if header.get("version") != RECORD_VERSION:
        raise DataError(f"{path}: unsupported record version {header.get('version')}")
    return header


def read_records(path: str | Path) -> Iterator[RaceRecord]:
    """Stream complete race records from a record file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such record file")
    with _open(path, "r") as fh:
        header = _parse_header(fh.readline(), path)
        bettors = {p["bettor_id"]: p["strategy"] for p in header["population"]}
        current, events = None, []
        for lineno, line in enumerate(fh, start=2):
            try:
                ev = json.loads(line)
            except json.JSONDecodeError:
                raise DataError(f"{path}:{lineno}: malformed event line") from None
            race = ev.pop("race")
            if race != current:
                if events:
                    raise DataError(f"{path}: race {current} ends without settlement")
                current = race
            events.append(ev)
            if ev["kind"] == "settled":
                yield RaceRecord(race, bettors, events)
                events = []
        if events:
            raise DataError(f"{path}: race {current} ends without settlement")


# -- profits and samples ------------------------------------------------------

def profit_by_bettor(record: RaceRecord) -> dict[int, int]:
    """Net profit (cents) of every bettor in the race; bettors with no fills get 0."""
    net = record.settlement.net
    return {b: net.get(b, 0) for b in sorted(record.bettors)}


@dataclass(frozen=True)
class TrainingSample:
    distance: float
    time: float
    rank: int
    stake: float
    label: int  # 1 = back, 0 = lay

    def row(self) -> tuple:
        return (self.distance, self.time, self.rank, self.stake)


def top_bettors(profits: dict[int, int], quantile: float) -> set[int]:
    """The ``ceil(q * B)`` most profitable bettors; equal profits go to the lower id."""
    k = math.ceil(quantile * len(profits) - 1e-12)
    ranked = sorted(profits, key=lambda b: (-profits[b], b))
    return set(ranked[:k])


def _race_samples(record: RaceRecord, chosen: set[int]) -> list[TrainingSample]:
    matched: set[int] = set()
    for ev in record.events:
        if ev["kind"] == "matched":
            matched.add(ev["fill"]["back_order_id"])
            matched.add(ev["fill"]["lay_order_id"])
    out = []
    tick = None
    for ev in record.events:
        kind = ev["kind"]
        if kind == "tick":
            tick = ev
        elif kind == "placed":
            order = ev["order"]
            if order["bettor_id"] in chosen and order["order_id"] in matched:
                c = order["competitor_id"]
                out.append(TrainingSample(
                    distance=float(tick["distances"][c]),
                    time=float(ev["t"]),
                    rank=int(tick["ranks"][c]),
                    stake=order["stake"] / 100.0,
                    label=1 if order["side"] == Side.BACK.value else 0,
                ))
    return out


def extract_samples(records: Iterable[RaceRecord], quantile: float = 0.2,
                    per_race: bool = True) -> list[TrainingSample]:
    """Matched bets of each race's most profitable bettors, as labelled feature rows.

    With ``per_race=False`` the top bettors are chosen once on total profit
    over all the records.
    """
    if not 0 < quantile <= 1:
        raise ValueError("quantile must lie in (0, 1]")
    if per_race:
        samples = []
        for rec in records:
            samples.extend(_race_samples(rec, top_bettors(profit_by_bettor(rec), quantile)))
        return samples
    records = list(records)
    totals: dict[int, int] = {}
    for rec in records:
        for b, p in profit_by_bettor(rec).items():
            totals[b] = totals.get(b, 0) + p
    chosen = top_bettors(totals, quantile)
    return [s for rec in records for s in _race_samples(rec, chosen)]


def split_dataset(samples: Sequence[TrainingSample], ratio: float = 0.8,
                  seed: int = 0) -> tuple[list[TrainingSample], list[TrainingSample]]:
    """Stratified seeded split into (train, holdout)."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    train_idx, hold_idx = [], []
    for label in (0, 1):
        idx = np.array([i for i, s in enumerate(samples) if s.label == label], dtype=np.int64)
        if len(idx) < 10:
            raise DataError(f"only {len(idx)} samples of class {label}; need at least 10 to stratify")
        idx = rng.permutation(idx)
        cut = int(round(ratio * len(idx)))
        train_idx.extend(idx[:cut].tolist())
        hold_idx.extend(idx[cut:].tolist())
    train_idx = rng.permutation(np.array(train_idx, dtype=np.int64))
    hold_idx = rng.permutation(np.array(hold_idx, dtype=np.int64))
    return [samples[i] for i in train_idx], [samples[i] for i in hold_idx]


def write_samples(path: str | Path, samples: Iterable[TrainingSample]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_HEADER)
        for s in samples:
            w.writerow([f"{s.distance:.6f}", f"{s.time:.3f}", str(int(s.rank)), f"{s.stake:.2f}", str(int(s.label))])
            n += 1
    return n


def read_samples(path: str | Path) -> list[TrainingSample]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such sample table")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != SAMPLE_HEADER:
            raise DataError(f"{path}: expected header {','.join(SAMPLE_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                d, t, r, s, y = row
                out.append(TrainingSample(float(d), float(t), int(r), float(s), int(y)))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed sample row") from None
    return out


def to_arrays(samples: Sequence[TrainingSample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([s.row() for s in samples], dtype=float).reshape(-1, len(FEATURES))
    y = np.array([s.label for s in samples], dtype=float)
    return X, y
