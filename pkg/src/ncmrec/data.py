"""Session-log ingestion, threshold filtering, splitting and offline replay."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ncmrec.encoder import HistoryPrefix

BEHAVIORS = ("click", "purchase")
FEEDBACK_CLASS = {"click": 1, "purchase": 2}
MIN_OCCURRENCES = 3

DEFAULT_BEHAVIOR_MAP: dict[str, str | None] = {
    "view": "click",
    "click": "click",
    "addtocart": "purchase",
    "cart": "purchase",
    "purchase": "purchase",
    "buy": "purchase",
    "transaction": None,  # dropped
}

HEADER = ("session_id", "timestamp", "item_id", "behavior")
RETAILROCKET_HEADER = ("timestamp", "visitorid", "event", "itemid", "transactionid")


class DataError(ValueError):
    pass


class EmptyDatasetError(DataError):
    pass


@dataclass(frozen=True)
class Event:
    timestamp: int
    item: int  # original item id as found in the log
    behavior: str


@dataclass
class Session:
    session_id: int
    events: list[Event]

    def __len__(self):
        return len(self.events)


@dataclass
class SessionDataset:
    sessions: list[Session]
    item_ids: list[int] = field(default_factory=list)  # catalog index -> original id
    split: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.item_ids:
            self.item_ids = sorted({e.item for s in self.sessions for e in s.events})
        self._index = {item: i for i, item in enumerate(self.item_ids)}

    @property
    def catalog_size(self) -> int:
        return len(self.item_ids)

    def item_index(self, item: int) -> int:
        return self._index[item]

    def statistics(self) -> dict[str, int]:
        """Counts in the layout of the usual dataset-statistics table.

        ``interactions`` counts sessions (interaction trajectories).
        """
        behaviors = Counter(e.behavior for s in self.sessions for e in s.events)
        return {
            "interactions": len(self.sessions),
            "items": self.catalog_size,
            "clicks": behaviors.get("click", 0),
            "purchases": behaviors.get("purchase", 0),
        }

    def by_split(self, name: str) -> list[Session]:
        return [s for s in self.sessions if self.split.get(s.session_id, "train") == name]

    def prefixes(self, session: Session, window: int) -> list[HistoryPrefix]:
        """Observed prefix after each event, windowed."""
        out, p = [], HistoryPrefix()
        for e in session.events:
            p = p.extend(self.item_index(e.item), 1).window(window)
            out.append(p)
        return out


def _parse_int(value: str, what: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataError(f"line {lineno}: {what} {value!r} is not an integer") from None


def read_events(text: str, behavior_map: Mapping[str, str | None] | None = None, delimiter: str | None = None):
    """Parse raw rows into ``(session_id, Event)`` pairs.

    Accepts the four-column session format or the Retailrocket ``events.csv``
    layout (timestamp in ms, visitor as session). The layout is chosen from
    the header; headerless input is taken as the four-column format.
    """
    behavior_map = dict(DEFAULT_BEHAVIOR_MAP if behavior_map is None else behavior_map)
    if delimiter is None:
        first = text.split("\n", 1)[0]
        delimiter = "\t" if "\t" in first else ","
    rows = csv.reader(io.StringIO(text), delimiter=delimiter)
    out = []
    layout = HEADER
    for lineno, row in enumerate(rows, 1):
        if not row or not "".join(row).strip():
            continue
        cells = tuple(c.strip() for c in row)
        if lineno == 1 and cells[:4] == RETAILROCKET_HEADER[:4]:
            layout = RETAILROCKET_HEADER
            continue
        if lineno == 1 and cells[:4] == HEADER:
            continue
        if layout is HEADER:
            if len(cells) != 4:
                raise DataError(f"line {lineno}: expected 4 fields, got {len(cells)}")
            sid, ts, item, token = cells
            ts_val = _parse_int(ts, "timestamp", lineno)
        else:
            if len(cells) < 4:
                raise DataError(f"line {lineno}: expected at least 4 fields, got {len(cells)}")
            ts, sid, token, item = cells[:4]
            ts_val = _parse_int(ts, "timestamp", lineno) // 1000
        sid_val = _parse_int(sid, "session id", lineno)
        item_val = _parse_int(item, "item id", lineno)
        if token not in behavior_map:
            raise DataError(f"line {lineno}: unknown behavior {token!r}")
        behavior = behavior_map[token]
        if behavior is None:
            continue
        if behavior not in BEHAVIORS:
            raise DataError(f"line {lineno}: behavior maps to {behavior!r}, expected click or purchase")
        out.append((sid_val, Event(ts_val, item_val, behavior)))
    return out


def filter_sessions(sessions: Iterable[Session], min_count: int = MIN_OCCURRENCES) -> list[Session]:
    """Drop rare items and short sessions, repeating until nothing changes."""
    sessions = [Session(s.session_id, list(s.events)) for s in sessions]
    while True:
        counts = Counter(e.item for s in sessions for e in s.events)
        kept = []
        changed = False
        for s in sessions:
            events = [e for e in s.events if counts[e.item] >= min_count]
            changed |= len(events) != len(s.events)
            if len(events) >= min_count:
                kept.append(Session(s.session_id, events))
            else:
                changed = True
        sessions = kept
        if not changed:
            return sessions


def build_dataset(pairs, min_count: int = MIN_OCCURRENCES) -> SessionDataset:
    grouped: dict[int, list[Event]] = {}
    for sid, ev in pairs:
        grouped.setdefault(sid, []).append(ev)
    # stable sort keeps file order among equal timestamps
    sessions = [Session(sid, sorted(evs, key=lambda e: e.timestamp)) for sid, evs in sorted(grouped.items())]
    sessions = filter_sessions(sessions, min_count)
    if not sessions:
        raise EmptyDatasetError("no sessions left after filtering")
    return SessionDataset(sessions)


def load_sessions(path, behavior_map: Mapping[str, str | None] | None = None, min_count: int = MIN_OCCURRENCES) -> SessionDataset:
    text = Path(path).read_text()
    return build_dataset(read_events(text, behavior_map), min_count)


def dump_sessions(dataset: SessionDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for s in dataset.sessions:
        for e in s.events:
            w.writerow((s.session_id, e.timestamp, e.item, e.behavior))
    return buf.getvalue()


def write_sessions(dataset: SessionDataset, path) -> None:
    Path(path).write_text(dump_sessions(dataset))


def split_sessions(dataset: SessionDataset, test_fraction: float = 0.1, seed: int = 0) -> SessionDataset:
    """Seeded session-level train/test assignment (in place, also returned)."""
    ids = [s.session_id for s in dataset.sessions]
    rng = np.random.default_rng([seed, 7])
    order = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    if len(ids) > 1:
        n_test = min(max(n_test, 1), len(ids) - 1)
    else:
        n_test = 0
    test = {ids[i] for i in order[:n_test]}
    dataset.split = {sid: ("test" if sid in test else "train") for sid in ids}
    return dataset


# ---------------------------------------------------------------- replay


@dataclass(frozen=True)
class ReplayCursor:
    session: int  # index into the session list being replayed
    position: int  # index of the last observed event


@dataclass
class ReplayStep:
    prefix: HistoryPrefix  # observed history after the step
    item: int  # catalog index of the logged item
    feedback: int  # feedback class of the logged event
    proposal_hit: bool
    done: bool
    cursor: ReplayCursor


def replay_env_step(dataset: SessionDataset, sessions: list[Session], cursor: ReplayCursor, action: int, window: int = 10) -> ReplayStep:
    """Advance one logged event; the proposed action only feeds scoring."""
    s = sessions[cursor.session]
    nxt = cursor.position + 1
    if nxt >= len(s.events):
        raise IndexError("cursor already at the end of the session")
    events = s.events[: nxt + 1]
    prefix = HistoryPrefix(
        tuple(dataset.item_index(e.item) for e in events),
        (1,) * len(events),
    ).window(window)
    logged = dataset.item_index(s.events[nxt].item)
    return ReplayStep(
        prefix=prefix,
        item=logged,
        feedback=FEEDBACK_CLASS[s.events[nxt].behavior],
        proposal_hit=int(action) == logged,
        done=nxt == len(s.events) - 1,
        cursor=ReplayCursor(cursor.session, nxt),
    )


@dataclass
class ReplayTransitions:
    """Every logged step of a split, flattened: predict ``item`` from ``prefix``."""

    prefixes: list[HistoryPrefix]
    next_prefixes: list[HistoryPrefix]
    items: np.ndarray
    feedback: np.ndarray
    episode: np.ndarray  # session index of each step
    terminal: np.ndarray

    def __len__(self):
        return len(self.prefixes)


def replay_transitions(dataset: SessionDataset, sessions: list[Session], window: int = 10) -> ReplayTransitions:
    prefixes, nxt, items, fb, ep, term = [], [], [], [], [], []
    for si, s in enumerate(sessions):
        cursor = ReplayCursor(si, 0)
        prefix = dataset.prefixes(s, window)[0]
        while True:
            step = replay_env_step(dataset, sessions, cursor, -1, window)
            prefixes.append(prefix)
            nxt.append(step.prefix)
            items.append(step.item)
            fb.append(step.feedback)
            ep.append(si)
            term.append(step.done)
            if step.done:
                break
            prefix, cursor = step.prefix, step.cursor
    return ReplayTransitions(prefixes, nxt, np.array(items), np.array(fb), np.array(ep), np.array(term, dtype=bool))
