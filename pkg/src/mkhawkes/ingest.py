"""Quote-to-event conversion and event-file input/output.

Quote files carry the header ``timestamp_ns,bid,ask``; event files carry
``timestamp_ns,type`` with type 1 for an upward mid-price move and type 2 for
a downward move.  Prices are compared as exact decimals so that change
detection never trips over binary floating-point representations, and each
mid change emits one event regardless of how many ticks it spans.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

import numpy as np

from .model import EventStream

UP, DOWN = 1, 2


@dataclass(frozen=True)
class QuoteRecord:
    """One top-of-book snapshot."""

    timestamp_ns: int
    bid: Decimal
    ask: Decimal


@dataclass
class IngestReport:
    """Bookkeeping of one ingestion run."""

    n_rows: int = 0
    n_quotes: int = 0
    n_crossed: int = 0
    n_events: int = 0
    row_errors: list = field(default_factory=list)   # (line_number, message)

    def as_dict(self):
        return {
            "n_rows": self.n_rows,
            "n_quotes": self.n_quotes,
            "n_crossed": self.n_crossed,
            "n_events": self.n_events,
            "row_errors": [[line, msg] for line, msg in self.row_errors],
        }


def read_quotes_csv(path, report=None):
    """Parse a quote CSV; malformed rows are recorded, not fatal.

    Returns (quotes, report) where quotes is a list of QuoteRecord sorted as
    in the file and the report carries per-row errors with line numbers.
    """
    report = report if report is not None else IngestReport()
    quotes = []
    last_ts = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["timestamp_ns", "bid", "ask"]:
            raise ValueError(f"{path}: expected header 'timestamp_ns,bid,ask'")
        for line_no, row in enumerate(reader, start=2):
            report.n_rows += 1
            if len(row) < 3:
                report.row_errors.append((line_no, "expected 3 fields"))
                continue
            try:
                ts = int(row[0])
                bid = Decimal(row[1])
                ask = Decimal(row[2])
            except (ValueError, InvalidOperation) as exc:
                report.row_errors.append((line_no, str(exc)))
                continue
            if bid <= 0:
                report.row_errors.append((line_no, "non-positive bid"))
                continue
            if last_ts is not None and ts < last_ts:
                report.row_errors.append((line_no, "timestamp decreased"))
                continue
            last_ts = ts
            quotes.append(QuoteRecord(timestamp_ns=ts, bid=bid, ask=ask))
    return quotes, report


def mid_price_events(quotes, session_window=None, report=None):
    """Extract up/down mid-price change events from a quote sequence.

    The mid is (bid + ask) / 2 compared exactly; a strict increase emits one
    type-1 event, a strict decrease one type-2 event, and unchanged mids emit
    nothing.  Crossed quotes (ask < bid) are dropped and counted.  Quotes
    before the session window still update the reference mid so the first
    in-window change is detected against the true previous state.
    """
    report = report if report is not None else IngestReport()
    start_ns = session_window[0] if session_window else None
    end_ns = session_window[1] if session_window else None

    raw = []
    prev_mid = None
    first_ts = last_ts = None
    for q in quotes:
        if q.ask < q.bid:
            report.n_crossed += 1
            continue
        if end_ns is not None and q.timestamp_ns >= end_ns:
            break
        report.n_quotes += 1
        if first_ts is None:
            first_ts = q.timestamp_ns
        last_ts = q.timestamp_ns
        mid = (q.bid + q.ask) / 2
        if prev_mid is not None and mid != prev_mid:
            in_window = start_ns is None or q.timestamp_ns >= start_ns
            if in_window:
                raw.append((q.timestamp_ns, UP if mid > prev_mid else DOWN))
        prev_mid = mid

    report.n_events = len(raw)
    start = start_ns if start_ns is not None else (first_ts if first_ts is not None else 0)
    horizon = end_ns if end_ns is not None else (last_ts if last_ts is not None else start)
    return dedupe_and_order(raw, m=2, start_ns=start, horizon_ns=horizon), report


def dedupe_and_order(events, m, start_ns=0, horizon_ns=None):
    """Normalize (timestamp, type) pairs into a strictly increasing stream.

    Duplicate (timestamp, type) pairs collapse to one event; events of
    different types at the same nanosecond keep their input order with each
    later one shifted forward by one nanosecond.  The result is idempotent on
    already-strict streams.
    """
    cleaned = []
    seen_at_ts = {}
    for ts, tp in events:
        ts = int(ts)
        if seen_at_ts.get("ts") != ts:
            seen_at_ts = {"ts": ts, "types": set()}
        if tp in seen_at_ts["types"]:
            continue
        seen_at_ts["types"].add(tp)
        cleaned.append((ts, int(tp)))

    times, types = [], []
    prev = None
    for ts, tp in cleaned:
        if prev is not None and ts <= prev:
            ts = prev + 1
        times.append(ts)
        types.append(tp)
        prev = ts

    times = np.asarray(times, dtype=np.int64)
    types = np.asarray(types, dtype=np.int64)
    if horizon_ns is None:
        horizon_ns = int(times[-1]) if times.size else start_ns
    horizon_ns = max(int(horizon_ns), int(times[-1]) if times.size else int(start_ns))
    return EventStream(times_ns=times, types=types, m=m, horizon_ns=horizon_ns, start_ns=int(start_ns))


def ingest_quotes_file(path, session_window=None):
    """Read a quote CSV and return (EventStream, IngestReport)."""
    report = IngestReport()
    quotes, report = read_quotes_csv(path, report)
    return mid_price_events(quotes, session_window=session_window, report=report)


def write_events_csv(stream, path):
    """Write an event stream as ``timestamp_ns,type`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_ns", "type"])
        for ts, tp in zip(stream.times_ns, stream.types):
            writer.writerow([int(ts), int(tp)])


def read_events_csv(path, m=None, start_ns=None, horizon_ns=None):
    """Read an event CSV back into an EventStream.

    The window defaults to [first event, last event] unless overridden; m
    defaults to the largest type index present (at least 2).
    """
    times, types = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["timestamp_ns", "type"]:
            raise ValueError(f"{path}: expected header 'timestamp_ns,type'")
        for line_no, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise ValueError(f"{path}:{line_no}: expected 2 fields")
            times.append(int(row[0]))
            types.append(int(row[1]))
    times = np.asarray(times, dtype=np.int64)
    types = np.asarray(types, dtype=np.int64)
    if m is None:
        m = max(2, int(types.max()) if types.size else 2)
    if start_ns is None:
        start_ns = int(times[0]) if times.size else 0
    if horizon_ns is None:
        horizon_ns = int(times[-1]) if times.size else int(start_ns)
    return EventStream(times_ns=times, types=types, m=m, horizon_ns=horizon_ns, start_ns=start_ns)
