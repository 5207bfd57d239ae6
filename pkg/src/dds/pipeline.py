"""Chicago-taxi trip CSVs to per-driver padded day matrices.

Columns are matched by name, case-insensitively: ``Taxi ID``, ``Trip Start
Timestamp``, ``Trip End Timestamp`` and ``Trip Total``. Timestamps are read at
face value in the portal's ``MM/DD/YYYY HH:MM:SS AM`` form, with ISO-8601 as a
fallback.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from dds.model import DriverHistory

REQUIRED_COLUMNS = {
    "taxi_id": "Taxi ID",
    "start": "Trip Start Timestamp",
    "end": "Trip End Timestamp",
    "fare": "Trip Total",
}
PORTAL_TIME_FORMAT = "%m/%d/%Y %I:%M:%S %p"


class IngestError(ValueError):
    """Unrecoverable input problem; ``category`` is machine readable."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


@dataclass(frozen=True)
class TripRecord:
    taxi_id: str
    start: datetime
    end: datetime
    fare: float


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_kept: int = 0
    dropped: int = 0
    drop_reasons: dict = field(default_factory=dict)
    drivers_available: int = 0
    drivers_sampled: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_kept": self.rows_kept,
            "dropped": self.dropped,
            "drop_reasons": dict(sorted(self.drop_reasons.items())),
            "drivers_available": self.drivers_available,
            "drivers_sampled": list(self.drivers_sampled),
        }


@dataclass(frozen=True)
class DatasetBundle:
    """One driver's padded utilities and acceptance labels."""

    driver_id: str
    dates: tuple[str, ...]
    utilities: np.ndarray
    labels: np.ndarray
    pad_value: float
    split_index: int | None = None

    @property
    def n_days(self) -> int:
        return self.utilities.shape[0]

    @property
    def width(self) -> int:
        return self.utilities.shape[1]

    def history(self) -> DriverHistory:
        return DriverHistory(self.utilities, self.labels, self.driver_id)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    try:
        return datetime.strptime(text, PORTAL_TIME_FORMAT)
    except ValueError:
        return datetime.fromisoformat(text)


def parse_fare(text: str) -> float:
    cleaned = text.strip().replace("$", "").replace(",", "")
    if not cleaned:
        raise ValueError("missing fare")
    fare = float(cleaned)
    if not math.isfinite(fare) or fare < 0:
        raise ValueError(f"invalid fare {text!r}")
    return fare


def _open(source) -> tuple[IO[str], bool]:
    if isinstance(source, os.PathLike) or (isinstance(source, str) and source and "\n" not in source):
        return open(source, newline="", encoding="utf-8-sig"), True
    if isinstance(source, str):
        return io.StringIO(source), True
    return source, False


def parse_trips(csv_source) -> tuple[list[TripRecord], IngestReport]:
    """Read trip rows, dropping (and counting) rows that cannot be used.

    ``csv_source`` is a path, an open text file or CSV text.
    """
    fh, owned = _open(csv_source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise IngestError("empty_input", "input has no header row")
        index = {name.strip().lower(): i for i, name in enumerate(header)}
        cols = {}
        for key, name in REQUIRED_COLUMNS.items():
            if name.lower() not in index:
                raise IngestError("missing_column", f"missing required column {name!r}")
            cols[key] = index[name.lower()]

        report = IngestReport()
        reasons = Counter()
        trips = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_read += 1
            try:
                taxi = row[cols["taxi_id"]].strip()
                if not taxi:
                    raise KeyError("taxi_id")
            except (IndexError, KeyError):
                reasons["missing_taxi_id"] += 1
                continue
            try:
                start = parse_timestamp(row[cols["start"]])
                end = parse_timestamp(row[cols["end"]])
            except (IndexError, ValueError):
                reasons["bad_timestamp"] += 1
                continue
            if end < start:
                reasons["end_before_start"] += 1
                continue
            try:
                fare = parse_fare(row[cols["fare"]])
            except (IndexError, ValueError):
                reasons["bad_fare"] += 1
                continue
            trips.append(TripRecord(taxi, start, end, fare))
    finally:
        if owned:
            fh.close()

    report.dropped = sum(reasons.values())
    report.drop_reasons = dict(reasons)
    report.rows_kept = len(trips)
    if not trips:
        raise IngestError("no_rows", "no usable trip rows in input")
    return trips, report


def aggregate(trips: Iterable[TripRecord], driver_count: int, seed: int = 0) -> dict[str, list[tuple[date, list[float]]]]:
    """Per sampled driver: chronologically ordered ``(date, fares)`` working days.

    Days without trips are skipped, so consecutive entries may straddle
    calendar gaps. Drivers are sampled uniformly without replacement.
    """
    by_driver: dict[str, dict[date, list[TripRecord]]] = defaultdict(lambda: defaultdict(list))
    for trip in trips:
        by_driver[trip.taxi_id][trip.start.date()].append(trip)
    if not by_driver:
        raise IngestError("no_rows", "no trips to aggregate")
    if driver_count < 1:
        raise IngestError("bad_option", "driver_count must be positive")
    ids = sorted(by_driver)
    if driver_count > len(ids):
        raise IngestError("too_few_drivers",
                          f"requested {driver_count} drivers but only {len(ids)} available")
    rng = np.random.default_rng(seed)
    chosen = sorted(ids[i] for i in rng.choice(len(ids), size=driver_count, replace=False))
    out = {}
    for taxi in chosen:
        days = by_driver[taxi]
        out[taxi] = [(day, [t.fare for t in sorted(days[day], key=lambda t: (t.start, t.end))])
                     for day in sorted(days)]
    return out


def pad_and_encode(sequences: dict[str, list[tuple[date, list[float]]]], global_mean: bool = False) -> list[DatasetBundle]:
    """Pad every day to the driver's longest day with the mean fare; label real trips 1, pads 0."""
    if not sequences:
        raise IngestError("no_rows", "nothing to encode")
    all_fares = [f for days in sequences.values() for _, fares in days for f in fares]
    bundles = []
    for taxi, days in sequences.items():
        fares = [f for _, day in days for f in day]
        pad = float(np.mean(all_fares if global_mean else fares))
        width = max(len(day) for _, day in days)
        u = np.full((len(days), width), pad)
        y = np.zeros((len(days), width), dtype=np.int8)
        for d, (_, day) in enumerate(days):
            u[d, : len(day)] = day
            y[d, : len(day)] = 1
        bundles.append(DatasetBundle(taxi, tuple(dd.isoformat() for dd, _ in days), u, y, pad))
    return bundles


def split_index(n_days: int, train_fraction: float) -> int:
    if not 0 < train_fraction < 1:
        raise IngestError("bad_option", f"train_fraction must lie in (0, 1), got {train_fraction}")
    if n_days < 2:
        raise IngestError("too_few_days", "need at least two days to split")
    # guard against 0.7 * 10 == 7.000000000000001
    k = math.ceil(round(train_fraction * n_days, 9))
    return min(max(k, 1), n_days - 1)


def split(bundle: DatasetBundle, train_fraction: float = 0.4) -> tuple[DatasetBundle, DatasetBundle]:
    """Chronological split: the first ``ceil(fraction * D)`` days train, the rest test."""
    k = split_index(bundle.n_days, train_fraction)
    train = replace(bundle, dates=bundle.dates[:k], utilities=bundle.utilities[:k], labels=bundle.labels[:k],
                    split_index=None)
    test = replace(bundle, dates=bundle.dates[k:], utilities=bundle.utilities[k:], labels=bundle.labels[k:],
                   split_index=None)
    return train, test


# --------------------------------------------------------------------------
# on-disk dataset format shared with the simulator


def write_dataset(directory, history: DriverHistory, meta: dict) -> Path:
    """Write ``meta.json`` and ``days.csv`` (day_index, slot, utility, label)."""
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = dict(meta)
    meta.update(driver_id=history.driver_id, n_days=history.n_days, width=history.width)
    with open(directory / "days.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day_index", "slot", "utility", "label"])
        for d in range(history.n_days):
            for t in range(history.width):
                w.writerow([d, t + 1, repr(float(history.utilities[d, t])), int(history.labels[d, t])])
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def read_dataset(directory) -> tuple[DriverHistory, dict]:
    import json

    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise IngestError("missing_dataset", f"{directory} has no meta.json") from exc
    n_days, width = int(meta["n_days"]), int(meta["width"])
    u = np.full((n_days, width), np.nan)
    y = np.zeros((n_days, width), dtype=np.int8)
    with open(directory / "days.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        if set(reader.fieldnames or ()) != {"day_index", "slot", "utility", "label"}:
            raise IngestError("schema_mismatch", f"{directory / 'days.csv'} has columns {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                d, t = int(row["day_index"]), int(row["slot"]) - 1
                u[d, t] = float(row["utility"])
                y[d, t] = int(row["label"])
            except (ValueError, IndexError) as exc:
                raise IngestError("schema_mismatch", f"{directory / 'days.csv'}:{line}: {exc}") from exc
    if np.isnan(u).any():
        raise IngestError("schema_mismatch", f"{directory / 'days.csv'} does not cover {n_days}x{width} slots")
    return DriverHistory(u, y, str(meta["driver_id"])), meta


def find_datasets(directory) -> list[Path]:
    """A dataset directory, or a directory of per-driver dataset directories."""
    directory = Path(directory)
    if (directory / "meta.json").exists():
        return [directory]
    found = sorted(p.parent for p in directory.glob("*/meta.json"))
    if not found:
        raise IngestError("missing_dataset", f"no dataset under {directory}")
    return found
