"""Alpha labels, dataset splitting, and instrument definitions.

The alpha at horizon h is the raw future mid-price change mid(t+h) - mid(t)
in price units.  Six horizons are labeled per example; the last six records
of a stream carry no complete label and are dropped.  Splits are
chronological so that no future information leaks backwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, InvariantError, OrderingError
from .lob import LevelStats, TickRecord, summary_stats

HORIZONS = 6

LABELED_HEADER = (
    ["time"]
    + [f"ofi_{i}" for i in range(1, 11)]
    + [f"alpha_{h}" for h in range(1, HORIZONS + 1)]
)


@dataclass(frozen=True)
class LabeledExample:
    """OFI feature vector paired with its six forward mid-price changes."""

    timestamp: int
    features: np.ndarray  # (10,) OFI levels
    label: np.ndarray  # (6,) alphas in price units

    def __post_init__(self):
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "label", np.asarray(self.label, dtype=np.float64))
        if self.features.shape != (10,):
            raise InvariantError(f"features must be (10,), got {self.features.shape}")
        if self.label.shape != (HORIZONS,):
            raise InvariantError(f"label must be ({HORIZONS},), got {self.label.shape}")


@dataclass(frozen=True)
class DatasetSplit:
    """Contiguous chronological train/validation/test partition."""

    train: list[LabeledExample]
    validation: list[LabeledExample]
    test: list[LabeledExample]


@dataclass(frozen=True)
class InstrumentSpec:
    """Static trading parameters for one instrument.

    `tick_size` is the price increment that defines one pip.  `lot_size`
    is the position's units per lot, so one price unit of favourable move
    on a one-lot position is worth `lot_size` of account currency.
    """

    name: str
    tick_size: float
    commission_per_lot_per_side: float
    lot_size: float
    fixed_spread_pips: float

    def __post_init__(self):
        if self.tick_size <= 0:
            raise InvariantError(f"tick_size must be positive, got {self.tick_size}")
        if self.lot_size <= 0:
            raise InvariantError(f"lot_size must be positive, got {self.lot_size}")
        if self.commission_per_lot_per_side < 0 or self.fixed_spread_pips < 0:
            raise InvariantError("costs must be non-negative")

    def round_trip_cost(self) -> float:
        """Total cost of one open/close cycle: both commissions plus spread."""
        spread_cost = self.fixed_spread_pips * self.tick_size * self.lot_size
        return 2.0 * self.commission_per_lot_per_side + spread_cost


def compute_alphas(mids, horizons: int = HORIZONS) -> np.ndarray:
    """Forward mid changes: out[t, h-1] = mid[t+h] - mid[t].

    Returns shape (len(mids) - horizons, horizons); the tail rows with
    incomplete futures are dropped.
    """
    arr = np.asarray(mids, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"mids must be one-dimensional, got shape {arr.shape}")
    n = arr.shape[0]
    if n <= horizons:
        raise ValueError(f"need more than {horizons} mids, got {n}")
    base = arr[: n - horizons]
    return np.column_stack([arr[h : n - horizons + h] - base for h in range(1, horizons + 1)])


def to_pips(alpha, spec: InstrumentSpec):
    """Convert price-unit alphas to pips by dividing by the tick size."""
    return np.asarray(alpha, dtype=np.float64) / spec.tick_size


def label_records(records: list[TickRecord], horizons: int = HORIZONS) -> list[LabeledExample]:
    """Pair each tick's OFI vector with its forward alphas."""
    if len(records) <= horizons:
        raise ValueError(f"need more than {horizons} records, got {len(records)}")
    alphas = compute_alphas([r.mid for r in records], horizons)
    return [
        LabeledExample(rec.timestamp, rec.ofi, alphas[t])
        for t, rec in enumerate(records[: len(records) - horizons])
    ]


def split_dataset(examples: list[LabeledExample]) -> DatasetSplit:
    """Chronological 8:1:1 split; integer remainders go to the train slice."""
    n = len(examples)
    if n < 10:
        raise ValueError(f"need at least 10 examples to split, got {n}")
    ts = [e.timestamp for e in examples]
    for i in range(1, n):
        if ts[i] <= ts[i - 1]:
            raise OrderingError(
                f"examples must be in strictly increasing time order (index {i})"
            )
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=examples[:n_train],
        validation=examples[n_train : n_train + n_val],
        test=examples[n_train + n_val :],
    )


def alpha_stats(examples: list[LabeledExample], spec: InstrumentSpec) -> list[LevelStats]:
    """Per-horizon label distribution, reported in pips."""
    labels = np.array([e.label for e in examples])
    return summary_stats(to_pips(labels, spec))


_INSTRUMENT_FIELDS = {
    "name": str,
    "tick_size": float,
    "commission_per_lot_per_side": float,
    "lot_size": float,
    "fixed_spread_pips": float,
}


def load_instrument_spec(path) -> InstrumentSpec:
    """Read a `key = value` instrument file; `#` starts a comment line."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"line {line_no}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _INSTRUMENT_FIELDS:
                raise DataFormatError(f"line {line_no}: unknown key {key!r}")
            if key in values:
                raise DataFormatError(f"line {line_no}: duplicate key {key!r}")
            caster = _INSTRUMENT_FIELDS[key]
            try:
                values[key] = caster(value)
            except ValueError:
                raise DataFormatError(
                    f"line {line_no}: {key!r} is not a {caster.__name__}: {value!r}"
                ) from None
    missing = sorted(set(_INSTRUMENT_FIELDS) - set(values))
    if missing:
        raise DataFormatError(f"missing keys: {', '.join(missing)}")
    return InstrumentSpec(**values)


def write_labeled_csv(path, examples: list[LabeledExample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABELED_HEADER)
        for ex in examples:
            writer.writerow(
                [ex.timestamp]
                + [repr(float(v)) for v in ex.features]
                + [repr(float(v)) for v in ex.label]
            )


def read_labeled_csv(path) -> list[LabeledExample]:
    """Read a labeled dataset: header `time,ofi_1..ofi_10,alpha_1..alpha_6`."""
    examples: list[LabeledExample] = []
    last_ts = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("line 1: empty file, expected header") from None
        if header != LABELED_HEADER:
            raise DataFormatError(f"line 1: expected header {','.join(LABELED_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(LABELED_HEADER):
                raise DataFormatError(
                    f"line {line_no}: expected {len(LABELED_HEADER)} columns, got {len(row)}"
                )
            try:
                ts = int(row[0])
                values = [float(cell) for cell in row[1:]]
            except ValueError:
                raise DataFormatError(f"line {line_no}: non-numeric field") from None
            if last_ts is not None and ts <= last_ts:
                raise OrderingError(
                    f"line {line_no}: timestamp {ts} does not increase past {last_ts}"
                )
            last_ts = ts
            examples.append(LabeledExample(ts, np.array(values[:10]), np.array(values[10:])))
    return examples
