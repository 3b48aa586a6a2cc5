"""Log schema, CSV I/O, global-timestamp splitting and a synthetic shift generator."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError


@dataclass(frozen=True)
class DatasetSchema:
    field_specs: tuple[tuple[str, int], ...]
    has_history: bool = False
    max_history_len: int = 0

    def __post_init__(self):
        specs = tuple((str(n), int(v)) for n, v in self.field_specs)
        object.__setattr__(self, "field_specs", specs)
        if len(specs) < 2:
            raise ConfigError("schema needs at least 2 fields")
        names = [n for n, _ in specs]
        if len(set(names)) != len(names):
            raise ConfigError("field names must be unique")
        if any(v < 1 for _, v in specs):
            raise ConfigError("every vocab_size must be >= 1")
        if self.max_history_len < 0:
            raise ConfigError("max_history_len must be non-negative")

    @property
    def F(self) -> int:
        return len(self.field_specs)

    @property
    def field_names(self) -> list[str]:
        return [n for n, _ in self.field_specs]

    @property
    def vocab_sizes(self) -> list[int]:
        return [v for _, v in self.field_specs]

    def header(self) -> list[str]:
        cols = self.field_names + ["label", "timestamp"]
        if self.has_history:
            cols.append("history")
        return cols

    def to_dict(self) -> dict:
        return {
            "fields": [{"name": n, "vocab_size": v} for n, v in self.field_specs],
            "has_history": self.has_history,
            "max_history_len": self.max_history_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        try:
            specs = tuple((f["name"], f["vocab_size"]) for f in d["fields"])
            return cls(specs, bool(d.get("has_history", False)), int(d.get("max_history_len", 0)))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed schema: {e}") from e

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_schema(schema: DatasetSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


def load_schema(path: str | Path) -> DatasetSchema:
    try:
        return DatasetSchema.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read schema {path}: {e}") from e


@dataclass(frozen=True)
class InstanceRecord:
    field_values: tuple[int, ...]
    label: int
    timestamp: int
    history: tuple[int, ...] = ()


@dataclass(frozen=True)
class SplitSpec:
    T0: int
    T1: int
    valid_fraction: float = 0.5
    split_seed: int = 0

    def __post_init__(self):
        if not self.T0 < self.T1:
            raise ConfigError(f"split needs T0 < T1, got T0={self.T0}, T1={self.T1}")
        if not 0.0 < self.valid_fraction < 1.0:
            raise ConfigError("valid_fraction must lie in (0, 1)")


# ---------------------------------------------------------------------------
# CSV I/O


def write_dataset(records: Iterable[InstanceRecord], schema: DatasetSchema, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.header())
        for r in records:
            row = [*r.field_values, r.label, r.timestamp]
            if schema.has_history:
                row.append("|".join(str(h) for h in r.history))
            w.writerow(row)


def _parse_int(tok: str, row: int, what: str) -> int:
    if not tok.isdigit():
        raise ParseError(row, f"{what} is not a non-negative base-10 integer: {tok!r}")
    return int(tok)


def load_dataset(path: str | Path, schema: DatasetSchema) -> list[InstanceRecord]:
    """Read a pre-encoded CSV log. Row numbers in errors are 1-based file lines."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    header = schema.header()
    vocab = schema.vocab_sizes
    F = schema.F
    out: list[InstanceRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file, header expected") from None
        if first != header:
            raise ParseError(1, f"header {first} does not match schema {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(lineno, f"expected {len(header)} columns, got {len(row)}")
            vals = []
            for i in range(F):
                v = _parse_int(row[i], lineno, schema.field_names[i])
                if v >= vocab[i]:
                    raise ParseError(lineno, f"id {v} >= vocab_size {vocab[i]} in field {schema.field_names[i]}")
                vals.append(v)
            label = _parse_int(row[F], lineno, "label")
            if label not in (0, 1):
                raise ParseError(lineno, f"label must be 0 or 1, got {label}")
            ts = _parse_int(row[F + 1], lineno, "timestamp")
            hist: tuple[int, ...] = ()
            if schema.has_history and row[F + 2]:
                hist = tuple(_parse_int(h, lineno, "history id") for h in row[F + 2].split("|"))
                if len(hist) > schema.max_history_len:
                    raise ParseError(lineno, f"history longer than {schema.max_history_len}")
            out.append(InstanceRecord(tuple(vals), label, ts, hist))
    return out


# ---------------------------------------------------------------------------
# Array view used by the models


@dataclass
class EncodedData:
    X: np.ndarray  # (N, F) int64
    y: np.ndarray  # (N,) float32
    t: np.ndarray  # (N,) int64
    hist: np.ndarray | None = None  # (N, L) int64, padded with -1

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "EncodedData":
        return EncodedData(
            self.X[idx], self.y[idx], self.t[idx], None if self.hist is None else self.hist[idx]
        )


def encode_records(records: Sequence[InstanceRecord], schema: DatasetSchema) -> EncodedData:
    n = len(records)
    X = np.array([r.field_values for r in records], dtype=np.int64).reshape(n, schema.F)
    y = np.array([r.label for r in records], dtype=np.float32)
    t = np.array([r.timestamp for r in records], dtype=np.int64)
    hist = None
    if schema.has_history:
        L = max(schema.max_history_len, 1)
        hist = np.full((n, L), -1, dtype=np.int64)
        for i, r in enumerate(records):
            if r.history:
                hist[i, : len(r.history)] = r.history
    return EncodedData(X, y, t, hist)


# ---------------------------------------------------------------------------
# Splitting


def _hash_unit(seed: int, index: int) -> float:
    h = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") / 2.0**64


def temporal_split(records: Sequence[InstanceRecord], spec: SplitSpec):
    """Partition by global timestamp into (D_old, D_train, D_valid, D_test).

    Logs at or after T1 go to valid or test by a seeded hash of their index
    in ``records``.
    """
    if len(records) == 0:
        raise DataError("cannot split an empty record set")
    old, train, valid, test = [], [], [], []
    for i, r in enumerate(records):
        if r.timestamp < spec.T0:
            old.append(r)
        elif r.timestamp < spec.T1:
            train.append(r)
        elif _hash_unit(spec.split_seed, i) < spec.valid_fraction:
            valid.append(r)
        else:
            test.append(r)
    for name, part in (("D_old", old), ("D_train", train), ("D_valid", valid), ("D_test", test)):
        if not part:
            raise ConfigError(f"{name} empty")
    return old, train, valid, test


# ---------------------------------------------------------------------------
# Synthetic shift data


@dataclass(frozen=True)
class Rule:
    """A conjunction of (field, value) conditions that sets a label probability."""

    conditions: tuple[tuple[int, int], ...]
    prob: float

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(sorted((int(f), int(v)) for f, v in self.conditions)))


@dataclass(frozen=True)
class SyntheticConfig:
    vocab_sizes: tuple[int, ...]
    n_records: int
    T0: int
    T1: int
    invariant_rules: tuple[Rule, ...] = ()
    spurious_rules: tuple[Rule, ...] = ()
    noise_rate: float = 0.0
    seed: int = 0
    horizon: int | None = None
    base_rate: float = 0.5
    has_history: bool = False
    max_history_len: int = 0
    user_field: int = 0
    item_field: int = 1

    @property
    def F(self) -> int:
        return len(self.vocab_sizes)

    def schema(self) -> DatasetSchema:
        return DatasetSchema(
            tuple((f"field_{i}", v) for i, v in enumerate(self.vocab_sizes)),
            self.has_history,
            self.max_history_len,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab_sizes"] = list(self.vocab_sizes)
        for key in ("invariant_rules", "spurious_rules"):
            d[key] = [{"conditions": [list(c) for c in r.conditions], "prob": r.prob} for r in getattr(self, key)]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        try:
            for key in ("invariant_rules", "spurious_rules"):
                d[key] = tuple(
                    Rule(tuple(tuple(c) for c in r["conditions"]), float(r["prob"])) for r in d.get(key, ())
                )
            d["vocab_sizes"] = tuple(int(v) for v in d["vocab_sizes"])
            return cls(**d)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed synthetic config: {e}") from e

    def validate(self) -> None:
        if self.F < 2 or any(v < 1 for v in self.vocab_sizes):
            raise ConfigError("synthetic data needs >= 2 fields with positive vocab sizes")
        if self.n_records < 1:
            raise ConfigError("n_records must be positive")
        if not self.T0 < self.T1:
            raise ConfigError("T0 must be < T1")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError("noise_rate must lie in [0, 1]")
        if not 0.0 < self.base_rate < 1.0:
            raise ConfigError("base_rate must lie in (0, 1)")
        if self.has_history:
            for f in (self.user_field, self.item_field):
                if not 0 <= f < self.F:
                    raise ConfigError(f"history field index {f} out of range")
        seen: dict[tuple, float] = {}
        for rule in (*self.invariant_rules, *self.spurious_rules):
            if not rule.conditions:
                raise ConfigError("a rule needs at least one condition")
            if not 0.0 <= rule.prob <= 1.0:
                raise ConfigError(f"rule probability {rule.prob} outside [0, 1]")
            fields = [f for f, _ in rule.conditions]
            if len(set(fields)) != len(fields):
                raise ConfigError(f"rule {rule.conditions} repeats a field")
            for f, v in rule.conditions:
                if not (0 <= f < self.F and 0 <= v < self.vocab_sizes[f]):
                    raise ConfigError(f"rule condition ({f}, {v}) is not a valid (field, value) pair")
            if rule.conditions in seen and seen[rule.conditions] != rule.prob:
                raise ConfigError(f"contradictory rules on conjunction {rule.conditions}")
            seen[rule.conditions] = rule.prob


def _logit(p: float) -> float:
    p = min(max(p, 1e-6), 1.0 - 1e-6)
    return math.log(p) - math.log1p(-p)


def _rule_hits(X: np.ndarray, rule: Rule) -> np.ndarray:
    hit = np.ones(len(X), dtype=bool)
    for f, v in rule.conditions:
        hit &= X[:, f] == v
    return hit


def generate_synthetic(cfg: SyntheticConfig) -> list[InstanceRecord]:
    """Sample a time-ordered log whose spurious rules flip sign at T1.

    Matching rules shift the label log-odds additively away from ``base_rate``,
    so a record matching a single rule gets exactly that rule's probability.
    Labels are then flipped with probability ``noise_rate``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_records
    horizon = cfg.horizon if cfg.horizon is not None else max(cfg.T1 + (cfg.T1 - cfg.T0), 2 * cfg.T1)
    ts = np.sort(rng.integers(0, horizon, size=n))
    X = np.stack([rng.integers(0, v, size=n) for v in cfg.vocab_sizes], axis=1)

    base = _logit(cfg.base_rate)
    logits = np.full(n, base)
    for rule in cfg.invariant_rules:
        logits += _rule_hits(X, rule) * (_logit(rule.prob) - base)
    after = ts >= cfg.T1
    sign = np.where(after, -1.0, 1.0)
    for rule in cfg.spurious_rules:
        logits += _rule_hits(X, rule) * sign * (_logit(rule.prob) - base)

    p = 1.0 / (1.0 + np.exp(-logits))
    y = (rng.random(n) < p).astype(np.int64)
    flip = rng.random(n) < cfg.noise_rate
    y = np.where(flip, 1 - y, y)

    histories: list[tuple[int, ...]] = [()] * n
    if cfg.has_history:
        recent: dict[int, list[int]] = {}
        L = cfg.max_history_len
        for i in range(n):
            u = int(X[i, cfg.user_field])
            past = recent.setdefault(u, [])
            histories[i] = tuple(past[-L:]) if L > 0 else ()
            if y[i] == 1:
                past.append(int(X[i, cfg.item_field]))
    return [
        InstanceRecord(tuple(int(v) for v in X[i]), int(y[i]), int(ts[i]), histories[i]) for i in range(n)
    ]


def shift_benchmark(
    seed: int = 0,
    n_records: int = 50_000,
    n_fields: int = 8,
    noise_rate: float = 0.1,
    has_history: bool = False,
    n_pair_rules: int = 32,
    n_triple_rules: int = 0,
    n_spurious: int = 12,
    shift_time: int = 60_000,
    horizon: int = 100_000,
) -> SyntheticConfig:
    """Reference shift benchmark: planted feature crosses plus decoys that flip at ``shift_time``.

    Field cardinalities are small enough that every planted cross is supported
    by hundreds of old-log rows, and there are no plain-feature main effects,
    so the label lives in the crosses. The decoys are as strong as the stable
    crosses, which makes stale logs actively misleading after the shift.
    """
    rng = np.random.default_rng(10_000 + seed)
    vocab = [int(rng.integers(6, 11)) for _ in range(n_fields)]
    seen: set[tuple] = set()

    def draw(order: int, lo: float, hi: float) -> Rule:
        while True:
            fields = sorted(rng.choice(n_fields, size=order, replace=False).tolist())
            conds = tuple((f, int(rng.integers(0, vocab[f]))) for f in fields)
            if conds not in seen:
                seen.add(conds)
                p = float(rng.uniform(lo, hi))
                return Rule(conds, p if rng.random() < 0.5 else 1.0 - p)

    inv = [draw(2, 0.8, 0.95) for _ in range(n_pair_rules)] + [draw(3, 0.85, 0.97) for _ in range(n_triple_rules)]
    spur = [draw(2, 0.8, 0.9) for _ in range(n_spurious)]
    return SyntheticConfig(
        vocab_sizes=tuple(vocab),
        n_records=n_records,
        T0=shift_time - 20_000,
        T1=shift_time,
        invariant_rules=tuple(inv),
        spurious_rules=tuple(spur),
        noise_rate=noise_rate,
        seed=seed,
        horizon=horizon,
        base_rate=0.3,
        has_history=has_history,
        max_history_len=10 if has_history else 0,
    )
