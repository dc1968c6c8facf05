"""Click-log ingestion, filtering, splitting and prefix augmentation.

Raw logs are read as (session_key, item_key[, timestamp]) records, grouped into
sessions, filtered to a fixed point (rare items and short sessions), split into
train/valid/test and expanded into (prefix -> next item) examples.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

UNKNOWN_KEY = "<unk>"
UNKNOWN_ID = 0

SPLIT_POLICIES = ("last_fraction", "last_days", "provided_split")


class CorpusError(ValueError):
    """Raised for malformed or empty corpora and bad preprocessing settings."""


class ParseError(CorpusError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class EmptyCorpusError(CorpusError):
    pass


@dataclass(frozen=True)
class RawEvent:
    session_key: str
    item_key: str
    timestamp: int | None = None


@dataclass
class RawSession:
    key: str
    items: list[str]
    timestamps: list[int] | None = None

    @property
    def start(self):
        return self.timestamps[0] if self.timestamps else None


@dataclass
class Session:
    id: int
    items: list[int]
    target: int | None = None

    def __len__(self):
        return len(self.items)


@dataclass
class Vocabulary:
    """Item-key <-> id bijection. Id 0 is reserved for unknown items."""

    keys: list[str]
    counts: list[int]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.keys or self.keys[0] != UNKNOWN_KEY:
            raise CorpusError("vocabulary must reserve id 0 for the unknown item")
        self._index = {k: i for i, k in enumerate(self.keys)}
        if len(self._index) != len(self.keys):
            raise CorpusError("duplicate item keys in vocabulary")

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]):
        # most frequent first, key as tie-break: stable across runs
        ordered = sorted(counts, key=lambda k: (-counts[k], k))
        return cls([UNKNOWN_KEY] + ordered, [0] + [counts[k] for k in ordered])

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return key in self._index

    def id(self, key: str) -> int:
        return self._index.get(key, UNKNOWN_ID)

    def key(self, item_id: int) -> str:
        return self.keys[item_id]

    def encode(self, keys: Iterable[str]) -> list[int]:
        return [self.id(k) for k in keys]


@dataclass
class DatasetSplit:
    train: list[Session]
    valid: list[Session]
    test: list[Session]
    vocabulary: Vocabulary
    stats: dict[str, float] = field(default_factory=dict)

    @property
    def num_items(self):
        return len(self.vocabulary)


def _parse_timestamp(raw, path, line_no):
    try:
        return int(float(raw))
    except ValueError:
        raise ParseError(path, line_no, f"bad timestamp {raw!r}") from None


_HEADER_NAMES = {"session_key", "session_id", "sessionid", "session"}


def _looks_like_header(row):
    if row[0].lower() in _HEADER_NAMES:
        return True
    if len(row) > 2 and row[2]:
        try:
            float(row[2])
        except ValueError:
            return True
    return False


def load_events(path, format: str = "csv", has_header: bool | None = None) -> list[RawEvent]:
    """Read click records and return them ordered within each session.

    Events are grouped by session key (first-appearance order of keys) and
    sorted by timestamp when every record carries one, else kept in input
    order. A csv/tsv header is detected when the first row names a session
    column or has a non-numeric timestamp column.
    """
    path = Path(path)
    if format not in ("csv", "tsv", "jsonl"):
        raise CorpusError(f"unknown event format {format!r}")
    if not path.exists():
        raise FileNotFoundError(path)

    events: list[RawEvent] = []
    with path.open(newline="", encoding="utf-8") as fh:
        if format == "jsonl":
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(path, line_no, str(exc)) from None
                if not isinstance(rec, dict):
                    raise ParseError(path, line_no, "record is not an object")
                sk, ik = rec.get("session_key"), rec.get("item_key")
                if sk in (None, "") or ik in (None, ""):
                    raise ParseError(path, line_no, "missing session_key or item_key")
                ts = rec.get("timestamp")
                ts = None if ts is None else _parse_timestamp(ts, path, line_no)
                events.append(RawEvent(str(sk), str(ik), ts))
        else:
            reader = csv.reader(fh, delimiter="," if format == "csv" else "\t")
            for line_no, row in enumerate(reader, 1):
                if not row or all(not c.strip() for c in row):
                    continue
                row = [c.strip() for c in row]
                if line_no == 1 and has_header is not False:
                    if has_header or _looks_like_header(row):
                        continue
                if len(row) < 2 or not row[0] or not row[1]:
                    raise ParseError(path, line_no, "expected session_key and item_key columns")
                ts = _parse_timestamp(row[2], path, line_no) if len(row) > 2 and row[2] else None
                events.append(RawEvent(row[0], row[1], ts))

    if not events:
        raise EmptyCorpusError(f"{path}: no events")
    return _order_events(events)


def _order_events(events: Sequence[RawEvent]) -> list[RawEvent]:
    groups: dict[str, list[tuple[int, RawEvent]]] = {}
    for pos, ev in enumerate(events):
        groups.setdefault(ev.session_key, []).append((pos, ev))
    timed = all(ev.timestamp is not None for ev in events)
    out = []
    for evs in groups.values():
        if timed:
            evs.sort(key=lambda pe: (pe[1].timestamp, pe[0]))
        out.extend(ev for _, ev in evs)
    return out


def sessionize(events: Sequence[RawEvent], gap_seconds: int | None = None) -> list[RawSession]:
    """Group ordered events into sessions, splitting on long idle gaps."""
    if gap_seconds is not None and gap_seconds <= 0:
        raise CorpusError("gap_seconds must be positive")
    sessions: list[RawSession] = []
    current: dict[str, RawSession] = {}
    counter: Counter = Counter()
    for ev in events:
        if gap_seconds is not None and ev.timestamp is None:
            raise CorpusError("interval splitting requires timestamps on every event")
        sess = current.get(ev.session_key)
        if sess is not None and gap_seconds is not None and ev.timestamp - sess.timestamps[-1] > gap_seconds:
            sess = None
        if sess is None:
            n = counter[ev.session_key]
            counter[ev.session_key] += 1
            key = ev.session_key if gap_seconds is None else f"{ev.session_key}#{n}"
            sess = RawSession(key, [], [] if ev.timestamp is not None else None)
            current[ev.session_key] = sess
            sessions.append(sess)
        sess.items.append(ev.item_key)
        if sess.timestamps is not None:
            if ev.timestamp is None:
                sess.timestamps = None
            else:
                sess.timestamps.append(ev.timestamp)
    return sessions


def filter_sessions(sessions: Sequence[RawSession], min_session_len: int = 2,
                    min_item_count: int = 5) -> list[RawSession]:
    """Drop rare items then short sessions, repeated until nothing changes."""
    current = list(sessions)
    while True:
        counts = Counter(item for s in current for item in s.items)
        changed = False
        kept = []
        for s in current:
            keep = [i for i, item in enumerate(s.items) if counts[item] >= min_item_count]
            if len(keep) != len(s.items):
                changed = True
                s = RawSession(s.key, [s.items[i] for i in keep],
                               None if s.timestamps is None else [s.timestamps[i] for i in keep])
            if len(s.items) >= min_session_len:
                kept.append(s)
            else:
                changed = True
        current = kept
        if not changed:
            return current


def split_sessions(sessions: Sequence[RawSession], policy: str = "last_fraction",
                   test_fraction: float = 0.2, test_days: float = 7,
                   test_keys: Iterable[str] | None = None):
    """Temporal train/test split. Returns (train, test) lists of RawSession."""
    if policy not in SPLIT_POLICIES:
        raise CorpusError(f"unknown split policy {policy!r}")
    if policy == "provided_split":
        if test_keys is None:
            raise CorpusError("provided_split needs the set of test session keys")
        test_keys = set(test_keys)
        return ([s for s in sessions if s.key not in test_keys],
                [s for s in sessions if s.key in test_keys])
    timed = all(s.timestamps for s in sessions)
    if policy == "last_days":
        if not timed:
            raise CorpusError("last_days split requires timestamps")
        cutoff = max(s.timestamps[-1] for s in sessions) - test_days * 86400
        return ([s for s in sessions if s.start < cutoff],
                [s for s in sessions if s.start >= cutoff])
    order = sorted(range(len(sessions)), key=lambda i: (sessions[i].start, i)) if timed \
        else list(range(len(sessions)))
    n_test = int(round(len(sessions) * test_fraction))
    n_train = len(sessions) - n_test
    return [sessions[i] for i in order[:n_train]], [sessions[i] for i in order[n_train:]]


def preprocess(sessions: Sequence[RawSession], min_session_len: int = 2, min_item_count: int = 5,
               split_policy: str = "last_fraction", test_fraction: float = 0.2,
               test_days: float = 7, test_keys: Iterable[str] | None = None,
               valid_fraction: float = 0.1, seed: int = 0) -> DatasetSplit:
    """Filter, split and index raw sessions.

    The returned sessions are whole (un-augmented) sequences with no target;
    pass the result to :func:`augment` to get training examples. Validation
    sessions are a seeded random subset of the training portion.
    """
    kept = filter_sessions(sessions, min_session_len, min_item_count)
    if not kept:
        raise EmptyCorpusError("no sessions survive filtering")
    train_raw, test_raw = split_sessions(kept, split_policy, test_fraction, test_days, test_keys)
    if not train_raw:
        raise EmptyCorpusError("training portion is empty after splitting")

    vocab = Vocabulary.from_counts(Counter(item for s in kept for item in s.items))
    rng = random.Random(seed)
    idx = list(range(len(train_raw)))
    rng.shuffle(idx)
    n_valid = int(round(len(train_raw) * valid_fraction))
    if n_valid >= len(train_raw):
        n_valid = len(train_raw) - 1
    valid_idx = set(idx[:n_valid])

    def to_session(sid, raw):
        return Session(sid, vocab.encode(raw.items))

    train, valid, test = [], [], []
    sid = 0
    for i, raw in enumerate(train_raw):
        (valid if i in valid_idx else train).append(to_session(sid, raw))
        sid += 1
    for raw in test_raw:
        test.append(to_session(sid, raw))
        sid += 1

    split = DatasetSplit(train, valid, test, vocab)
    split.stats = compute_stats(split)
    return split


def augment(split: DatasetSplit) -> DatasetSplit:
    """Expand every whole session into its (prefix -> next item) examples."""
    def expand(sessions):
        out = []
        for s in sessions:
            if s.target is not None:
                out.append(s)
                continue
            for j in range(1, len(s.items)):
                out.append(Session(s.id, s.items[:j], s.items[j]))
        return out

    aug = DatasetSplit(expand(split.train), expand(split.valid), expand(split.test), split.vocabulary)
    aug.stats = dict(split.stats)
    aug.stats.update(compute_stats(aug))
    return aug


def encode_sessions(raw: Sequence[RawSession], vocab: Vocabulary):
    """Map raw sessions onto an existing vocabulary for inference.

    Unknown items become id 0. Sessions with no known item are dropped and
    counted; returns (sessions, n_dropped).
    """
    out, dropped = [], 0
    for sid, s in enumerate(raw):
        ids = vocab.encode(s.items)
        if all(i == UNKNOWN_ID for i in ids):
            dropped += 1
            continue
        out.append(Session(sid, ids))
    if dropped:
        logger.info("dropped %d sessions made only of unknown items", dropped)
    return out, dropped


def compute_stats(split: DatasetSplit) -> dict[str, float]:
    """Table-1 style statistics, recomputable from the split contents."""
    def length(s):
        return len(s.items) + (1 if s.target is not None else 0)

    everything = split.train + split.valid + split.test
    augmented = any(s.target is not None for s in everything)
    stats: dict[str, float] = {"num_items": len(split.vocabulary) - 1}
    if augmented:
        stats.update(
            num_train_examples=len(split.train),
            num_valid_examples=len(split.valid),
            num_test_examples=len(split.test),
            num_length_le5=sum(1 for s in everything if len(s.items) <= 5),
            num_length_gt5=sum(1 for s in everything if len(s.items) > 5),
        )
    else:
        lengths = [length(s) for s in everything]
        stats.update(
            num_clicks=sum(lengths),
            num_sessions=len(everything),
            num_train_sessions=len(split.train),
            num_valid_sessions=len(split.valid),
            num_test_sessions=len(split.test),
            average_length=round(sum(lengths) / len(lengths), 4) if lengths else 0.0,
        )
    return stats


def generate_synthetic(num_items: int = 500, num_sessions: int = 1000,
                       length_distribution: float | Mapping[int, float] = 4.8,
                       intent_block_size: int = 3, seed: int = 0,
                       num_templates: int | None = None, zipf_exponent: float = 0.8,
                       min_item_count: int = 1, **preprocess_kwargs) -> DatasetSplit:
    """Deterministic click corpus with planted multi-item intents.

    A pool of intent templates (each ``intent_block_size`` distinct items
    drawn by Zipf popularity) is sampled once; every session concatenates
    whole templates chosen uniformly at random and is truncated to a length
    drawn from ``length_distribution`` (a mean for a shifted Poisson with
    minimum 2, or an explicit {length: weight} mapping). With block size 1
    the items of a session are i.i.d. draws from the popularity law.

    The default template count (ten per item, divided by the block size)
    makes every item occur in several templates, so the last item alone is
    ambiguous while the last few items identify the intent.
    """
    if min(num_items, num_sessions, intent_block_size) < 1:
        raise CorpusError("synthetic corpus parameters must be positive")
    if intent_block_size > num_items:
        raise CorpusError("intent_block_size cannot exceed num_items")
    rng = random.Random(seed)
    weights = [1.0 / (r + 1) ** zipf_exponent for r in range(num_items)]
    items = list(range(num_items))

    if intent_block_size == 1:
        def next_block():
            return rng.choices(items, weights)
    else:
        n_templates = num_templates or max(1, 10 * num_items // intent_block_size)
        templates = []
        for _ in range(n_templates):
            block: list[int] = []
            while len(block) < intent_block_size:
                it = rng.choices(items, weights)[0]
                if it not in block:
                    block.append(it)
            templates.append(block)

        def next_block():
            return rng.choice(templates)

    if isinstance(length_distribution, Mapping):
        lens, lw = zip(*sorted(length_distribution.items()))

        def draw_length():
            return rng.choices(lens, lw)[0]
    else:
        lam = max(float(length_distribution) - 2.0, 0.0)

        def draw_length():
            # Knuth's method; lam is small
            limit, k, p = math.exp(-lam), 0, rng.random()
            while p > limit:
                k += 1
                p *= rng.random()
            return 2 + k

    raw = []
    for n in range(num_sessions):
        length = draw_length()
        seq: list[int] = []
        while len(seq) < length:
            seq.extend(next_block())
        seq = seq[:length]
        raw.append(RawSession(f"s{n}", [f"i{i}" for i in seq], list(range(n * 100, n * 100 + length))))

    kwargs = dict(min_session_len=2, min_item_count=min_item_count, split_policy="last_fraction", seed=seed)
    kwargs.update(preprocess_kwargs)
    split = preprocess(raw, **kwargs)
    split.stats["intent_block_size"] = intent_block_size
    return split


# -- processed-dataset directory ------------------------------------------------

def _write_examples(path: Path, sessions: Sequence[Session]):
    with path.open("w", encoding="utf-8") as fh:
        for s in sessions:
            target = "" if s.target is None else str(s.target)
            fh.write(" ".join(map(str, s.items)) + "\t" + target + "\n")


def _read_examples(path: Path, num_items: int) -> list[Session]:
    out = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            prefix, _, target = line.partition("\t")
            try:
                items = [int(x) for x in prefix.split()]
                tgt = int(target) if target.strip() else None
            except ValueError:
                raise ParseError(path, line_no, "expected space-separated ids, tab, target id") from None
            if not items or any(not 0 <= i < num_items for i in items) or (
                    tgt is not None and not 0 <= tgt < num_items):
                raise ParseError(path, line_no, "item id out of range")
            out.append(Session(line_no - 1, items, tgt))
    return out


def write_stats(path, stats: Mapping[str, float]):
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, v in stats.items():
            fh.write(f"{k}={v}\n")


def read_stats(path) -> dict[str, float]:
    stats = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            stats[k.strip()] = float(v) if "." in v or "e" in v else int(v)
    return stats


def save_dataset(split: DatasetSplit, out_dir) -> Path:
    """Write vocabulary.tsv, {train,valid,test}.txt and stats.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "vocabulary.tsv").open("w", encoding="utf-8") as fh:
        for i, (k, c) in enumerate(zip(split.vocabulary.keys, split.vocabulary.counts)):
            fh.write(f"{k}\t{i}\t{c}\n")
    for name in ("train", "valid", "test"):
        _write_examples(out / f"{name}.txt", getattr(split, name))
    write_stats(out / "stats.txt", split.stats)
    return out


def load_dataset(data_dir) -> DatasetSplit:
    d = Path(data_dir)
    if not (d / "vocabulary.tsv").exists():
        raise FileNotFoundError(d / "vocabulary.tsv")
    keys, counts = [], []
    with (d / "vocabulary.tsv").open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or int(parts[1]) != line_no - 1:
                raise ParseError(d / "vocabulary.tsv", line_no, "expected item_key, dense id, count")
            keys.append(parts[0])
            counts.append(int(parts[2]))
    vocab = Vocabulary(keys, counts)
    parts = {name: _read_examples(d / f"{name}.txt", len(vocab)) if (d / f"{name}.txt").exists() else []
             for name in ("train", "valid", "test")}
    stats = read_stats(d / "stats.txt") if (d / "stats.txt").exists() else {}
    return DatasetSplit(parts["train"], parts["valid"], parts["test"], vocab, stats)
