"""Lab-event streams, tokens, vocabularies and training sentences.

The text analogy used throughout: a lab code (optionally suffixed with its
result-abnormality code) is a word, one lab order is a sentence, and one
visit is a document. Sentences are shuffled internally because code order
inside a lab order carries no meaning.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime

import numpy as np

EVENT_CSV_HEADER = ["patient_id", "visit_id", "order_id", "timestamp", "loinc", "abnormality"]


class Abnormality(str, enum.Enum):
    """Result flag relative to the reference range. Closed 8-value set."""

    N = "N"
    A = "A"
    AA = "AA"
    L = "L"
    LL = "LL"
    H = "H"
    HH = "HH"
    U = "U"


ABNORMALITY_VALUES = frozenset(a.value for a in Abnormality)


class TokenMode(enum.Enum):
    """Token construction: bare lab code, or code + '_' + abnormality."""

    LoincOnly = "LoincOnly"
    LoincPlusAbnormality = "LoincPlusAbnormality"


class MalformedRecord(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class UnknownAbnormality(MalformedRecord):
    def __init__(self, line: int, value: str):
        super().__init__(line, f"unknown abnormality code {value!r}")
        self.value = value


class EmptyVocabulary(ValueError):
    pass


@dataclass(slots=True, frozen=True)
class LabEvent:
    """One recorded lab test."""

    patient_id: str
    visit_id: str
    order_id: str
    timestamp: datetime
    loinc: str
    abnormality: Abnormality


@dataclass(slots=True)
class Sentence:
    """One lab order as a training sentence: shuffled in-vocabulary token ids."""

    token_ids: np.ndarray
    visit_id: str

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class Vocabulary:
    """Token <-> dense index map with pre-filter occurrence counts.

    Iteration order is fixed: descending count, ties broken lexicographically,
    so serialized artifacts are reproducible.
    """

    tokens: list[str]
    counts: dict[str, int]
    mode: TokenMode
    min_count: int
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index


def make_token(loinc: str, abnormality: Abnormality, mode: TokenMode) -> str:
    """Build the word unit for one event, e.g. 777-3 + N -> '777-3_N'."""
    if not loinc:
        raise ValueError("empty loinc code")
    if mode is TokenMode.LoincOnly:
        return loinc
    return f"{loinc}_{abnormality.value}"


def token_stem(token: str) -> str:
    """Lab code part of a token; the code itself never contains '_'."""
    return token.split("_", 1)[0]


def _parse_timestamp(raw: str, line: int) -> datetime:
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise MalformedRecord(line, f"bad timestamp {raw!r}") from None
    if ts.tzinfo is not None:
        ts = ts.replace(tzinfo=None)
    return ts


def _make_event(fields: dict, line: int) -> LabEvent:
    for name in EVENT_CSV_HEADER:
        if fields.get(name) in (None, ""):
            raise MalformedRecord(line, f"missing field {name!r}")
    abn = str(fields["abnormality"]).strip()
    if abn not in ABNORMALITY_VALUES:
        raise UnknownAbnormality(line, abn)
    loinc = str(fields["loinc"]).strip()
    if "_" in loinc:
        raise MalformedRecord(line, f"loinc code {loinc!r} contains '_'")
    return LabEvent(
        patient_id=str(fields["patient_id"]).strip(),
        visit_id=str(fields["visit_id"]).strip(),
        order_id=str(fields["order_id"]).strip(),
        timestamp=_parse_timestamp(str(fields["timestamp"]), line),
        loinc=loinc,
        abnormality=Abnormality(abn),
    )


def _as_text_stream(source) -> io.TextIOBase:
    if isinstance(source, (str, bytes)) and not hasattr(source, "read"):
        # a filesystem path
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, io.TextIOBase):
        return source
    if hasattr(source, "read"):
        return io.TextIOWrapper(source, encoding="utf-8", newline="")
    raise TypeError(f"cannot read events from {type(source).__name__}")


def parse_events_csv(source) -> list[LabEvent]:
    """Parse the event CSV (header `patient_id,visit_id,order_id,timestamp,loinc,abnormality`)."""
    stream = _as_text_stream(source)
    reader = csv.reader(stream)
    events: list[LabEvent] = []
    header: list[str] | None = None
    for line_no, row in enumerate(reader, start=1):
        if not row:
            continue
        if header is None:
            header = [c.strip() for c in row]
            if header != EVENT_CSV_HEADER:
                raise MalformedRecord(line_no, f"bad header {row!r}")
            continue
        if len(row) != len(EVENT_CSV_HEADER):
            raise MalformedRecord(line_no, f"expected {len(EVENT_CSV_HEADER)} fields, got {len(row)}")
        events.append(_make_event(dict(zip(EVENT_CSV_HEADER, row)), line_no))
    return events


def parse_events_jsonl(source) -> list[LabEvent]:
    """Parse events from JSONL, one object per line, same field names as the CSV."""
    stream = _as_text_stream(source)
    events: list[LabEvent] = []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord(line_no, f"bad json: {e.msg}") from None
        if not isinstance(obj, dict):
            raise MalformedRecord(line_no, "expected a json object")
        events.append(_make_event(obj, line_no))
    return events


def parse_events(source, fmt: str = "csv") -> list[LabEvent]:
    """Parse a lab-event stream in either supported format ('csv' or 'jsonl')."""
    fmt = fmt.lower()
    if fmt == "csv":
        return parse_events_csv(source)
    if fmt == "jsonl":
        return parse_events_jsonl(source)
    raise ValueError(f"unknown event format {fmt!r}")


def write_events_csv(events: list[LabEvent], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(EVENT_CSV_HEADER)
        for e in events:
            ts = e.timestamp
            stamp = ts.date().isoformat() if (ts.hour, ts.minute, ts.second, ts.microsecond) == (0, 0, 0, 0) else ts.isoformat()
            writer.writerow([e.patient_id, e.visit_id, e.order_id, stamp, e.loinc, e.abnormality.value])


def write_events_jsonl(events: list[LabEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in events:
            ts = e.timestamp
            stamp = ts.date().isoformat() if (ts.hour, ts.minute, ts.second, ts.microsecond) == (0, 0, 0, 0) else ts.isoformat()
            f.write(json.dumps({
                "patient_id": e.patient_id,
                "visit_id": e.visit_id,
                "order_id": e.order_id,
                "timestamp": stamp,
                "loinc": e.loinc,
                "abnormality": e.abnormality.value,
            }) + "\n")


def event_token(event: LabEvent, mode: TokenMode) -> str:
    return make_token(event.loinc, event.abnormality, mode)


def build_vocabulary(events: list[LabEvent], mode: TokenMode, min_count: int = 5) -> Vocabulary:
    """Count tokens over the corpus and keep those occurring at least min_count times.

    Counts stored on the result are the pre-filter corpus frequencies.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(event_token(e, mode) for e in events)
    kept = {t: c for t, c in counts.items() if c >= min_count}
    if not kept:
        raise EmptyVocabulary(f"no token occurs >= {min_count} times (corpus has {len(counts)} distinct tokens)")
    tokens = sorted(kept, key=lambda t: (-kept[t], t))
    return Vocabulary(tokens=tokens, counts=kept, mode=mode, min_count=min_count)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """Write the vocabulary file: a mode/min_count header line, then `<token> <count>` rows."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#mode={vocab.mode.value} min_count={vocab.min_count}\n")
        for t in vocab.tokens:
            f.write(f"{t} {vocab.counts[t]}\n")


def load_vocabulary(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("#mode="):
            raise ValueError(f"bad vocabulary header: {header!r}")
        mode_part, mc_part = header[1:].split(" ")
        mode = TokenMode(mode_part.split("=", 1)[1])
        min_count = int(mc_part.split("=", 1)[1])
        tokens: list[str] = []
        counts: dict[str, int] = {}
        for line in f:
            if not line.strip():
                continue
            token, count = line.split()
            tokens.append(token)
            counts[token] = int(count)
    return Vocabulary(tokens=tokens, counts=counts, mode=mode, min_count=min_count)


def build_sentences(
    events: list[LabEvent],
    vocab: Vocabulary,
    seed: int,
    dedup: bool = False,
    counters: Counter | None = None,
) -> list[Sentence]:
    """Group events into one shuffled sentence per (visit, order).

    Sentences of the same visit are emitted consecutively, orders ascending by
    their first timestamp; visits ascend by their first timestamp as well, so
    the output is a pure function of the event multiset and the seed.
    Out-of-vocabulary tokens are dropped (counted under 'oov_dropped' when a
    counters object is passed); duplicate tokens inside one order are kept
    unless dedup is set.
    """
    groups: dict[tuple[str, str], list[LabEvent]] = {}
    for e in events:
        groups.setdefault((e.visit_id, e.order_id), []).append(e)

    def group_key(item):
        (visit_id, order_id), evts = item
        t0 = min(e.timestamp for e in evts)
        return (visit_id, t0, order_id)

    visit_start: dict[str, tuple[datetime, str]] = {}
    for (visit_id, _), evts in groups.items():
        t0 = min(e.timestamp for e in evts)
        cur = visit_start.get(visit_id)
        if cur is None or (t0, visit_id) < cur:
            visit_start[visit_id] = (t0, visit_id)

    ordered = sorted(groups.items(), key=lambda item: (visit_start[item[0][0]], group_key(item)[1], item[0][1]))

    rng = np.random.default_rng(seed)
    sentences: list[Sentence] = []
    for (visit_id, _order_id), evts in ordered:
        ids: list[int] = []
        seen: set[int] = set()
        for e in evts:
            tok = event_token(e, vocab.mode)
            idx = vocab.index.get(tok)
            if idx is None:
                if counters is not None:
                    counters["oov_dropped"] += 1
                continue
            if dedup:
                if idx in seen:
                    if counters is not None:
                        counters["dup_dropped"] += 1
                    continue
                seen.add(idx)
            ids.append(idx)
        if not ids:
            if counters is not None:
                counters["empty_orders_skipped"] += 1
            continue
        arr = np.asarray(ids, dtype=np.int32)
        sentences.append(Sentence(token_ids=rng.permutation(arr), visit_id=visit_id))
    return sentences


def merge_sentences_by_visit(sentences: list[Sentence]) -> list[Sentence]:
    """Concatenate consecutive sentences of the same visit into one.

    Used when context windows are allowed to span adjacent orders of a visit;
    windows never cross visit boundaries either way.
    """
    merged: list[Sentence] = []
    for s in sentences:
        if merged and merged[-1].visit_id == s.visit_id:
            merged[-1] = Sentence(
                token_ids=np.concatenate([merged[-1].token_ids, s.token_ids]),
                visit_id=s.visit_id,
            )
        else:
            merged.append(Sentence(token_ids=s.token_ids.copy(), visit_id=s.visit_id))
    return merged


def save_sentences(sentences: list[Sentence], vocab: Vocabulary, path) -> None:
    """Write sentences as `<visit_id>\\t<token> <token> ...`, one line each."""
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            toks = " ".join(vocab.tokens[i] for i in s.token_ids)
            f.write(f"{s.visit_id}\t{toks}\n")


def load_sentences(path, vocab: Vocabulary) -> list[Sentence]:
    sentences: list[Sentence] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                visit_id, toks = line.split("\t", 1)
            except ValueError:
                raise MalformedRecord(line_no, "expected <visit_id>\\t<tokens>") from None
            ids = []
            for t in toks.split(" "):
                idx = vocab.index.get(t)
                if idx is None:
                    raise MalformedRecord(line_no, f"token {t!r} not in vocabulary")
                ids.append(idx)
            sentences.append(Sentence(token_ids=np.asarray(ids, dtype=np.int32), visit_id=visit_id))
    return sentences


def corpus_fingerprint(vocab: Vocabulary, sentences: list[Sentence]) -> str:
    """Stable digest of the training corpus (tokens + sentence id streams)."""
    import hashlib

    h = hashlib.sha256()
    for t in vocab.tokens:
        h.update(t.encode("utf-8"))
        h.update(b"\x00")
    for s in sentences:
        h.update(s.visit_id.encode("utf-8"))
        h.update(np.ascontiguousarray(s.token_ids, dtype=np.int32).tobytes())
    return h.hexdigest()
