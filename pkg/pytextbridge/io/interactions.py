import csv
import io
import math
from typing import List, Dict, Set
import numpy as np
from . import iobase
from .. import utils
from ..graph import GraphUniverse, USER, ITEM, node_key

MANDATORY_COLUMNS = ["user", "item", "timestamp", "domain"]
META_COLUMNS = ["title", "description", "features", "brand", "price", "salesRank"]
OPTIONAL_COLUMNS = ["review"] + META_COLUMNS


class InteractionRecord:
    """One user-item interaction with optional review text and item metadata"""

    def __init__(self, user_key: str, item_key: str, timestamp: int, domain: str, review_text=None,
                 item_meta=None):
        self.user_key = user_key
        self.item_key = item_key
        self.timestamp = timestamp
        self.domain = domain
        self.review_text = review_text
        self.item_meta = dict(item_meta or {})                      # type: Dict[str, str]

    def __eq__(self, other) -> bool:
        return isinstance(other, InteractionRecord) and self.as_row() == other.as_row()

    def __repr__(self) -> str:
        return "InteractionRecord(" + ", ".join([self.domain, self.user_key, self.item_key, str(self.timestamp)]) + ")"

    def as_row(self) -> list:
        """Returns the record as a row of the interaction log"""
        return [self.user_key, self.item_key, str(self.timestamp), self.domain, self.review_text or ""] \
            + [self.item_meta.get(column, "") for column in META_COLUMNS]


class InteractionReader(iobase.IOClient):
    """Reads delimited interaction logs, counting skipped rows"""

    def __init__(self, delimiter="\t", verbose=False):
        """Constructor"""
        super().__init__(verbose)
        self.delimiter = delimiter
        self.skipped = 0

    def read(self, filename: str) -> List[InteractionRecord]:
        """Parses an interaction log into records"""
        try:
            content = utils.read_text(filename)
        except FileNotFoundError as e:
            raise iobase.InputFileError(str(e), code="MISSING_INPUT")
        reader = csv.reader(io.StringIO(content), delimiter=self.delimiter)
        header = next(reader, None)
        if header is None:
            raise iobase.InputFileError("Interaction log '" + filename + "' is empty")
        header = [column.strip() for column in header]
        missing = [column for column in MANDATORY_COLUMNS if column not in header]
        if missing:
            raise iobase.InputFileError("Interaction log '" + filename + "' lacks mandatory column(s) "
                                        + ", ".join(missing))
        positions = {column: header.index(column) for column in MANDATORY_COLUMNS + OPTIONAL_COLUMNS
                     if column in header}

        records = []
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            record = self._parse_row(row, positions, line_number)
            if record is not None:
                records.append(record)
        if self.skipped:
            self.printer.print("Skipped " + str(self.skipped) + " malformed row(s) in '" + filename + "'")
        return records

    def _parse_row(self, row: List[str], positions: Dict[str, int], line_number: int):
        """Converts a row into a record, or counts it as skipped"""
        fields = {column: (row[position].strip() if position < len(row) else "")
                  for column, position in positions.items()}
        if not all(fields[column] for column in MANDATORY_COLUMNS):
            return self._skip(line_number, "missing mandatory field")
        try:
            timestamp = int(fields["timestamp"])
        except ValueError:
            return self._skip(line_number, "unparseable timestamp '" + fields["timestamp"] + "'")
        if timestamp < 0:
            return self._skip(line_number, "negative timestamp")
        meta = {column: fields[column] for column in META_COLUMNS if fields.get(column)}
        return InteractionRecord(fields["user"], fields["item"], timestamp, fields["domain"],
                                 fields.get("review") or None, meta)

    def _skip(self, line_number: int, reason: str) -> None:
        self.skipped += 1
        self.printer.warn("Line " + str(line_number) + ": " + reason)
        return None


def parse_interactions(filename: str, delimiter="\t", verbose=False) -> List[InteractionRecord]:
    """Parses an interaction log (header with at least user, item, timestamp, domain)"""
    return InteractionReader(delimiter, verbose).read(filename)


def write_interactions(filename: str, records: List[InteractionRecord], delimiter="\t") -> None:
    """Writes records as an interaction log with all optional columns"""
    stream = io.StringIO()
    writer = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    writer.writerow(MANDATORY_COLUMNS + OPTIONAL_COLUMNS)
    for record in records:
        writer.writerow(record.as_row())
    utils.atomic_write_text(filename, stream.getvalue())


def build_universe(records: List[InteractionRecord], domain_names=None, target_domain=None) -> GraphUniverse:
    """Registers all users and items of the records; per domain, users (sorted by key) precede items"""
    if domain_names is None:
        domain_names = sorted(set(record.domain for record in records))
        if target_domain is not None:
            domain_names = [name for name in domain_names if name != target_domain] + [target_domain]
    universe = GraphUniverse(list(domain_names), target_domain)
    for domain_name in universe.domain_names:
        users = sorted(set(r.user_key for r in records if r.domain == domain_name))
        items = sorted(set(r.item_key for r in records if r.domain == domain_name))
        for key in users:
            universe.add_node(domain_name, USER, key)
        for key in items:
            universe.add_node(domain_name, ITEM, key)
    universe.freeze()
    return universe


class SplitDataset:
    """Temporal train/valid/test split; every part is an (n, 3) array of (user, item, timestamp) in universe
    indices, ordered by timestamp"""

    PARTS = ("train", "valid", "test")

    def __init__(self, universe: GraphUniverse, train: np.ndarray, valid: np.ndarray, test: np.ndarray,
                 fractions=(0.8, 0.1, 0.1)):
        self.universe = universe
        self.train = np.asarray(train, dtype=np.int64).reshape(-1, 3)
        self.valid = np.asarray(valid, dtype=np.int64).reshape(-1, 3)
        self.test = np.asarray(test, dtype=np.int64).reshape(-1, 3)
        self.fractions = tuple(fractions)
        self._domains = universe.domains()
        for domain in range(len(universe.domain_names)):
            universe.set_domain_edges(domain, self.domain_part("train", domain)[:, :2])

    def part(self, name: str) -> np.ndarray:
        if name not in self.PARTS:
            raise ValueError("Unknown split part '" + name + "'")
        return getattr(self, name)

    def domain_part(self, name: str, domain: int) -> np.ndarray:
        """Rows of a split part belonging to one domain"""
        rows = self.part(name)
        return rows[self._domains[rows[:, 0]] == domain] if rows.size else rows

    def domain_items(self, domain: int) -> np.ndarray:
        """Indices of all items of a domain"""
        return self.universe.domain_nodes(domain, ITEM)

    def positives(self, domain=None, parts=PARTS) -> Dict[int, Set[int]]:
        """Maps every user to the items it interacted with in the given parts"""
        result = {}
        for name in parts:
            rows = self.part(name) if domain is None else self.domain_part(name, domain)
            for user, item in rows[:, :2].tolist():
                result.setdefault(user, set()).add(item)
        return result

    def counts(self) -> Dict[str, int]:
        return {name: int(self.part(name).shape[0]) for name in self.PARTS}

    def with_train(self, train: np.ndarray) -> "SplitDataset":
        """Returns a split sharing nodes, validation and test rows, with different training rows"""
        return SplitDataset(self.universe.copy(), train, self.valid, self.test, self.fractions)

    def subsample_train(self, domain: int, fraction: float, rng: np.random.Generator) -> "SplitDataset":
        """Keeps ceil(fraction * n) uniformly drawn training rows of one domain; other domains are untouched"""
        in_domain = np.flatnonzero(self._domains[self.train[:, 0]] == domain)
        keep_count = int(math.ceil(fraction * in_domain.size))
        kept = np.sort(rng.choice(in_domain, size=keep_count, replace=False)) if keep_count else in_domain[:0]
        mask = np.ones(self.train.shape[0], dtype=bool)
        mask[in_domain] = False
        mask[kept] = True
        return self.with_train(self.train[mask])

    def single_domain(self, domain: int) -> "SplitDataset":
        """The rows of one domain over a universe holding only that domain (as a source domain);
        node indices shift down by the domain's start"""
        name = self.universe.domain_names[domain]
        start, stop = self.universe.domain_range(domain)
        universe = GraphUniverse([name])
        for index in range(start, stop):
            universe.add_node(name, self.universe.node(index).kind, self.universe.key(index)[len(name) + 3:])
        universe.freeze()
        shift = np.array([start, start, 0], dtype=np.int64)
        parts = [self.domain_part(part, domain) - shift for part in self.PARTS]
        return SplitDataset(universe, parts[0], parts[1], parts[2], self.fractions)

    def digest(self) -> str:
        """Hash of the split content"""
        payload = b"".join(self.part(name).astype("<i8").tobytes() for name in self.PARTS)
        return utils.sha256_hex(utils.canonical_json(self.universe.keys()).encode("utf-8") + payload)


def temporal_split(records: List[InteractionRecord], fractions=(0.8, 0.1, 0.1), domain_names=None,
                   target_domain=None, universe=None, verbose=False) -> SplitDataset:
    """Sorts all records jointly by timestamp (stable) and cuts them into train, valid and test parts;
    nodes appearing only in valid or test are kept"""
    printer = utils.VerbosePrinter(verbose)
    if not records:
        raise iobase.InputFileError("Cannot split an empty interaction log", code="EMPTY_INPUT")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise utils.TextBridgeError("Split fractions must be three non-negative numbers summing to 1",
                                    code="CONFIG_ERROR")
    if universe is None:
        universe = build_universe(records, domain_names, target_domain)
    known = set(universe.domain_names)
    ignored = sum(1 for record in records if record.domain not in known)
    if ignored:
        printer.warn("Ignored " + str(ignored) + " record(s) of unconfigured domains")
    records = [record for record in records if record.domain in known]
    if not records:
        raise iobase.InputFileError("No records belong to the configured domains", code="EMPTY_INPUT")

    parts = []
    for part in split_records(records, fractions):
        parts.append(np.array([[universe.lookup(_node_key(r, USER)).index, universe.lookup(_node_key(r, ITEM)).index,
                                r.timestamp] for r in part], dtype=np.int64))
    return SplitDataset(universe, parts[0], parts[1], parts[2], fractions)


def split_records(records: List[InteractionRecord], fractions=(0.8, 0.1, 0.1)) -> List[List[InteractionRecord]]:
    """Cuts the records, stably sorted by timestamp, into train, valid and test lists"""
    ordered = sorted(records, key=lambda record: record.timestamp)
    total = len(ordered)
    n_train = int(math.floor(fractions[0] * total + 0.5))
    n_valid = min(int(math.floor(fractions[1] * total + 0.5)), total - n_train)
    return [ordered[:n_train], ordered[n_train:n_train + n_valid], ordered[n_train + n_valid:]]


def _node_key(record: InteractionRecord, kind: str) -> str:
    """External key of the user or item of a record"""
    return node_key(record.domain, kind, record.user_key if kind == USER else record.item_key)
