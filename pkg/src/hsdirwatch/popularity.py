"""
Resolve descriptor-ID request logs back to onion addresses and rank services
by request volume.
"""

import csv
import datetime as dt
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .errors import InvalidArgument
from .protocol import REPLICAS, OnionAddress, descriptor_id

DAY = 86400


def day_index(date):
    """Days since the epoch for a ``datetime.date`` (or ISO date string)."""
    if isinstance(date, str):
        try:
            date = dt.date.fromisoformat(date)
        except ValueError as exc:
            raise InvalidArgument(f"bad date {date!r}, want YYYY-MM-DD") from exc
    return (date - dt.date(1970, 1, 1)).days


@dataclass
class DescriptorIndex:
    """Exact map from descriptor ID value to (onion, period, replica).

    Periods are taken as the day numbers in the window. Because of the
    per-service offset a period can start up to a day before its calendar
    day, so callers wanting full coverage of a log should pad the window by
    a day on the late side.
    """

    first_day: int
    last_day: int
    entries: dict = field(default_factory=dict)
    collisions: dict = field(default_factory=dict)  # desc value -> [(onion, period, replica)]

    def __len__(self):
        return len(self.entries)

    def lookup(self, desc):
        return self.entries.get(desc.value)

    def is_ambiguous(self, desc):
        return desc.value in self.collisions


def build_index(onions, first_day, last_day):
    """Index every (onion, day, replica) in the inclusive day range."""
    first, last = day_index(first_day), day_index(last_day)
    if last < first:
        raise InvalidArgument("date range must cover at least one day")
    index = DescriptorIndex(first, last)
    for onion in dict.fromkeys(onions):  # de-duplicate, keep order
        for period in range(first, last + 1):
            for replica in REPLICAS:
                key = descriptor_id(onion, period, replica).value
                where = (onion, period, replica)
                if key in index.collisions:
                    index.collisions[key].append(where)
                elif key in index.entries:
                    index.collisions[key] = [index.entries.pop(key), where]
                else:
                    index.entries[key] = where
    return index


@dataclass
class PopularityTable:
    rows: list  # (rank, count, onion text)
    unresolved: int = 0
    ambiguous: int = 0
    descriptors: dict = field(default_factory=dict)  # onion text -> distinct ids seen

    @property
    def resolved(self):
        return sum(r[1] for r in self.rows)

    @property
    def total(self):
        return self.resolved + self.unresolved + self.ambiguous

    def to_json(self):
        return {
            "total": self.total,
            "resolved": self.resolved,
            "unresolved": self.unresolved,
            "ambiguous": self.ambiguous,
            "rows": [{"rank": r, "count": c, "onion": o, "descriptors": self.descriptors.get(o, 0)}
                     for r, c, o in self.rows],
        }

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["rank", "count", "onion"])
        w.writerows(self.rows)

    def dumps(self):
        return json.dumps(self.to_json(), indent=2) + "\n"


def resolve(log, index):
    """Sum request counts per onion; unknown IDs go to ``unresolved``."""
    counts = Counter()
    seen = defaultdict(set)
    unresolved = ambiguous = 0
    for row in log:
        if index.is_ambiguous(row.desc_id):
            ambiguous += row.count
            continue
        hit = index.lookup(row.desc_id)
        if hit is None:
            unresolved += row.count
            continue
        onion = hit[0].text
        counts[onion] += row.count
        seen[onion].add(row.desc_id.value)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    rows = [(rank, count, onion) for rank, (onion, count) in enumerate(ordered, start=1)]
    return PopularityTable(rows, unresolved, ambiguous,
                           {o: len(ids) for o, ids in sorted(seen.items())})


def read_onion_list(fh):
    """One address per line; blank lines and ``#`` comments skipped."""
    onions = []
    for n, line in enumerate(fh, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            onions.append(OnionAddress.from_text(text))
        except ValueError as exc:
            raise InvalidArgument(f"onion list line {n}: {exc}") from exc
    return onions


def read_table_json(data):
    """PopularityTable from its JSON form (as produced by ``to_json``)."""
    try:
        rows = [(int(r["rank"]), int(r["count"]), str(r["onion"])) for r in data["rows"]]
        return PopularityTable(rows, int(data.get("unresolved", 0)), int(data.get("ambiguous", 0)),
                               {r["onion"]: int(r.get("descriptors", 0)) for r in data["rows"]})
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"not a popularity table: {exc}") from exc
