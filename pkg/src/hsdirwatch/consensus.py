"""
Hourly consensus snapshots: data model, JSONL ingestion and history queries.

Wire format, one snapshot per line::

    {"valid_after": 1356998400,
     "relays": [{"fp": "<40 hex>", "nick": "name", "ip": "10.0.0.1",
                 "port": 9001, "bw": 250, "flags": ["HSDir", "Running"]}]}
"""

import bisect
import ipaddress
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .errors import ConstraintError, NoDataError, NotFoundError, OrderingError, ParseError
from .protocol import HsDirRing, fp_from_hex, fp_to_hex

HOUR = 3600
KNOWN_FLAGS = frozenset({"HSDir", "Guard", "Running", "Valid"})
MAX_RELAYS_PER_IP = 2
_NICK_RE = re.compile(r"^[A-Za-z0-9]{1,19}$")


@dataclass(frozen=True)
class RelayEntry:
    fingerprint: int
    nickname: str
    ip: str
    or_port: int
    bandwidth: int
    flags: frozenset = frozenset()

    @property
    def identity(self):
        return (self.ip, self.or_port)

    @property
    def is_hsdir(self):
        return "HSDir" in self.flags

    def to_json(self):
        return {
            "fp": fp_to_hex(self.fingerprint),
            "nick": self.nickname,
            "ip": self.ip,
            "port": self.or_port,
            "bw": self.bandwidth,
            "flags": sorted(self.flags),
        }


@dataclass(frozen=True)
class ConsensusSnapshot:
    valid_after: int
    relays: tuple = ()

    def hsdir_ring(self):
        return HsDirRing(r.fingerprint for r in self.relays if r.is_hsdir)

    def by_fingerprint(self):
        return {r.fingerprint: r for r in self.relays}

    def to_json(self):
        return {"valid_after": self.valid_after, "relays": [r.to_json() for r in self.relays]}


@dataclass(frozen=True)
class FingerprintChangeEvent:
    identity_key: tuple
    nickname: str
    old_fp: int
    new_fp: int
    at: int


def validate_snapshot(snap, line=None):
    if snap.valid_after % HOUR:
        raise ConstraintError(f"valid_after {snap.valid_after} is not hour-aligned", line)
    seen_fp = set()
    seen_addr = set()
    per_ip = Counter()
    for r in snap.relays:
        if r.fingerprint in seen_fp:
            raise ConstraintError(f"duplicate fingerprint {fp_to_hex(r.fingerprint)}", line)
        if r.identity in seen_addr:
            raise ConstraintError(f"duplicate address {r.ip}:{r.or_port}", line)
        seen_fp.add(r.fingerprint)
        seen_addr.add(r.identity)
        per_ip[r.ip] += 1
    crowded = sorted(ip for ip, n in per_ip.items() if n > MAX_RELAYS_PER_IP)
    if crowded:
        raise ConstraintError(
            f"more than {MAX_RELAYS_PER_IP} relays on {', '.join(crowded)}", line
        )


def _relay_from_json(obj, line):
    try:
        fp = fp_from_hex(obj["fp"])
        nick = obj["nick"]
        ip = obj["ip"]
        port = obj["port"]
        bw = obj["bw"]
        flags = obj.get("flags", [])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"relay entry missing field {exc}", line) from exc
    except ValueError as exc:
        raise ParseError(str(exc), line) from exc
    if not isinstance(nick, str) or not _NICK_RE.match(nick):
        raise ParseError(f"bad nickname {nick!r}", line)
    try:
        ipaddress.IPv4Address(ip)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"bad IPv4 address {ip!r}", line) from exc
    if not isinstance(port, int) or isinstance(port, bool) or not 1 <= port <= 65535:
        raise ParseError(f"bad port {port!r}", line)
    if not isinstance(bw, int) or isinstance(bw, bool) or bw < 0:
        raise ParseError(f"bad bandwidth {bw!r}", line)
    if not isinstance(flags, list) or not set(flags) <= KNOWN_FLAGS:
        raise ParseError(f"unknown flags in {flags!r}", line)
    return RelayEntry(fp, nick, ip, port, bw, frozenset(flags))


def snapshot_from_json(obj, line=None):
    if not isinstance(obj, dict):
        raise ParseError("snapshot must be a JSON object", line)
    va = obj.get("valid_after")
    if not isinstance(va, int) or isinstance(va, bool) or va < 0:
        raise ParseError(f"bad valid_after {va!r}", line)
    relays = obj.get("relays")
    if not isinstance(relays, list):
        raise ParseError("relays must be a list", line)
    snap = ConsensusSnapshot(va, tuple(_relay_from_json(r, line) for r in relays))
    validate_snapshot(snap, line)
    return snap


class ConsensusArchive:
    """Time-ordered, immutable sequence of consensus snapshots."""

    def __init__(self, snapshots=()):
        self.snapshots = tuple(snapshots)
        self._times = [s.valid_after for s in self.snapshots]
        for i in range(1, len(self._times)):
            if self._times[i] <= self._times[i - 1]:
                raise OrderingError(
                    f"valid_after {self._times[i]} not after {self._times[i - 1]}", i + 1
                )
        self._first_seen = None
        self._identities = None

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def __eq__(self, other):
        return isinstance(other, ConsensusArchive) and self.snapshots == other.snapshots

    @property
    def start(self):
        return self._times[0] if self._times else None

    @property
    def end(self):
        """End of coverage: the last snapshot is valid for one hour."""
        return self._times[-1] + HOUR if self._times else None

    def gaps(self):
        """(previous valid_after, next valid_after) pairs more than an hour apart."""
        return [(a, b) for a, b in zip(self._times, self._times[1:]) if b - a != HOUR]

    def snapshot_at(self, t):
        if not self.snapshots:
            raise NoDataError("archive is empty")
        i = bisect.bisect_right(self._times, t)
        if i == 0:
            raise NoDataError(f"no snapshot at or before {t}")
        return self.snapshots[i - 1]

    def hsdir_ring_at(self, t):
        return self.snapshot_at(t).hsdir_ring()

    def relay_first_seen(self, fp):
        if self._first_seen is None:
            first = {}
            for snap in self.snapshots:
                for r in snap.relays:
                    first.setdefault(r.fingerprint, snap.valid_after)
            self._first_seen = first
        try:
            return self._first_seen[fp]
        except KeyError:
            raise NotFoundError(f"fingerprint {fp_to_hex(fp)} never appeared") from None

    def identities_of(self):
        """fingerprint -> list of (ip, port, nickname) it was seen at, first first."""
        if self._identities is None:
            seen = defaultdict(dict)
            for snap in self.snapshots:
                for r in snap.relays:
                    seen[r.fingerprint].setdefault(r.identity, r.nickname)
            self._identities = {
                fp: [(ip, port, nick) for (ip, port), nick in ids.items()]
                for fp, ids in seen.items()
            }
        return self._identities

    def fingerprint_changes(self):
        return fingerprint_changes(self)


def fingerprint_changes(archive):
    """Fingerprint switches per (ip, or_port) identity, in time order."""
    last = {}
    events = []
    for snap in archive.snapshots:
        for r in sorted(snap.relays, key=lambda r: r.identity):
            prev = last.get(r.identity)
            if prev is not None and prev != r.fingerprint:
                events.append(
                    FingerprintChangeEvent(r.identity, r.nickname, prev, r.fingerprint,
                                           snap.valid_after)
                )
            last[r.identity] = r.fingerprint
    return events


def hsdir_ring_at(archive, t):
    return archive.hsdir_ring_at(t)


def relay_first_seen(archive, fp):
    return archive.relay_first_seen(fp)


def load_archive(source):
    """Parse a JSONL stream (text or bytes lines) into a ConsensusArchive."""
    snapshots = []
    prev = None
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
        snap = snapshot_from_json(obj, lineno)
        if prev is not None and snap.valid_after <= prev:
            raise OrderingError(
                f"valid_after {snap.valid_after} is not after {prev}", lineno
            )
        prev = snap.valid_after
        snapshots.append(snap)
    return ConsensusArchive(snapshots)


def dump_archive(archive, out):
    for snap in archive.snapshots:
        out.write(json.dumps(snap.to_json(), separators=(",", ":")))
        out.write("\n")


def read_archive(path):
    with open(path, "rb") as fh:
        return load_archive(fh)


def write_archive(archive, path):
    with open(path, "w", encoding="utf-8") as fh:
        dump_archive(archive, fh)
