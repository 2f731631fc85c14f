"""
Detection of hidden-service tracking from consensus history.

Five independent rules run over the responsibility timeline of one onion
address:

FREQUENCY       a relay is responsible more often than mu + z*sigma
PREPOSITION     a fingerprint is swapped in, or a relay appears, just before
                it becomes responsible
DISTANCE_RATIO  avg ring gap / distance-to-descriptor is implausibly large
SWITCH_COUNT    an (ip, port) identity changes fingerprint many times quickly
CONSECUTIVE     a fingerprint, identity or host holds consecutive periods
"""

import datetime as dt
import enum
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from difflib import SequenceMatcher

from .consensus import HOUR, fingerprint_changes
from .errors import ConfigError, InsufficientRing, NoDataError, NotFoundError
from .protocol import (
    REPLICAS,
    OnionAddress,
    avg_consecutive_distance,
    descriptor_id,
    fp_to_hex,
    period_start,
    responsible_hsdirs,
    ring_distance,
    time_period,
)

DAY = 24 * HOUR
SLOTS_PER_PERIOD = 6


class Severity(enum.IntEnum):
    NOTE = 1
    SUSPICIOUS = 2
    ALARM = 3


class Rule(str, enum.Enum):
    FREQUENCY = "FREQUENCY"
    PREPOSITION = "PREPOSITION"
    DISTANCE_RATIO = "DISTANCE_RATIO"
    SWITCH_COUNT = "SWITCH_COUNT"
    CONSECUTIVE = "CONSECUTIVE"


RULE_ORDER = {r: i for i, r in enumerate(Rule)}


@dataclass(frozen=True)
class DetectorConfig:
    z_threshold: float = 3.0
    ratio_warn: int = 100
    ratio_alarm: int = 10_000
    preposition_min_occurrences: int = 2
    change_lookback: int = 7 * DAY
    fresh_window: tuple = (23 * HOUR, 27 * HOUR)
    switch_count_threshold: int = 3
    switch_window: int = 30 * DAY
    consecutive_min_run: int = 3

    def __post_init__(self):
        object.__setattr__(self, "fresh_window", tuple(self.fresh_window))
        problems = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "fresh_window":
                if len(value) != 2 or not 0 <= value[0] < value[1]:
                    problems[f.name] = "needs 0 <= lower < upper"
            elif not value > 0:
                problems[f.name] = "must be positive"
        if self.ratio_alarm < self.ratio_warn:
            problems["ratio_alarm"] = "must be >= ratio_warn"
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_mapping(cls, data):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError({k: "unknown setting" for k in unknown})
        kwargs = {}
        for key, value in data.items():
            kwargs[key] = tuple(value) if key == "fresh_window" else value
        return cls(**kwargs)

    def to_json(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["fresh_window"] = list(self.fresh_window)
        return out


@dataclass(frozen=True)
class Slot:
    fingerprint: int
    distance: int
    nickname: str
    ip: str
    port: int

    @property
    def identity(self):
        return (self.ip, self.port)


@dataclass(frozen=True)
class ReplicaEntry:
    replica: int
    desc_id: object
    hsdirs: tuple


@dataclass(frozen=True)
class TimelineEntry:
    period: int
    upload_time: int
    ring_size: int
    avg_dist: object
    replicas: tuple
    degenerate: bool = False

    def slots(self):
        for rep in self.replicas:
            for slot in rep.hsdirs:
                yield rep, slot

    def responsible(self):
        """fingerprint -> Slot for every relay holding at least one of the 6 slots."""
        out = {}
        for _, slot in self.slots():
            out.setdefault(slot.fingerprint, slot)
        return out


@dataclass
class ResponsibilityTimeline:
    onion: OnionAddress
    start: int
    end: int
    entries: list = field(default_factory=list)

    def usable(self):
        return [e for e in self.entries if not e.degenerate]

    def between(self, start, end):
        return ResponsibilityTimeline(
            self.onion, start, end,
            [e for e in self.entries if start <= e.upload_time < end],
        )


@dataclass(frozen=True)
class Subject:
    fingerprint: object = None
    ip: object = None
    port: object = None
    nickname: object = None

    @property
    def identity(self):
        return None if self.port is None else (self.ip, self.port)

    def label(self):
        if self.fingerprint is not None:
            return fp_to_hex(self.fingerprint)
        if self.port is not None:
            return f"{self.ip}:{self.port}"
        return self.ip or ""

    def to_json(self):
        return {
            "fingerprint": None if self.fingerprint is None else fp_to_hex(self.fingerprint),
            "ip": self.ip,
            "port": self.port,
            "nickname": self.nickname,
        }


@dataclass(frozen=True)
class RuleFinding:
    rule: Rule
    subject: Subject
    severity: Severity
    evidence: dict
    segment: object = None

    def sort_key(self):
        return (RULE_ORDER[self.rule], self.subject.label(), self.evidence.get("period", -1),
                self.evidence.get("replica", -1))

    def identities(self):
        if self.subject.identity is not None:
            return [self.subject.identity]
        return [tuple(i) for i in self.evidence.get("identities", [])]

    def to_json(self):
        return {
            "rule": self.rule.value,
            "severity": self.severity.name,
            "segment": self.segment,
            "subject": self.subject.to_json(),
            "evidence": _jsonable(self.evidence),
        }


_BIG_KEYS = {"distance", "avg_dist"}


def _jsonable(value, key=None):
    if isinstance(value, dict):
        return {k: _jsonable(v, k) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if key in _BIG_KEYS and isinstance(value, int):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else "-inf"
    return value


# ---------------------------------------------------------------- timeline

def _periods_in(onion, start, end):
    p = time_period(max(start, 0), onion)
    if period_start(p, onion) < start:
        p += 1
    while period_start(p, onion) < end:
        yield p
        p += 1


def responsibility_timeline(archive, onion, start, end):
    """Responsible HSDirs for every period whose upload falls in [start, end).

    The range is clipped to the archive's coverage; a ring too small for a
    replica marks that period degenerate instead of failing.
    """
    if isinstance(onion, str):
        onion = OnionAddress.from_text(onion)
    if len(archive) == 0:
        raise NoDataError("archive is empty")
    lo, hi = max(start, archive.start), min(end, archive.end)
    timeline = ResponsibilityTimeline(onion, lo, max(lo, hi))
    for period in _periods_in(onion, lo, hi):
        upload = period_start(period, onion)
        snap = archive.snapshot_at(upload)
        ring = snap.hsdir_ring()
        relays = snap.by_fingerprint()
        avg = avg_consecutive_distance(ring) if len(ring) else None
        replicas = []
        degenerate = False
        for replica in REPLICAS:
            desc = descriptor_id(onion, period, replica)
            try:
                fps = responsible_hsdirs(desc, ring)
            except InsufficientRing:
                degenerate = True
                break
            slots = []
            for fp in fps:
                r = relays[fp]
                slots.append(Slot(fp, ring_distance(desc, fp), r.nickname, r.ip, r.or_port))
            replicas.append(ReplicaEntry(replica, desc, tuple(slots)))
        timeline.entries.append(TimelineEntry(
            period, upload, len(ring), avg,
            () if degenerate else tuple(replicas), degenerate,
        ))
    return timeline


# ---------------------------------------------------------------- rule 1

def binomial_threshold(n, n_hsdir, z=3.0):
    """(mu, sigma, mu + z*sigma) for n periods with p = 6/n_hsdir each."""
    return poisson_binomial_threshold([n_hsdir] * n, z)


def poisson_binomial_threshold(ring_sizes, z=3.0):
    mu = var = 0.0
    for size in ring_sizes:
        p = min(1.0, SLOTS_PER_PERIOD / size)
        mu += p
        var += p * (1 - p)
    sigma = math.sqrt(var)
    return mu, sigma, mu + z * sigma


def rule_frequency(timeline, archive=None, config=None, segment=None):
    config = config or DetectorConfig()
    entries = timeline.usable()
    if not entries:
        return []
    counts = Counter()
    last_slot = {}
    for e in entries:
        for fp, slot in e.responsible().items():
            counts[fp] += 1
            last_slot[fp] = slot
    sizes = [e.ring_size for e in entries]
    mu, sigma, threshold = poisson_binomial_threshold(sizes, config.z_threshold)
    findings = []
    for fp in sorted(counts):
        if counts[fp] > threshold:
            s = last_slot[fp]
            findings.append(RuleFinding(
                Rule.FREQUENCY, Subject(fp, s.ip, s.port, s.nickname), Severity.SUSPICIOUS,
                {"count": counts[fp], "periods": len(entries), "mu": round(mu, 6),
                 "sigma": round(sigma, 6), "threshold": round(threshold, 6),
                 "mean_ring_size": round(sum(sizes) / len(sizes), 3)},
                segment,
            ))
    return findings


# ---------------------------------------------------------------- rule 2

def rule_preposition(timeline, changes, archive, config=None):
    config = config or DetectorConfig()
    held = defaultdict(list)  # fp -> [(upload, period, slot)]
    for e in timeline.usable():
        for fp, slot in e.responsible().items():
            held[fp].append((e.upload_time, e.period, slot))

    occurrences = defaultdict(dict)  # identity -> {(fp, period): occurrence}
    slots_by_identity = {}

    def record(slot, fp, period, kind, delta):
        occ = occurrences[slot.identity].setdefault(
            (fp, period), {"fingerprint": fp_to_hex(fp), "period": period, "kinds": {}}
        )
        occ["kinds"][kind] = delta
        slots_by_identity[slot.identity] = slot

    for ev in changes:
        for upload, period, slot in held.get(ev.new_fp, ()):
            if ev.at <= upload <= ev.at + config.change_lookback:
                record(slot, ev.new_fp, period, "fingerprint_change", upload - ev.at)
                break

    lo, hi = config.fresh_window
    for fp, spans in held.items():
        upload, period, slot = spans[0]
        try:
            seen = archive.relay_first_seen(fp)
        except NotFoundError:
            continue
        if lo <= upload - seen <= hi:
            record(slot, fp, period, "fresh_relay", upload - seen)

    findings = []
    for identity in sorted(occurrences):
        occ = [occurrences[identity][k] for k in sorted(occurrences[identity],
                                                        key=lambda k: (k[1], k[0]))]
        slot = slots_by_identity[identity]
        severity = (Severity.SUSPICIOUS if len(occ) >= config.preposition_min_occurrences
                    else Severity.NOTE)
        findings.append(RuleFinding(
            Rule.PREPOSITION, Subject(None, slot.ip, slot.port, slot.nickname), severity,
            {"occurrences": len(occ),
             "events": [{"fingerprint": o["fingerprint"], "period": o["period"],
                         **{k: o["kinds"][k] for k in sorted(o["kinds"])}} for o in occ]},
        ))
    return findings


# ---------------------------------------------------------------- rule 3

def distance_ratio(avg_dist, distance):
    """Floor of avg_dist / distance; ``math.inf`` at distance zero."""
    if distance == 0:
        return math.inf
    return avg_dist // distance


def rule_distance_ratio(timeline, archive=None, config=None):
    config = config or DetectorConfig()
    findings = []
    for e in timeline.usable():
        for rep, slot in e.slots():
            ratio = distance_ratio(e.avg_dist, slot.distance)
            if ratio > config.ratio_alarm:
                severity = Severity.ALARM
            elif ratio > config.ratio_warn:
                severity = Severity.NOTE
            else:
                continue
            findings.append(RuleFinding(
                Rule.DISTANCE_RATIO, Subject(slot.fingerprint, slot.ip, slot.port, slot.nickname),
                severity,
                {"period": e.period, "replica": rep.replica, "upload_time": e.upload_time,
                 "desc_id": rep.desc_id.text, "distance": slot.distance,
                 "avg_dist": e.avg_dist, "ratio": ratio},
            ))
    return findings


# ---------------------------------------------------------------- rule 4

def rule_switch_count(changes, config=None):
    config = config or DetectorConfig()
    by_identity = defaultdict(list)
    for ev in changes:
        by_identity[ev.identity_key].append(ev)
    findings = []
    for identity in sorted(by_identity):
        events = sorted(by_identity[identity], key=lambda e: e.at)
        best, best_span = 0, None
        i = 0
        for j in range(len(events)):
            while events[j].at - events[i].at >= config.switch_window:
                i += 1
            if j - i + 1 > best:
                best, best_span = j - i + 1, (events[i].at, events[j].at)
        if best >= config.switch_count_threshold:
            findings.append(RuleFinding(
                Rule.SWITCH_COUNT, Subject(None, identity[0], identity[1], events[-1].nickname),
                Severity.SUSPICIOUS,
                {"switches_in_window": best, "window_start": best_span[0],
                 "window_end": best_span[1], "total_switches": len(events),
                 "window_seconds": config.switch_window},
            ))
    return findings


# ---------------------------------------------------------------- rule 5

def _runs(periods):
    runs = []
    for p in sorted(periods):
        if runs and p == runs[-1][1] + 1:
            runs[-1][1] = p
        else:
            runs.append([p, p])
    return runs


def rule_consecutive(timeline, config=None):
    """Consecutive responsibility at fingerprint, identity and host level.

    A coarser level is only reported when its longest run beats every run of
    the finer subjects beneath it.
    """
    config = config or DetectorConfig()
    per_fp = defaultdict(set)
    per_identity = defaultdict(set)
    per_host = defaultdict(set)
    fp_slot = {}
    identity_fps = defaultdict(set)
    host_identities = defaultdict(set)
    for e in timeline.usable():
        for fp, slot in e.responsible().items():
            per_fp[fp].add(e.period)
            per_identity[slot.identity].add(e.period)
            per_host[slot.ip].add(e.period)
            fp_slot[fp] = slot
            identity_fps[slot.identity].add(fp)
            host_identities[slot.ip].add(slot.identity)

    def longest(periods):
        return max((b - a + 1 for a, b in _runs(periods)), default=0)

    def severity_for(run):
        if run >= config.consecutive_min_run:
            return Severity.SUSPICIOUS
        if run >= 2:
            return Severity.NOTE
        return None

    def evidence(level, periods, fps, identities=None):
        runs = [r for r in _runs(periods) if r[1] > r[0]]
        ev = {"level": level, "max_run": longest(periods), "runs": runs,
              "fingerprints": sorted(fp_to_hex(f) for f in fps)}
        if identities is not None:
            ev["identities"] = [list(i) for i in sorted(identities)]
        return ev

    findings = []
    fp_best = {fp: longest(ps) for fp, ps in per_fp.items()}
    for fp in sorted(per_fp):
        sev = severity_for(fp_best[fp])
        if sev:
            s = fp_slot[fp]
            findings.append(RuleFinding(
                Rule.CONSECUTIVE, Subject(fp, s.ip, s.port, s.nickname), sev,
                evidence("fingerprint", per_fp[fp], [fp]),
            ))
    id_best = {}
    for identity in sorted(per_identity):
        run = longest(per_identity[identity])
        id_best[identity] = run
        sev = severity_for(run)
        if sev and run > max(fp_best[f] for f in identity_fps[identity]):
            nick = fp_slot[max(identity_fps[identity], key=lambda f: max(per_fp[f]))].nickname
            findings.append(RuleFinding(
                Rule.CONSECUTIVE, Subject(None, identity[0], identity[1], nick), sev,
                evidence("identity", per_identity[identity], identity_fps[identity]),
            ))
    for host in sorted(per_host):
        run = longest(per_host[host])
        sev = severity_for(run)
        ids = host_identities[host]
        if sev and run > max(id_best[i] for i in ids):
            fps = set().union(*(identity_fps[i] for i in ids))
            findings.append(RuleFinding(
                Rule.CONSECUTIVE, Subject(None, host, None, None), sev,
                evidence("host", per_host[host], fps, ids),
            ))
    return findings


# ---------------------------------------------------------------- report

def year_segments(start, end):
    """Split [start, end) at UTC calendar-year boundaries."""
    segments = []
    t = start
    while t < end:
        year = dt.datetime.fromtimestamp(t, dt.timezone.utc).year
        nxt = int(dt.datetime(year + 1, 1, 1, tzinfo=dt.timezone.utc).timestamp())
        segments.append((str(year), t, min(nxt, end)))
        t = nxt
    return segments


def _segment_of(segments, t):
    for label, a, b in segments:
        if a <= t < b:
            return label
    return None


def _finding_time(f, period_times):
    ev = f.evidence
    if "upload_time" in ev:
        return ev["upload_time"]
    if "window_start" in ev:
        return ev["window_start"]
    if ev.get("events"):
        return period_times.get(ev["events"][0]["period"])
    if ev.get("runs"):
        return period_times.get(ev["runs"][0][0])
    return None


def longest_common_substring(a, b):
    m = SequenceMatcher(None, a, b, autojunk=False).find_longest_match(0, len(a), 0, len(b))
    return a[m.a:m.a + m.size]


def nickname_clusters(named, min_common=6):
    """Group (key, nickname) pairs whose nicknames share a long substring."""
    keys = [k for k, _ in named]
    nick = dict(named)
    parent = {k: k for k in keys}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            if nick[a] and nick[b] and len(longest_common_substring(nick[a], nick[b])) >= min_common:
                parent[find(a)] = find(b)
    groups = defaultdict(list)
    for k in keys:
        groups[find(k)].append(k)
    out = []
    for members in groups.values():
        if len(members) < 2:
            continue
        members.sort()
        common = nick[members[0]]
        for m in members[1:]:
            common = longest_common_substring(common, nick[m]) or common
        out.append({"members": members, "nicknames": sorted({nick[m] for m in members}),
                    "common": common})
    return sorted(out, key=lambda c: c["members"])


@dataclass
class IdentityScore:
    ip: str
    port: int
    nicknames: list
    rules: list
    max_severity: Severity
    findings: int

    @property
    def score(self):
        return len(self.rules)

    @property
    def identity(self):
        return (self.ip, self.port)

    def to_json(self):
        return {"identity": f"{self.ip}:{self.port}", "nicknames": self.nicknames,
                "score": self.score, "max_severity": self.max_severity.name,
                "rules": self.rules, "findings": self.findings}


@dataclass
class SuspicionReport:
    onion: OnionAddress
    start: int
    end: int
    config: DetectorConfig
    segments: list
    timeline: ResponsibilityTimeline
    findings: list
    scores: list
    clusters: list

    @property
    def max_severity(self):
        return max((f.severity for f in self.findings), default=None)

    def top_identity(self):
        return self.scores[0].identity if self.scores else None

    def exit_status(self):
        sev = self.max_severity
        if sev == Severity.ALARM:
            return 2
        if sev == Severity.SUSPICIOUS:
            return 1
        return 0

    def to_json(self):
        return {
            "onion": self.onion.text,
            "range": {"start": self.start, "end": self.end,
                      "start_utc": _iso(self.start), "end_utc": _iso(self.end)},
            "config": self.config.to_json(),
            "segments": self.segments,
            "summary": {
                "periods": len(self.timeline.entries),
                "degenerate_periods": sum(e.degenerate for e in self.timeline.entries),
                "findings": len(self.findings),
                "by_severity": {s.name: sum(f.severity == s for f in self.findings)
                                for s in Severity},
                "max_severity": self.max_severity.name if self.max_severity else None,
            },
            "scores": [s.to_json() for s in self.scores],
            "clusters": self.clusters,
            "findings": [f.to_json() for f in self.findings],
            "timeline": [_entry_json(e) for e in self.timeline.entries],
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=2) + "\n"

    def to_text(self, limit=50):
        lines = [
            f"Tracking analysis for {self.onion.text}.onion",
            f"Range: {_iso(self.start)} .. {_iso(self.end)}  "
            f"({len(self.timeline.entries)} periods, "
            f"{sum(e.degenerate for e in self.timeline.entries)} degenerate)",
        ]
        for seg in self.segments:
            lines.append(f"  segment {seg['label']}: {seg['periods']} periods, "
                         f"mean HSDir ring {seg['mean_ring_size']}")
        lines.append("")
        lines.append(f"{'identity':<22} {'score':>5} {'max':<10} rules")
        for s in self.scores[:limit]:
            lines.append(f"{s.ip + ':' + str(s.port):<22} {s.score:>5} "
                         f"{s.max_severity.name:<10} {','.join(s.rules)}")
        lines.append("")
        lines.append(f"{'severity':<10} {'rule':<14} {'subject':<42} detail")
        for f in self.findings[:limit]:
            lines.append(f"{f.severity.name:<10} {f.rule.value:<14} "
                         f"{f.subject.label():<42} {_detail(f)}")
        if len(self.findings) > limit:
            lines.append(f"... {len(self.findings) - limit} more findings")
        for c in self.clusters:
            lines.append(f"cluster '{c['common']}': {', '.join(c['members'])}")
        return "\n".join(lines) + "\n"


def _iso(t):
    return dt.datetime.fromtimestamp(t, dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _detail(f):
    ev = f.evidence
    if f.rule == Rule.FREQUENCY:
        return f"count={ev['count']} threshold={ev['threshold']:.2f}"
    if f.rule == Rule.DISTANCE_RATIO:
        return f"period={ev['period']} replica={ev['replica']} ratio={ev['ratio']}"
    if f.rule == Rule.PREPOSITION:
        return f"occurrences={ev['occurrences']}"
    if f.rule == Rule.SWITCH_COUNT:
        return f"switches={ev['switches_in_window']} total={ev['total_switches']}"
    return f"level={ev['level']} max_run={ev['max_run']}"


def _entry_json(e):
    reps = []
    for rep in e.replicas:
        reps.append({
            "replica": rep.replica,
            "desc_id": rep.desc_id.text,
            "hsdirs": [{"fingerprint": fp_to_hex(s.fingerprint), "nickname": s.nickname,
                        "ip": s.ip, "port": s.port, "distance": str(s.distance),
                        "ratio": _jsonable(distance_ratio(e.avg_dist, s.distance))}
                       for s in rep.hsdirs],
        })
    return {"period": e.period, "upload_time": e.upload_time, "ring_size": e.ring_size,
            "degenerate": e.degenerate, "replicas": reps}


def _score_identities(findings):
    by_id = defaultdict(list)
    for f in findings:
        for identity in f.identities():
            by_id[identity].append(f)
    scores = []
    for identity, fs in by_id.items():
        scores.append(IdentityScore(
            identity[0], identity[1],
            sorted({f.subject.nickname for f in fs if f.subject.nickname}),
            sorted({f.rule.value for f in fs}, key=lambda r: RULE_ORDER[Rule(r)]),
            max(f.severity for f in fs), len(fs),
        ))
    scores.sort(key=lambda s: (-s.score, -s.max_severity, -s.findings, s.ip, s.port))
    return scores


def detect(archive, onion, start, end, config=None):
    config = config or DetectorConfig()
    if isinstance(onion, str):
        onion = OnionAddress.from_text(onion)
    timeline = responsibility_timeline(archive, onion, start, end)
    segments = year_segments(timeline.start, timeline.end)
    changes = fingerprint_changes(archive)
    in_range = [c for c in changes if timeline.start <= c.at < timeline.end]

    findings = []
    seg_info = []
    for label, a, b in segments:
        part = timeline.between(a, b)
        usable = part.usable()
        seg_info.append({
            "label": label, "start": a, "end": b, "periods": len(part.entries),
            "mean_ring_size": round(sum(e.ring_size for e in usable) / len(usable), 3)
            if usable else None,
        })
        findings += rule_frequency(part, archive, config, segment=label)
    period_times = {e.period: e.upload_time for e in timeline.entries}
    others = (rule_preposition(timeline, changes, archive, config)
              + rule_distance_ratio(timeline, archive, config)
              + rule_switch_count(in_range, config)
              + rule_consecutive(timeline, config))
    for f in others:
        t = _finding_time(f, period_times)
        findings.append(RuleFinding(f.rule, f.subject, f.severity, f.evidence,
                                    _segment_of(segments, t) if t is not None else None))

    scores = _score_identities(findings)
    score_of = {s.identity: s.score for s in scores}
    findings.sort(key=lambda f: (-f.severity,
                                 -max((score_of[i] for i in f.identities()), default=0),
                                 f.sort_key()))
    clusters = nickname_clusters(
        [(f"{s.ip}:{s.port}", s.nicknames[0] if s.nicknames else "") for s in scores]
    )
    return SuspicionReport(onion, timeline.start, timeline.end, config, seg_info, timeline,
                           findings, scores, clusters)
