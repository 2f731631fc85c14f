import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hsdirwatch.consensus import ConsensusArchive, ConsensusSnapshot, FingerprintChangeEvent
from hsdirwatch.detector import (
    DetectorConfig,
    Rule,
    Severity,
    binomial_threshold,
    detect,
    distance_ratio,
    nickname_clusters,
    responsibility_timeline,
    rule_consecutive,
    rule_distance_ratio,
    rule_frequency,
    rule_preposition,
    rule_switch_count,
    year_segments,
)
from hsdirwatch.errors import ConfigError, NoDataError
from hsdirwatch.protocol import (
    RING_SIZE,
    HsDirRing,
    OnionAddress,
    avg_consecutive_distance,
    descriptor_id,
    onion_address_from_pubkey,
    period_start,
    responsible_hsdirs,
    ring_distance,
    time_period,
)

from . import oracles
from .builders import DAY, HOUR, T0, entry, relay, slot, static_archive, timeline

ONION = onion_address_from_pubkey(b"target service key")


def ring_relays(n, seed=0):
    rng = random.Random(seed)
    return [relay(rng.getrandbits(160), i=i + 1) for i in range(n)]


class TestConfig:
    def test_defaults(self):
        c = DetectorConfig()
        assert (c.ratio_warn, c.ratio_alarm, c.z_threshold) == (100, 10_000, 3.0)
        assert c.fresh_window == (23 * HOUR, 27 * HOUR)

    def test_invalid(self):
        with pytest.raises(ConfigError) as exc:
            DetectorConfig(z_threshold=0, fresh_window=(5, 5))
        assert exc.value.fields == ["fresh_window", "z_threshold"]

    def test_from_mapping(self):
        c = DetectorConfig.from_mapping({"ratio_warn": 50, "fresh_window": [0, 10]})
        assert c.ratio_warn == 50 and c.fresh_window == (0, 10)
        with pytest.raises(ConfigError):
            DetectorConfig.from_mapping({"bogus": 1})


class TestTimeline:
    def test_shape_static_ring(self):
        archive = static_archive(ring_relays(20), hours=12 * 24)
        tl = responsibility_timeline(archive, ONION, T0 + DAY, T0 + 11 * DAY)
        assert len(tl.entries) == 10
        for e in tl.entries:
            assert not e.degenerate
            assert sum(len(r.hsdirs) for r in e.replicas) == 6
            assert all(s.distance > 0 for _, s in e.slots())
            assert time_period(e.upload_time, ONION) == e.period

    def test_matches_brute_force(self):
        relays = ring_relays(20, seed=5)
        fps = [r.fingerprint for r in relays]
        archive = static_archive(relays, hours=12 * 24)
        tl = responsibility_timeline(archive, ONION, T0, T0 + 12 * DAY)
        for e in tl.entries:
            for rep in e.replicas:
                desc = descriptor_id(ONION, e.period, rep.replica).int
                assert [s.fingerprint for s in rep.hsdirs] == \
                    oracles.brute_force_responsible(desc, fps)

    def test_degenerate_day(self):
        relays = ring_relays(20)
        snaps = []
        day4 = period_start(time_period(T0, ONION) + 4, ONION)
        for h in range(12 * 24):
            t = T0 + h * HOUR
            rs = relays[:2] if day4 - 2 * HOUR <= t <= day4 + 2 * HOUR else relays
            snaps.append(ConsensusSnapshot(t, tuple(rs)))
        tl = responsibility_timeline(ConsensusArchive(snaps), ONION, T0, T0 + 11 * DAY)
        flagged = [e.period for e in tl.entries if e.degenerate]
        assert flagged == [time_period(T0, ONION) + 4]
        assert sum(not e.degenerate for e in tl.entries) == len(tl.entries) - 1

    def test_range_clipped_to_archive(self):
        archive = static_archive(ring_relays(10), hours=48)
        tl = responsibility_timeline(archive, ONION, T0 - 10 * DAY, T0 + 10 * DAY)
        assert tl.start == T0 and tl.end == T0 + 48 * HOUR
        assert all(T0 <= e.upload_time < T0 + 48 * HOUR for e in tl.entries)

    def test_empty_archive(self):
        with pytest.raises(NoDataError):
            responsibility_timeline(ConsensusArchive(), ONION, 0, DAY)


class TestFrequency:
    def test_paper_threshold(self):
        mu, sigma, thr = binomial_threshold(334, 757)
        o_mu, o_sigma, o_thr = oracles.binomial_threshold(334, 757)
        assert mu == pytest.approx(o_mu, rel=1e-12)
        assert sigma == pytest.approx(o_sigma, rel=1e-12)
        assert mu == pytest.approx(2.647, abs=5e-4)
        assert sigma == pytest.approx(1.621, abs=5e-4)
        assert thr == pytest.approx(7.51, abs=5e-3)

    def test_paper_threshold_monte_carlo(self):
        samples = np.random.default_rng(334).binomial(334, 6 / 757, size=100_000)
        mu, sigma, _ = binomial_threshold(334, 757)
        assert samples.mean() == pytest.approx(mu, abs=0.02)
        assert samples.std() == pytest.approx(sigma, abs=0.02)

    def hot_timeline(self, hot_count, n=334, ring=757):
        entries = []
        for p in range(n):
            slots = [slot(7, ip="10.9.9.9")] if p % 2 == 0 and p // 2 < hot_count else []
            entries.append(entry(p, slots, ring_size=ring))
        return timeline(entries)

    def test_eight_flagged_seven_not(self):
        f8 = rule_frequency(self.hot_timeline(8))
        f7 = rule_frequency(self.hot_timeline(7))
        assert [f.subject.fingerprint for f in f8] == [7]
        assert f8[0].severity == Severity.SUSPICIOUS
        assert f8[0].evidence["count"] == 8
        assert f8[0].evidence["threshold"] == pytest.approx(7.509, abs=1e-3)
        assert f7 == []

    def test_zero_count(self):
        assert rule_frequency(timeline([])) == []

    @given(st.floats(0.5, 6.0), st.floats(0.5, 6.0))
    def test_monotone_in_z(self, z1, z2):
        tl = self.hot_timeline(12, n=100, ring=200)
        lo, hi = sorted((z1, z2))
        a = {f.subject.fingerprint for f in rule_frequency(tl, None, DetectorConfig(z_threshold=lo))}
        b = {f.subject.fingerprint for f in rule_frequency(tl, None, DetectorConfig(z_threshold=hi))}
        assert b <= a

    def test_infinite_z(self):
        tl = self.hot_timeline(40, n=100, ring=200)
        assert rule_frequency(tl, None, DetectorConfig(z_threshold=math.inf)) == []

    def test_calibration_with_fresh_placement(self):
        # binomial assumption: every period places 200 relays uniformly at random
        rng = random.Random(42)
        entries = []
        for p in range(300):
            fps = list(range(1, 201))
            positions = {rng.getrandbits(160): fp for fp in fps}
            ring = HsDirRing(positions)
            slots = []
            for r in (0, 1):
                desc = rng.getrandbits(160)
                for pos in responsible_hsdirs(desc, ring):
                    fp = positions[pos]
                    slots.append(slot(fp, ip=f"10.1.0.{fp}", distance=ring_distance(desc, pos)))
            entries.append(entry(p, slots, ring_size=200))
        flagged = rule_frequency(timeline(entries))
        assert len(flagged) / 200 <= 0.01


class TestPreposition:
    def base(self):
        # relay 5 at 10.0.0.5 present from the start; fp 77 swapped in at identity 10.0.0.7
        snaps = []
        for h in range(20 * 24):
            t = T0 + h * HOUR
            rs = [relay(5, ip="10.0.0.5")]
            snaps.append(ConsensusSnapshot(t, tuple(rs)))
        return ConsensusArchive(snaps)

    def test_change_once_is_note(self):
        archive = self.base()
        upload = T0 + 5 * DAY
        changes = [FingerprintChangeEvent(("10.0.0.7", 9001), "grind", 76, 77, upload - 24 * HOUR)]
        tl = timeline([entry(5, [slot(77, ip="10.0.0.7", nick="grind")], upload_time=upload)])
        fs = rule_preposition(tl, changes, archive)
        assert len(fs) == 1
        assert fs[0].severity == Severity.NOTE
        assert fs[0].evidence["events"][0]["fingerprint_change"] == 24 * HOUR

    def test_twice_is_suspicious(self):
        archive = self.base()
        u1, u2 = T0 + 5 * DAY, T0 + 9 * DAY
        changes = [
            FingerprintChangeEvent(("10.0.0.7", 9001), "grind", 76, 77, u1 - 24 * HOUR),
            FingerprintChangeEvent(("10.0.0.7", 9001), "grind", 77, 78, u2 - 30 * HOUR),
        ]
        tl = timeline([
            entry(5, [slot(77, ip="10.0.0.7", nick="grind")], upload_time=u1),
            entry(9, [slot(78, ip="10.0.0.7", nick="grind")], upload_time=u2),
        ])
        fs = rule_preposition(tl, changes, archive)
        assert [(f.subject.ip, f.severity, f.evidence["occurrences"]) for f in fs] == \
            [("10.0.0.7", Severity.SUSPICIOUS, 2)]

    def test_change_too_old(self):
        archive = self.base()
        upload = T0 + 15 * DAY
        changes = [FingerprintChangeEvent(("10.0.0.7", 9001), "g", 76, 77, upload - 8 * DAY)]
        tl = timeline([entry(15, [slot(77, ip="10.0.0.7")], upload_time=upload)])
        assert rule_preposition(tl, changes, archive) == []

    def test_fresh_relay_25h(self):
        snaps = []
        for h in range(4 * 24):
            rs = [relay(5, ip="10.0.0.5")]
            if h >= 30:
                rs.append(relay(99, ip="10.0.0.99"))
            snaps.append(ConsensusSnapshot(T0 + h * HOUR, tuple(rs)))
        archive = ConsensusArchive(snaps)
        upload = T0 + 55 * HOUR  # exactly 25h after first appearance
        tl = timeline([entry(2, [slot(99, ip="10.0.0.99")], upload_time=upload)])
        fs = rule_preposition(tl, [], archive)
        assert len(fs) == 1
        assert fs[0].evidence["events"][0]["fresh_relay"] == 25 * HOUR
        assert fs[0].severity == Severity.NOTE

    def test_old_relay_not_fresh(self):
        archive = self.base()
        tl = timeline([entry(3, [slot(5, ip="10.0.0.5")], upload_time=T0 + 3 * DAY)])
        assert rule_preposition(tl, [], archive) == []


class TestDistanceRatio:
    def test_constructed_even_ring(self):
        ring = HsDirRing([0, 2**158, 2**159, 3 * 2**158])
        desc = 2**158 - 2**150
        nearest = responsible_hsdirs(desc, ring)[0]
        assert nearest == 2**158
        dist = ring_distance(desc, nearest)
        avg = avg_consecutive_distance(ring)
        assert (dist, avg, distance_ratio(avg, dist)) == (2**150, 2**158, 256)
        e = entry(1, [slot(nearest, distance=dist)], ring_size=4, avg_dist=avg)
        fs = rule_distance_ratio(timeline([e]))
        assert [(f.severity, f.evidence["ratio"]) for f in fs] == [(Severity.NOTE, 256)]

    def test_ratio_10001_alarms(self):
        avg = 2**160 // 1000
        dist = avg // 10001
        assert distance_ratio(avg, dist) == 10001
        e = entry(1, [slot(3, distance=dist)], ring_size=1000, avg_dist=avg)
        fs = rule_distance_ratio(timeline([e]))
        assert fs[0].severity == Severity.ALARM

    def test_ratio_exactly_10000_is_note(self):
        avg = 10_000 * 2**100
        e = entry(1, [slot(3, distance=2**100)], ring_size=4, avg_dist=avg)
        assert rule_distance_ratio(timeline([e]))[0].severity == Severity.NOTE

    def test_zero_distance_infinite(self):
        e = entry(1, [slot(3, distance=0)], ring_size=4, avg_dist=2**158)
        f = rule_distance_ratio(timeline([e]))[0]
        assert f.severity == Severity.ALARM and f.evidence["ratio"] == math.inf
        assert f.to_json()["evidence"]["ratio"] == "inf"

    @given(st.integers(1, RING_SIZE), st.integers(1, RING_SIZE))
    def test_floor_bracket(self, avg, dist):
        r = distance_ratio(avg, dist)
        assert r * dist <= avg < (r + 1) * dist

    def test_monte_carlo_warn_rate(self):
        rng = random.Random(2024)
        hits = trials = 0
        for _ in range(100):
            ring = HsDirRing(rng.getrandbits(160) for _ in range(1000))
            avg = avg_consecutive_distance(ring)
            for _ in range(100):
                desc = rng.getrandbits(160)
                nearest = responsible_hsdirs(desc, ring)[0]
                hits += distance_ratio(avg, ring_distance(desc, nearest)) > 100
                trials += 1
        expected = 1 - (1 - 1 / (100 * 1000)) ** 1000
        assert abs(hits / trials - expected) <= 0.003


def ev(at, old, new, ident=("10.0.0.7", 9001)):
    return FingerprintChangeEvent(ident, "nick", old, new, at)


class TestSwitchCount:
    def test_single_switch(self):
        assert rule_switch_count([ev(T0, 1, 2)]) == []

    def test_three_in_ten_days(self):
        fs = rule_switch_count([ev(T0, 1, 2), ev(T0 + 4 * DAY, 2, 3), ev(T0 + 9 * DAY, 3, 4)])
        assert len(fs) == 1 and fs[0].severity == Severity.SUSPICIOUS
        assert fs[0].evidence["switches_in_window"] == 3

    def test_spread_over_90_days(self):
        events = [ev(T0, 1, 2), ev(T0 + 45 * DAY, 2, 3), ev(T0 + 90 * DAY, 3, 4)]
        assert rule_switch_count(events) == []

    def test_identities_separate(self):
        events = [ev(T0, 1, 2, ("a", 1)), ev(T0 + DAY, 2, 3, ("b", 1)), ev(T0 + 2 * DAY, 3, 4, ("c", 1))]
        assert rule_switch_count(events) == []


class TestConsecutive:
    def test_identity_rotating_fingerprints(self):
        entries = [entry(p, [slot(1000 + p, ip="10.0.0.7", nick="grinder")]) for p in range(1, 15)]
        fs = rule_consecutive(timeline(entries))
        ident = [f for f in fs if f.evidence["level"] == "identity"]
        assert len(ident) == 1
        assert ident[0].evidence["max_run"] == 14
        assert ident[0].severity == Severity.SUSPICIOUS
        assert not [f for f in fs if f.evidence["level"] == "fingerprint"]

    def test_gap_breaks_run(self):
        entries = [entry(p, [slot(5)] if p in (3, 5) else []) for p in range(1, 8)]
        assert rule_consecutive(timeline(entries)) == []

    def test_two_days_is_note(self):
        entries = [entry(p, [slot(5)] if p in (3, 4) else []) for p in range(1, 8)]
        fs = rule_consecutive(timeline(entries))
        assert [(f.evidence["level"], f.severity) for f in fs] == [("fingerprint", Severity.NOTE)]

    def test_host_level(self):
        # two ports on one IP alternate, so only the host holds every period
        entries = [entry(p, [slot(2000 + p, ip="10.0.0.8", port=9001 + p % 2)]) for p in range(6)]
        fs = rule_consecutive(timeline(entries))
        assert [(f.evidence["level"], f.evidence["max_run"]) for f in fs] == [("host", 6)]
        assert sorted(fs[0].identities()) == [("10.0.0.8", 9001), ("10.0.0.8", 9002)]


class TestReport:
    def test_year_segments(self):
        t2012 = 1325376000
        segs = year_segments(t2012 - DAY, T0 + DAY)
        assert [s[0] for s in segs] == ["2011", "2012", "2013"]
        assert segs[1] == ("2012", t2012, T0)

    def test_clusters(self):
        cl = nickname_clusters([("a", "SilkWatcher1"), ("b", "SilkWatcher22"), ("c", "Unrelated")])
        assert cl == [{"members": ["a", "b"], "nicknames": ["SilkWatcher1", "SilkWatcher22"],
                       "common": "SilkWatcher"}]

    def test_empty_range(self):
        archive = static_archive(ring_relays(10), hours=48)
        report = detect(archive, ONION, T0 + DAY, T0 + DAY)
        assert report.findings == [] and report.timeline.entries == []
        assert report.exit_status() == 0

    def test_deterministic_json(self):
        archive = static_archive(ring_relays(30), hours=20 * 24)
        a = detect(archive, ONION, T0, T0 + 20 * DAY).dumps()
        b = detect(archive, ONION, T0, T0 + 20 * DAY).dumps()
        assert a == b
        doc = json.loads(a)
        assert list(doc)[:4] == ["onion", "range", "config", "segments"]
        assert doc["summary"]["periods"] == 20

    def test_text_table(self):
        archive = static_archive(ring_relays(30), hours=5 * 24)
        text = detect(archive, ONION, T0, T0 + 5 * DAY).to_text()
        assert ONION.text in text and "severity" in text
