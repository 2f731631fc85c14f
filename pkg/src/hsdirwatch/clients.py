"""
Client-side behaviour: descriptor requests, entry guards and the
HSDir + guard deanonymisation experiment.
"""

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument
from .protocol import DescriptorId, descriptor_id, fp_from_hex, fp_to_hex, time_period

HOUR = 3600
DAY_HOURS = 24
GUARDS_PER_CLIENT = 3
GUARD_LIFETIME_DAYS = (30, 60)

# synthetic stand-in for geolocating client addresses
REGIONS = ("north-america", "europe", "asia", "south-america", "africa", "oceania")
REGION_WEIGHTS = (0.30, 0.35, 0.20, 0.08, 0.04, 0.03)

LOG_HEADER = ("hour", "desc_id_base32", "count", "client_id", "guard_fp_hex")


def guard_compromise_probability(total_guards, attacker_guards, set_size=GUARDS_PER_CLIENT):
    """P(at least one attacker guard in a uniformly drawn guard set)."""
    G, a, k = total_guards, attacker_guards, set_size
    if not (0 <= a <= G) or not (0 < k <= G):
        raise InvalidArgument(f"need 0 <= a <= G and 0 < k <= G (G={G}, a={a}, k={k})")
    return float(1 - Fraction(math.comb(G - a, k), math.comb(G, k)))


def expected_deanon_rate(attacker_slots, total_guards, attacker_guards, slots=6):
    """Closed form under uniform slot lookup and uniform per-circuit guard use."""
    return attacker_slots / slots * attacker_guards / total_guards


def zipf_weights(n, exponent):
    ranks = np.arange(1, n + 1, dtype=float)
    w = ranks ** -float(exponent)
    return w / w.sum()


@dataclass(frozen=True)
class RequestRow:
    hour: int
    desc_id: DescriptorId
    count: int
    client_id: int
    guard_fp: object = None

    def csv_row(self):
        return [self.hour, self.desc_id.text, self.count, self.client_id,
                "" if self.guard_fp is None else fp_to_hex(self.guard_fp)]


@dataclass(frozen=True)
class DeanonEvent:
    hour: int
    client_id: int
    client_ip: str
    region: str

    def to_json(self):
        return {"hour": self.hour, "client_id": self.client_id, "client_ip": self.client_ip,
                "region": self.region}


def write_request_log(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(LOG_HEADER)
    for row in rows:
        writer.writerow(row.csv_row())


def read_request_log(fh):
    reader = csv.DictReader(fh)
    missing = set(LOG_HEADER) - set(reader.fieldnames or ())
    if missing:
        raise InvalidArgument(f"request log missing columns: {', '.join(sorted(missing))}")
    rows = []
    for i, rec in enumerate(reader, start=2):
        try:
            guard = rec["guard_fp_hex"].strip()
            rows.append(RequestRow(
                int(rec["hour"]), DescriptorId.from_text(rec["desc_id_base32"]),
                int(rec["count"]), int(rec["client_id"]),
                fp_from_hex(guard) if guard else None,
            ))
        except (ValueError, TypeError) as exc:
            raise InvalidArgument(f"request log line {i}: {exc}") from exc
    return rows


def events_by_region(events):
    return Counter(e.region for e in events)


@dataclass
class Client:
    cid: int
    ip: str
    region: str
    guards: list = field(default_factory=list)  # [fingerprint, expires_hour]


class ClientPopulation:
    """Clients holding three entry guards each.

    A guard expires after a uniform 30-60 day lifetime. When fewer than two
    guards are reachable, or the set has shrunk through expiry, unreachable
    guards are dropped and the set is topped back up from the Guard pool.
    """

    def __init__(self, n, rng):
        self.rng = rng
        regions = rng.choice(len(REGIONS), size=n, p=REGION_WEIGHTS)
        self.clients = [
            Client(i, f"100.{64 + (i >> 16) % 64}.{(i >> 8) & 255}.{i & 255}", REGIONS[r])
            for i, r in enumerate(regions)
        ]

    def __len__(self):
        return len(self.clients)

    def refresh(self, client, hour, pool, pool_set):
        guards = [g for g in client.guards if g[1] > hour]
        reachable = sum(g[0] in pool_set for g in guards)
        if reachable < 2 or len(guards) < GUARDS_PER_CLIENT:
            guards = [g for g in guards if g[0] in pool_set]
            held = {g[0] for g in guards}
            free = len(pool) - len(held)
            while len(guards) < GUARDS_PER_CLIENT and free > 0:
                fp = pool[int(self.rng.integers(len(pool)))]
                if fp in held:
                    continue
                lifetime = int(self.rng.integers(GUARD_LIFETIME_DAYS[0] * DAY_HOURS,
                                                 GUARD_LIFETIME_DAYS[1] * DAY_HOURS + 1))
                guards.append([fp, hour + lifetime])
                held.add(fp)
                free -= 1
        client.guards = guards

    def first_hop(self, client, pool_set, u):
        """Guard for one circuit, uniform over reachable guards; ``u`` in [0, 1)."""
        usable = [g[0] for g in client.guards if g[0] in pool_set]
        if not usable:
            return None
        return usable[int(u * len(usable))]


@dataclass
class RequestModel:
    zipf_exponent: float = 1.0
    nonexistent_fraction: float = 0.8
    rate: float = 1.0  # mean requests per client per hour (Poisson)


@dataclass
class RequestTally:
    total: int = 0
    existing: int = 0
    nonexistent: int = 0
    by_onion: Counter = field(default_factory=Counter)

    def to_json(self):
        return {"total": self.total, "existing": self.existing, "nonexistent": self.nonexistent,
                "by_onion": dict(sorted(self.by_onion.items()))}


class RequestGenerator:
    """Hourly request synthesis shared by the simulator and standalone log generation.

    ``lookup(service, period, replica)`` returns the 3 HSDirs holding a
    descriptor; when given together with attacker sets, a request whose
    lookup hits an attacker HSDir over an attacker guard is a deanon event.
    """

    def __init__(self, model, services, population, rng, start_time):
        self.model = model
        self.services = list(services)
        self.population = population
        self.rng = rng
        self.start_time = start_time
        self.tally = RequestTally()
        self.rows = []
        self.events = []
        self._desc_cache = {}

    def _desc(self, service, period, replica):
        key = (service, period, replica)
        d = self._desc_cache.get(key)
        if d is None:
            d = self._desc_cache[key] = descriptor_id(service, period, replica)
        return d

    def run_hour(self, hour, published, pool=(), lookup=None, attacker_hsdirs=frozenset(),
                 attacker_guards=frozenset()):
        rng = self.rng
        t = self.start_time + hour * HOUR
        pool = list(pool)
        pool_set = frozenset(pool)
        n_clients = len(self.population)
        counts = rng.poisson(self.model.rate, size=n_clients)
        total = int(counts.sum())
        if total == 0:
            return
        who = np.repeat(np.arange(n_clients), counts)
        kind = rng.random(total)
        weights = zipf_weights(len(published), self.model.zipf_exponent) if published else None
        pick = rng.choice(len(published), size=total, p=weights) if published else None
        replica = rng.integers(0, 2, size=total)
        slot = rng.integers(0, 3, size=total)
        guard_u = rng.random(total)
        agg = {}
        refreshed = set()
        for i in range(total):
            existing = kind[i] >= self.model.nonexistent_fraction
            if existing and not published:
                continue
            cid = int(who[i])
            client = self.population.clients[cid]
            if cid not in refreshed and pool:
                self.population.refresh(client, hour, pool, pool_set)
                refreshed.add(cid)
            guard = self.population.first_hop(client, pool_set, guard_u[i]) if pool else None
            if not existing:
                desc = DescriptorId(rng.bytes(20))
                self.tally.nonexistent += 1
            else:
                service = published[int(pick[i])]
                period = time_period(t, service)
                desc = self._desc(service, period, int(replica[i]))
                self.tally.existing += 1
                self.tally.by_onion[service.text] += 1
                if lookup is not None and attacker_hsdirs and guard in attacker_guards:
                    hsdirs = lookup(service, period, int(replica[i]))
                    if hsdirs and hsdirs[int(slot[i])] in attacker_hsdirs:
                        self.events.append(DeanonEvent(hour, cid, client.ip, client.region))
            self.tally.total += 1
            key = (desc.value, cid, guard)
            if key in agg:
                agg[key][1] += 1
            else:
                agg[key] = [desc, 1]
        for (_, cid, guard), (desc, count) in agg.items():
            self.rows.append(RequestRow(hour, desc, count, cid, guard))


def generate_request_log(model, services, hours, clients, seed=0, start_time=0):
    """Request log without a relay world: clients have no guards."""
    if clients < 1:
        raise InvalidArgument("need at least one client")
    rng = np.random.default_rng(seed)
    gen = RequestGenerator(model, services, ClientPopulation(clients, rng), rng, start_time)
    for hour in range(hours):
        gen.run_hour(hour, gen.services)
    return gen.rows, gen.tally


@dataclass
class DeanonResult:
    requests: int
    events: list
    rate: float
    stderr: float
    expected: float

    def by_region(self):
        return events_by_region(self.events)


def simulate_client_deanonymisation(guard_pool, attacker_guards, hsdirs, attacker_hsdirs,
                                    requests=100_000, clients=1000, hours=90 * DAY_HOURS,
                                    seed=0):
    """Requests for one service whose 6 HSDir slots are ``hsdirs`` (replica-major).

    Each request picks a replica and one of its 3 HSDirs uniformly and routes
    through a uniformly chosen guard of the requesting client. Guards rotate
    over ``hours``. ``stderr`` treats clients as clusters, since one client's
    requests share a guard set.
    """
    hsdirs = list(hsdirs)
    if len(hsdirs) != 6:
        raise InvalidArgument("need the 6 responsible HSDirs (2 replicas x 3)")
    rng = np.random.default_rng(seed)
    pool = sorted(guard_pool)
    pool_set = frozenset(pool)
    attacker_guards = frozenset(attacker_guards)
    attacker_hsdirs = frozenset(attacker_hsdirs)
    population = ClientPopulation(clients, rng)
    when = np.sort(rng.integers(0, hours, size=requests))
    who = rng.integers(0, clients, size=requests)
    slot = rng.integers(0, 6, size=requests)
    guard_u = rng.random(requests)
    hits_per_client = np.zeros(clients)
    reqs_per_client = np.zeros(clients)
    events = []
    for i in range(requests):
        client = population.clients[int(who[i])]
        hour = int(when[i])
        population.refresh(client, hour, pool, pool_set)
        guard = population.first_hop(client, pool_set, guard_u[i])
        reqs_per_client[client.cid] += 1
        if hsdirs[int(slot[i])] in attacker_hsdirs and guard in attacker_guards:
            events.append(DeanonEvent(hour, client.cid, client.ip, client.region))
            hits_per_client[client.cid] += 1
    rate = len(events) / requests
    # ratio-estimator standard error with clients as clusters
    resid = hits_per_client - rate * reqs_per_client
    stderr = math.sqrt(float((resid ** 2).sum())) / requests
    expected = expected_deanon_rate(sum(h in attacker_hsdirs for h in hsdirs),
                                    len(pool), len(pool_set & attacker_guards))
    return DeanonResult(requests, events, rate, stderr, expected)
