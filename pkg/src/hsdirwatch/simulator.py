"""
Hour-by-hour synthetic Tor directory: honest relay churn, authority flag
assignment, hidden-service descriptor placement, attacks with ground-truth
labels, and client requests.

Everything random flows from ``SimConfig.seed`` through one numpy Generator,
so a run is reproducible byte for byte.
"""

import json
import logging
import statistics
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .attacks import grind_width, random_fingerprint, sample_grind, shadow_takeover_plan
from .clients import ClientPopulation, RequestGenerator, RequestModel, write_request_log
from .consensus import HOUR, ConsensusArchive, ConsensusSnapshot, RelayEntry, write_archive
from .errors import ConfigError, InsufficientRing
from .protocol import (
    REPLICAS,
    OnionAddress,
    descriptor_id,
    fp_to_hex,
    onion_address_from_pubkey,
    period_start,
    responsible_hsdirs,
    time_period,
)

log = logging.getLogger(__name__)

DEFAULT_START = 1356998400  # 2013-01-01 00:00 UTC
STRATEGIES = ("GRIND", "SHADOW", "GUARD_AND_HSDIR")
_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class HiddenService:
    onion: OnionAddress
    publish_offset: int = 0  # hours after simulation start

    def to_json(self):
        return {"onion": self.onion.text, "publish_offset": self.publish_offset}


@dataclass
class AttackerSpec:
    strategy: str = "GRIND"
    ip_count: int = 2
    relays_per_ip: int = 2
    target_onion: object = None  # defaults to the first hidden service
    grind_width: float = 1e-5  # fraction of the average ring gap
    guard_count: int = 0
    start_hour: int = 0
    nickname: str = "TrackerNode"
    bandwidth: int = 5000


@dataclass
class SimConfig:
    seed: int
    duration: int = 14 * 24
    honest_relays: int = 200
    hourly_churn: float = 0.0
    hsdir_uptime_requirement: int = 25 * HOUR
    guard_uptime_requirement: int = 8 * 24 * HOUR
    max_relays_per_ip: int = 2
    fingerprint_change_probability: float = 0.1
    initial_uptime_hours: int = 0
    hidden_services: list = field(default_factory=list)
    random_services: int = 0
    attacker: object = None
    client_population: int = 0
    request_model: RequestModel = field(default_factory=RequestModel)
    start_time: int = DEFAULT_START

    def __post_init__(self):
        self.hidden_services = [
            s if isinstance(s, HiddenService) else _service_from(s) for s in self.hidden_services
        ]
        if isinstance(self.attacker, dict):
            self.attacker = AttackerSpec(**self.attacker)
        if isinstance(self.request_model, dict):
            self.request_model = RequestModel(**self.request_model)
        self.validate()

    def validate(self):
        p = {}
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            p["seed"] = "must be a 64-bit unsigned integer"
        if self.duration < 48:
            p["duration"] = "must be at least 48 hours"
        if self.honest_relays < 0:
            p["honest_relays"] = "must be non-negative"
        for name in ("hourly_churn", "fingerprint_change_probability"):
            if not 0 <= getattr(self, name) <= 1:
                p[name] = "must be a probability"
        if self.hsdir_uptime_requirement < 0 or self.guard_uptime_requirement < 0:
            p["hsdir_uptime_requirement"] = "must be non-negative"
        if self.max_relays_per_ip < 1:
            p["max_relays_per_ip"] = "must be at least 1"
        if self.initial_uptime_hours < 0:
            p["initial_uptime_hours"] = "must be non-negative"
        if self.random_services < 0:
            p["random_services"] = "must be non-negative"
        if self.client_population < 0:
            p["client_population"] = "must be non-negative"
        rm = self.request_model
        if not 0 <= rm.nonexistent_fraction <= 1:
            p["request_model.nonexistent_fraction"] = "must be a probability"
        if rm.zipf_exponent < 0 or rm.rate < 0:
            p["request_model"] = "exponent and rate must be non-negative"
        a = self.attacker
        if a is not None:
            if a.strategy not in STRATEGIES:
                p["attacker.strategy"] = f"must be one of {', '.join(STRATEGIES)}"
            if a.ip_count < 1:
                p["attacker.ip_count"] = "must be at least 1"
            if a.relays_per_ip < 1:
                p["attacker.relays_per_ip"] = "must be at least 1"
            if not 0 < a.grind_width <= 1:
                p["attacker.grind_width"] = "must be in (0, 1]"
            if a.guard_count < 0:
                p["attacker.guard_count"] = "must be non-negative"
            if a.strategy == "GUARD_AND_HSDIR" and a.guard_count < 1:
                p["attacker.guard_count"] = "GUARD_AND_HSDIR needs at least one guard"
            if a.strategy != "SHADOW" and a.target_onion is None and not self.hidden_services:
                p["attacker.target_onion"] = "no target and no hidden services"
            if not 1 <= len(a.nickname) <= 16 or not a.nickname.isalnum():
                p["attacker.nickname"] = "1-16 alphanumeric characters"
        if p:
            raise ConfigError(p)

    @classmethod
    def from_mapping(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError({k: "unknown setting" for k in unknown})
        if "seed" not in data:
            raise ConfigError({"seed": "required"})
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError({"config": str(exc)}) from exc

    def to_json(self):
        a = self.attacker
        return {
            "seed": self.seed, "duration": self.duration, "honest_relays": self.honest_relays,
            "hourly_churn": self.hourly_churn,
            "hsdir_uptime_requirement": self.hsdir_uptime_requirement,
            "guard_uptime_requirement": self.guard_uptime_requirement,
            "max_relays_per_ip": self.max_relays_per_ip,
            "fingerprint_change_probability": self.fingerprint_change_probability,
            "initial_uptime_hours": self.initial_uptime_hours,
            "hidden_services": [s.to_json() for s in self.hidden_services],
            "random_services": self.random_services,
            "attacker": None if a is None else {
                "strategy": a.strategy, "ip_count": a.ip_count, "relays_per_ip": a.relays_per_ip,
                "target_onion": None if a.target_onion is None else str(a.target_onion),
                "grind_width": a.grind_width, "guard_count": a.guard_count,
                "start_hour": a.start_hour, "nickname": a.nickname, "bandwidth": a.bandwidth,
            },
            "client_population": self.client_population,
            "request_model": {"zipf_exponent": self.request_model.zipf_exponent,
                              "nonexistent_fraction": self.request_model.nonexistent_fraction,
                              "rate": self.request_model.rate},
            "start_time": self.start_time,
        }


def _service_from(obj):
    if isinstance(obj, str):
        return HiddenService(OnionAddress.from_text(obj))
    if isinstance(obj, (list, tuple)):
        return HiddenService(OnionAddress.from_text(obj[0]), int(obj[1]))
    return HiddenService(OnionAddress.from_text(obj["onion"]), int(obj.get("publish_offset", 0)))


def load_config(path):
    """SimConfig from a .toml or .json file."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError({"file": f"invalid TOML: {exc}"}) from exc
    else:
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError({"file": f"invalid JSON: {exc}"}) from exc
    if not isinstance(data, dict):
        raise ConfigError({"file": "top level must be a table/object"})
    return data


# ---------------------------------------------------------------- world

@dataclass
class RelayState:
    fingerprint: int
    nickname: str
    ip: str
    port: int
    bandwidth: int
    running: bool = True
    up_since: int = 0  # hour the current continuous session began
    attacker: bool = False

    def uptime(self, hour):
        return (hour - self.up_since) * HOUR if self.running else 0


def assign_flags(relays, hour, hsdir_uptime=25 * HOUR, guard_uptime=8 * 24 * HOUR,
                 max_per_ip=2):
    """What the authorities publish for ``hour``.

    Per IP only the ``max_per_ip`` highest-bandwidth running relays enter the
    consensus (ties to the lower fingerprint). Flags follow each relay's real
    continuous uptime, including time spent as a hidden shadow relay. Guard
    additionally needs bandwidth at or above the median of running relays.
    """
    running = [r for r in relays if r.running]
    if not running:
        return []
    median_bw = statistics.median(r.bandwidth for r in running)
    by_ip = defaultdict(list)
    for r in running:
        by_ip[r.ip].append(r)
    entries = []
    for ip in sorted(by_ip):
        chosen = sorted(by_ip[ip], key=lambda r: (-r.bandwidth, r.fingerprint))[:max_per_ip]
        for r in chosen:
            up = r.uptime(hour)
            flags = {"Running", "Valid"}
            if up >= hsdir_uptime:
                flags.add("HSDir")
            if up >= guard_uptime and r.bandwidth >= median_bw:
                flags.add("Guard")
            entries.append(RelayEntry(r.fingerprint, r.nickname, r.ip, r.port, r.bandwidth,
                                      frozenset(flags)))
    entries.sort(key=lambda e: e.fingerprint)
    return entries


@dataclass
class GroundTruth:
    seed: int
    start_time: int
    duration: int
    services: list
    attacker: object  # dict or None
    attacker_hours: dict  # hour -> sorted attacker fingerprints running
    placements: list
    relay_sessions: list
    requests: dict

    def attacker_identities(self):
        if not self.attacker:
            return set()
        return {tuple(i) for i in self.attacker["identities"]}

    def attacker_fingerprints(self):
        return {fp for fps in self.attacker_hours.values() for fp in fps}

    def to_json(self):
        return {
            "seed": self.seed,
            "start_time": self.start_time,
            "duration": self.duration,
            "services": self.services,
            "attacker": self.attacker,
            "attacker_hours": [[h, [fp_to_hex(f) for f in fps]]
                               for h, fps in sorted(self.attacker_hours.items())],
            "placements": self.placements,
            "relay_sessions": self.relay_sessions,
            "requests": self.requests,
        }


@dataclass
class SimOutput:
    config: SimConfig
    archive: ConsensusArchive
    ground_truth: GroundTruth
    request_log: list
    deanon_events: list

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_archive(self.archive, out / "archive.jsonl")
        with open(out / "requests.csv", "w", encoding="utf-8", newline="") as fh:
            write_request_log(self.request_log, fh)
        truth = self.ground_truth.to_json()
        truth["deanon_events"] = [e.to_json() for e in self.deanon_events]
        truth["config"] = self.config.to_json()
        (out / "ground_truth.json").write_text(json.dumps(truth, indent=2) + "\n")
        (out / "onions.txt").write_text("".join(s["onion"] + "\n" for s in truth["services"]))
        return out


class _World:
    def __init__(self, config, rng):
        self.config = config
        self.rng = rng
        self.relays = []
        self.sessions = []  # dicts; "end_hour" None while open
        self._open = {}  # id(relay) -> session dict
        self.used_fps = set()
        self.used_ips = set()

    def new_fp(self):
        while True:
            fp = random_fingerprint(self.rng)
            if fp not in self.used_fps:
                self.used_fps.add(fp)
                return fp

    def honest_ip(self):
        while True:
            a, b, c = (int(x) for x in self.rng.integers(0, 256, size=3))
            ip = f"10.{a}.{b}.{c}"
            if ip not in self.used_ips:
                self.used_ips.add(ip)
                return ip

    def nickname(self):
        n = int(self.rng.integers(8, 13))
        return "".join(_LETTERS[int(i)] for i in self.rng.integers(0, 26, size=n))

    def start(self, relay, hour):
        relay.running = True
        relay.up_since = hour
        s = {"fingerprint": relay.fingerprint, "nickname": relay.nickname, "ip": relay.ip,
             "port": relay.port, "bandwidth": relay.bandwidth, "start_hour": hour,
             "end_hour": None, "attacker": relay.attacker}
        self.sessions.append(s)
        self._open[id(relay)] = s

    def stop(self, relay, hour):
        relay.running = False
        s = self._open.pop(id(relay), None)
        if s is not None:
            s["end_hour"] = hour

    def register(self, relay):
        """Known to the world but not yet running."""
        relay.running = False
        self.relays.append(relay)

    def add(self, relay, hour, up_since=None):
        self.relays.append(relay)
        self.start(relay, hour)
        if up_since is not None:
            relay.up_since = up_since
            self._open[id(relay)]["start_hour"] = up_since


class _Grinder:
    """Targets both replicas of every upcoming period of one onion.

    Each (ip, port) identity restarts with a freshly ground fingerprint 25
    hours before the upload it targets, the minimum that still yields the
    HSDir flag at upload time.
    """

    def __init__(self, world, spec, target, ips, port_base=9001):
        cfg = world.config
        self.world = world
        self.spec = spec
        self.target = target
        self.lead = -(-cfg.hsdir_uptime_requirement // HOUR)
        n_ids = spec.ip_count * spec.relays_per_ip
        self.identities = [(ips[j % spec.ip_count], port_base + j // spec.ip_count)
                           for j in range(n_ids)]
        self.replicas = REPLICAS if n_ids >= 4 else (0,)
        self.relays = {}  # identity -> RelayState
        self.busy_until = {ident: -1 for ident in self.identities}
        self.plan = defaultdict(list)  # restart hour -> [(identity, period, replica, upload_hour)]
        self.targets = []
        self._schedule()

    def _schedule(self):
        cfg = self.world.config
        k = 0
        first = max(self.spec.start_hour + self.lead, 0)
        p = time_period(cfg.start_time + first * HOUR, self.target)
        while True:
            upload = period_start(p, self.target)
            upload_hour = (upload - cfg.start_time) // HOUR
            if upload_hour >= cfg.duration:
                break
            restart = upload_hour - self.lead
            if upload_hour >= first and restart >= self.spec.start_hour:
                n = len(self.identities)
                for r in self.replicas:
                    for i in range(n):
                        ident = self.identities[(k * len(self.replicas) + r + i) % n]
                        if self.busy_until[ident] < restart:
                            self.busy_until[ident] = upload_hour
                            self.plan[restart].append((ident, p, r, upload_hour))
                            break
                k += 1
            p += 1

    def act(self, hour, ring_size):
        world = self.world
        for ident, period, replica, upload_hour in self.plan.get(hour, ()):
            desc = descriptor_id(self.target, period, replica)
            avg = (1 << 160) // max(ring_size, 1)
            width = grind_width(avg, self.spec.grind_width)
            fp, attempts = sample_grind(desc.int, width, world.rng)
            world.used_fps.add(fp)
            old = self.relays.get(ident)
            if old is not None and old.running:
                world.stop(old, hour)
            j = self.identities.index(ident)
            relay = RelayState(fp, f"{self.spec.nickname}{j}", ident[0], ident[1],
                               self.spec.bandwidth, attacker=True)
            self.relays[ident] = relay
            world.add(relay, hour)
            self.targets.append({
                "period": period, "replica": replica, "desc_id": desc.text,
                "fingerprint": fp_to_hex(fp), "identity": [ident[0], ident[1]],
                "start_hour": hour, "upload_hour": upload_hour, "attempts": attempts,
                "width": str(width),
            })


def _attacker_ips(n, base):
    return [f"{base}.{i // 256}.{i % 256}" for i in range(n)]


def run_simulation(config):
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    world = _World(cfg, rng)

    # honest relays; optional pre-existing uptime so flags exist from hour 0
    for _ in range(cfg.honest_relays):
        bw = int(rng.lognormal(5.0, 1.0)) + 1
        relay = RelayState(world.new_fp(), world.nickname(), world.honest_ip(), 9001, bw)
        pre = int(rng.integers(0, cfg.initial_uptime_hours + 1)) if cfg.initial_uptime_hours else 0
        world.add(relay, 0, up_since=-pre)
    honest = list(world.relays)

    services = list(cfg.hidden_services)
    for _ in range(cfg.random_services):
        key = rng.bytes(140)  # stand-in for a DER public key
        services.append(HiddenService(onion_address_from_pubkey(key)))

    spec = cfg.attacker
    grinder = None
    shadow = None
    attacker_guards = []
    attacker_info = None
    if spec is not None:
        target = None
        if spec.strategy != "SHADOW":
            target = (OnionAddress.from_text(str(spec.target_onion)) if spec.target_onion
                      else services[0].onion)
        ips = _attacker_ips(spec.ip_count, "198.51")
        attacker_info = {"strategy": spec.strategy, "nickname": spec.nickname,
                         "target_onion": target.text if target else None,
                         "identities": [], "targets": [], "guards": [],
                         "shadow_schedule": []}
        if spec.strategy in ("GRIND", "GUARD_AND_HSDIR"):
            grinder = _Grinder(world, spec, target, ips)
            attacker_info["identities"] = [list(i) for i in grinder.identities]
        if spec.strategy == "SHADOW":
            shadow = _start_shadow(world, spec, ips)
            attacker_info["identities"] = [[r.ip, r.port] for row in shadow["relays"] for r in row]
            attacker_info["shadow_schedule"] = shadow["schedule_json"]
        if spec.guard_count:
            gips = _attacker_ips(spec.guard_count, "203.0")
            for i, ip in enumerate(gips):
                relay = RelayState(world.new_fp(), f"{spec.nickname}G{i}", ip, 443,
                                   max(spec.bandwidth, 1), attacker=True)
                if spec.start_hour <= 0:
                    world.add(relay, 0, up_since=-cfg.initial_uptime_hours)
                else:
                    world.register(relay)
                attacker_guards.append(relay)
            attacker_info["guards"] = [fp_to_hex(r.fingerprint) for r in attacker_guards]

    published_at = {s.onion: s.publish_offset for s in services}
    placements = []
    placement_index = {}
    snapshots = []
    attacker_hours = {}
    population = ClientPopulation(cfg.client_population, rng) if cfg.client_population else None
    requests = (RequestGenerator(cfg.request_model, [s.onion for s in services], population,
                                 rng, cfg.start_time) if population else None)
    last_ring = cfg.honest_relays
    churn = cfg.hourly_churn

    for hour in range(cfg.duration):
        t = cfg.start_time + hour * HOUR
        if hour > 0 and churn > 0:
            draws = rng.random(len(honest))
            renew = rng.random(len(honest))
            for relay, u, v in zip(honest, draws, renew):
                if u >= churn:
                    continue
                if relay.running:
                    world.stop(relay, hour)
                else:
                    if v < cfg.fingerprint_change_probability:
                        relay.fingerprint = world.new_fp()
                    world.start(relay, hour)
        for g in attacker_guards:
            if not g.running and hour == spec.start_hour:
                world.start(g, hour)
        if grinder is not None:
            grinder.act(hour, last_ring)
        if shadow is not None:
            _shadow_act(world, shadow, hour)

        entries = assign_flags(world.relays, hour, cfg.hsdir_uptime_requirement,
                               cfg.guard_uptime_requirement, cfg.max_relays_per_ip)
        snap = ConsensusSnapshot(t, tuple(entries))
        snapshots.append(snap)
        ring = snap.hsdir_ring()
        last_ring = len(ring)
        running_attackers = sorted(r.fingerprint for r in world.relays
                                   if r.attacker and r.running)
        if running_attackers:
            attacker_hours[hour] = running_attackers

        for svc in services:
            if hour < published_at[svc.onion]:
                continue
            for period in _periods_starting(svc.onion, t, t + HOUR):
                upload = period_start(period, svc.onion)
                for replica in REPLICAS:
                    desc = descriptor_id(svc.onion, period, replica)
                    try:
                        fps = responsible_hsdirs(desc, ring)
                    except InsufficientRing:
                        fps = []
                    placement_index[(svc.onion, period, replica)] = fps
                    placements.append({
                        "onion": svc.onion.text, "period": period, "replica": replica,
                        "upload_time": upload, "desc_id": desc.text,
                        "hsdirs": [fp_to_hex(f) for f in fps],
                    })

        if requests is not None:
            published = [s.onion for s in services if hour >= published_at[s.onion]]
            guard_pool = [e.fingerprint for e in entries if "Guard" in e.flags]
            atk_hsdirs = frozenset(f for f in running_attackers if f in ring)
            atk_guards = frozenset(g.fingerprint for g in attacker_guards)

            def lookup(service, period, replica, _ring=ring):
                fps = placement_index.get((service, period, replica))
                if fps is None:
                    try:
                        fps = responsible_hsdirs(descriptor_id(service, period, replica), _ring)
                    except InsufficientRing:
                        fps = []
                    placement_index[(service, period, replica)] = fps
                return fps

            requests.run_hour(hour, published, guard_pool, lookup, atk_hsdirs, atk_guards)

    for s in world.sessions:
        if s["end_hour"] is None:
            s["end_hour"] = cfg.duration
    sessions = [dict(s, fingerprint=fp_to_hex(s["fingerprint"])) for s in world.sessions]
    if attacker_info is not None and grinder is not None:
        attacker_info["targets"] = grinder.targets
    truth = GroundTruth(
        cfg.seed, cfg.start_time, cfg.duration, [s.to_json() for s in services],
        attacker_info, attacker_hours, placements, sessions,
        requests.tally.to_json() if requests else {"total": 0, "existing": 0,
                                                   "nonexistent": 0, "by_onion": {}},
    )
    log.debug("simulated %d hours, %d relay sessions", cfg.duration, len(sessions))
    return SimOutput(cfg, ConsensusArchive(snapshots), truth,
                     requests.rows if requests else [],
                     requests.events if requests else [])


def _periods_starting(onion, lo, hi):
    p = time_period(lo, onion)
    if period_start(p, onion) < lo:
        p += 1
    while period_start(p, onion) < hi:
        yield p
        p += 1


def _start_shadow(world, spec, ips):
    """All n*m relays start together; the rotation begins once they hold HSDir."""
    cfg = world.config
    plan = shadow_takeover_plan(spec.ip_count, spec.relays_per_ip, 24, cfg.max_relays_per_ip)
    relays = []
    for i, ip in enumerate(ips):
        row = []
        for j in range(spec.relays_per_ip):
            # strictly decreasing bandwidth fixes which relays the authorities list
            relay = RelayState(world.new_fp(), f"{spec.nickname}{i}x{j}", ip, 9001 + j,
                               spec.bandwidth + spec.relays_per_ip - j, attacker=True)
            if spec.start_hour <= 0:
                world.add(relay, 0)
            else:
                world.register(relay)
            row.append(relay)
        relays.append(row)
    lead = -(-cfg.hsdir_uptime_requirement // HOUR)
    begin = spec.start_hour + lead
    schedule = {begin + rot.offset: rot for rot in plan.schedule}
    schedule_json = [{"hour": h, "deactivate": [fp_to_hex(relays[i][j].fingerprint)
                                                for i, j in rot.deactivate],
                      "promote": [fp_to_hex(relays[i][j].fingerprint) for i, j in rot.promote]}
                     for h, rot in sorted(schedule.items())]
    return {"plan": plan, "relays": relays, "schedule": schedule, "begin": begin,
            "schedule_json": schedule_json}


def _shadow_act(world, shadow, hour):
    spec = world.config.attacker
    if hour == spec.start_hour and spec.start_hour > 0:
        for row in shadow["relays"]:
            for relay in row:
                world.start(relay, hour)
    rot = shadow["schedule"].get(hour)
    if rot is not None:
        for i, j in rot.deactivate:
            world.stop(shadow["relays"][i][j], hour)
