"""
Attacker primitives: fingerprint grinding and shadow-relay rotation.
"""

import math
from fractions import Fraction
from dataclasses import dataclass, field

from .errors import GiveUpError, InvalidArgument
from .protocol import RING_MASK, RING_SIZE, HsDirRing, responsible_hsdirs

MAX_GRIND_ATTEMPTS = 10**7


def random_fingerprint(rng):
    """Uniform 160-bit value from a numpy Generator."""
    return int.from_bytes(rng.bytes(20), "big")


def grind_fingerprint(target, width, rng, max_attempts=MAX_GRIND_ATTEMPTS):
    """Rejection-sample fingerprints until one lands in (target, target + width].

    Returns ``(fingerprint, attempts)``. Expected attempts are 2**160 / width.
    """
    width = int(width)
    if width < 1:
        raise InvalidArgument("grind width must be at least 1")
    target = int(target)
    for attempt in range(1, max_attempts + 1):
        fp = random_fingerprint(rng)
        if 0 < (fp - target) & RING_MASK <= width:
            return fp, attempt
    raise GiveUpError(f"no fingerprint within width after {max_attempts} attempts")


def sample_grind(target, width, rng):
    """Same output distribution as ``grind_fingerprint`` without the loop.

    The number of attempts is geometric with success probability
    width / 2**160 and the accepted value is uniform over the window, so both
    are drawn directly. Used when the expected attempt count is too large to
    enumerate.
    """
    width = min(int(width), RING_SIZE)
    if width < 1:
        raise InvalidArgument("grind width must be at least 1")
    attempts = int(rng.geometric(width / RING_SIZE))
    offset = 1 + int.from_bytes(rng.bytes(32), "big") % width
    return (int(target) + offset) & RING_MASK, attempts


@dataclass
class Rotation:
    offset: int  # hours after the plan starts
    deactivate: list  # (ip_index, relay_index)
    promote: list


@dataclass
class ShadowPlan:
    n_ips: int
    m_per_ip: int
    period: int
    max_per_ip: int
    schedule: list
    groups: list = field(default_factory=list)  # relay indices active per step
    coverage: float = None

    def active_at_step(self, step):
        """(ip_index, relay_index) pairs in the consensus during ``step``."""
        return [(ip, r) for ip in range(self.n_ips) for r in self.groups[step]]

    @property
    def steps(self):
        return len(self.groups)


def shadow_takeover_plan(n_ips, m_per_ip, period=24, max_per_ip=2, honest_ring=None,
                         attacker_fps=None):
    """Rotate active relays so every shadow relay serves within ``period`` hours.

    Relays on each IP are taken in groups of ``max_per_ip``; at each rotation
    the current group goes offline and the next group is promoted. With
    ``honest_ring`` and ``attacker_fps`` (``[ip][relay]`` fingerprints) the
    fraction of descriptor space covered at some point is computed exactly.
    """
    if n_ips < 1 or m_per_ip < 1:
        raise InvalidArgument("need at least one IP and one relay per IP")
    if period < 1:
        raise InvalidArgument("period must be at least one hour")
    groups = [list(range(g, min(g + max_per_ip, m_per_ip)))
              for g in range(0, m_per_ip, max_per_ip)]
    spacing = max(1, period // len(groups))
    schedule = []
    for step in range(1, len(groups)):
        schedule.append(Rotation(
            step * spacing,
            [(ip, r) for ip in range(n_ips) for r in groups[step - 1]],
            [(ip, r) for ip in range(n_ips) for r in groups[step]],
        ))
    plan = ShadowPlan(n_ips, m_per_ip, period, max_per_ip, schedule, groups)
    if honest_ring is not None and attacker_fps is not None:
        plan.coverage = takeover_coverage(plan, honest_ring, attacker_fps)
    return plan


def _arc_union(arcs):
    """Total length of a union of half-open arcs [start, start+length) on the ring."""
    pieces = []
    for start, length in arcs:
        if length >= RING_SIZE:
            return RING_SIZE
        end = start + length
        if end <= RING_SIZE:
            pieces.append((start, end))
        else:
            pieces.append((start, RING_SIZE))
            pieces.append((0, end - RING_SIZE))
    pieces.sort()
    total = 0
    cur_s = cur_e = None
    for s, e in pieces:
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def takeover_coverage(plan, honest_ring, attacker_fps):
    """Fraction of descriptor IDs for which an attacker relay was responsible
    during at least one step of the plan."""
    arcs = []
    honest = list(honest_ring)
    for step in range(plan.steps):
        active = [attacker_fps[ip][r] for ip, r in plan.active_at_step(step)]
        ring = HsDirRing(honest + active)
        fps = ring.fingerprints
        index = {fp: i for i, fp in enumerate(fps)}
        n = len(fps)
        for fp in active:
            i = index[fp]
            back = min(3, n)
            pred = fps[(i - back) % n]
            # descriptors in [pred3, fp) have fp among their 3 successors
            length = (fp - pred) % RING_SIZE if n > 3 else RING_SIZE
            arcs.append((pred, length))
    return _arc_union(arcs) / RING_SIZE


def expected_takeover_coverage(n_ips, m_per_ip, honest_hsdirs, max_per_ip=2):
    """Closed-form estimate: every attacker relay covers about 3/N of the ring,
    arcs overlapping independently."""
    ring = honest_hsdirs + n_ips * min(max_per_ip, m_per_ip)
    share = min(1.0, 3 / ring)
    return 1 - (1 - share) ** (n_ips * m_per_ip)


def expected_grind_attempts(width):
    return RING_SIZE / width


def grind_width(avg_gap, fraction):
    """Window of ``fraction`` times the average ring gap, exact for decimal fractions."""
    return max(1, math.floor(avg_gap * Fraction(str(fraction))))
