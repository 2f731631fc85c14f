"""
Onion address, descriptor ID and HSDir ring arithmetic for v2 hidden services.

Fingerprints and descriptor IDs are 160-bit values. Ring math works on plain
Python ints so that distances near 2**160 stay exact.
"""

import base64
import bisect
import hashlib
import struct
from dataclasses import dataclass

from .errors import InsufficientRing, InvalidArgument

RING_BITS = 160
RING_SIZE = 1 << RING_BITS
RING_MASK = RING_SIZE - 1

PERIOD_SECONDS = 24 * 60 * 60
REPLICAS = (0, 1)
HSDIRS_PER_REPLICA = 3


def b32encode(data):
    return base64.b32encode(data).decode("ascii").rstrip("=").lower()


def b32decode(text, nbytes):
    text = text.strip().lower()
    if text.endswith(".onion"):
        text = text[: -len(".onion")]
    pad = "=" * (-len(text) % 8)
    try:
        data = base64.b32decode(text.upper() + pad)
    except (ValueError, base64.binascii.Error) as exc:
        raise InvalidArgument(f"not base32: {text!r}") from exc
    if len(data) != nbytes:
        raise InvalidArgument(f"expected {nbytes} bytes, got {len(data)} from {text!r}")
    return data


def int_to_bytes(value):
    return (value & RING_MASK).to_bytes(20, "big")


def bytes_to_int(data):
    return int.from_bytes(data, "big")


def fp_to_hex(fp):
    return format(fp, "040X")


def fp_from_hex(text):
    text = text.strip().lstrip("$")
    if len(text) != 40:
        raise InvalidArgument(f"fingerprint must be 40 hex chars: {text!r}")
    try:
        return int(text, 16)
    except ValueError as exc:
        raise InvalidArgument(f"fingerprint is not hex: {text!r}") from exc


@dataclass(frozen=True, order=True)
class OnionAddress:
    id_bytes: bytes

    def __post_init__(self):
        if len(self.id_bytes) != 10:
            raise InvalidArgument("onion service id must be 10 bytes")

    @property
    def text(self):
        return b32encode(self.id_bytes)

    @classmethod
    def from_text(cls, text):
        return cls(b32decode(text, 10))

    def __str__(self):
        return self.text


@dataclass(frozen=True, order=True)
class DescriptorId:
    value: bytes

    def __post_init__(self):
        if len(self.value) != 20:
            raise InvalidArgument("descriptor id must be 20 bytes")

    @property
    def text(self):
        return b32encode(self.value)

    @property
    def int(self):
        return bytes_to_int(self.value)

    @classmethod
    def from_text(cls, text):
        return cls(b32decode(text, 20))

    @classmethod
    def from_int(cls, value):
        return cls(int_to_bytes(value))

    def __str__(self):
        return self.text


def onion_address_from_pubkey(pubkey_der):
    """Service id = first 10 bytes of SHA-1 over the DER public key."""
    if not pubkey_der:
        raise InvalidArgument("public key must be non-empty")
    return OnionAddress(hashlib.sha1(bytes(pubkey_der)).digest()[:10])


def _service_bytes(service_id):
    if isinstance(service_id, OnionAddress):
        return service_id.id_bytes
    if isinstance(service_id, str):
        return OnionAddress.from_text(service_id).id_bytes
    service_id = bytes(service_id)
    if len(service_id) != 10:
        raise InvalidArgument("service id must be 10 bytes")
    return service_id


def period_offset(service_id):
    """Seconds by which this service's periods are shifted earlier."""
    return _service_bytes(service_id)[0] * PERIOD_SECONDS // 256


def time_period(now, service_id):
    if now < 0:
        raise InvalidArgument("time must be non-negative")
    return (int(now) + period_offset(service_id)) // PERIOD_SECONDS


def period_start(period, service_id):
    """First unix second at which ``time_period`` returns ``period``."""
    return period * PERIOD_SECONDS - period_offset(service_id)


def descriptor_id(service_id, period, replica):
    if replica not in REPLICAS:
        raise InvalidArgument(f"replica must be 0 or 1, got {replica!r}")
    if not 0 <= period < 1 << 32:
        raise InvalidArgument(f"period out of 32-bit range: {period}")
    secret = hashlib.sha1(struct.pack(">IB", period, replica)).digest()
    return DescriptorId(hashlib.sha1(_service_bytes(service_id) + secret).digest())


def _as_int(value):
    if isinstance(value, DescriptorId):
        return value.int
    if isinstance(value, (bytes, bytearray)):
        return bytes_to_int(value)
    return int(value)


def ring_distance(desc_id, fp):
    """Clockwise distance from ``desc_id`` to ``fp`` on the 2**160 ring."""
    return (_as_int(fp) - _as_int(desc_id)) & RING_MASK


class HsDirRing:
    """Immutable ascending list of HSDir fingerprints (as ints)."""

    __slots__ = ("fingerprints",)

    def __init__(self, fingerprints=()):
        fps = sorted({_as_int(f) for f in fingerprints})
        if fps and not (0 <= fps[0] and fps[-1] <= RING_MASK):
            raise InvalidArgument("fingerprint outside 160-bit range")
        self.fingerprints = tuple(fps)

    def __len__(self):
        return len(self.fingerprints)

    def __iter__(self):
        return iter(self.fingerprints)

    def __contains__(self, fp):
        i = bisect.bisect_left(self.fingerprints, fp)
        return i < len(self.fingerprints) and self.fingerprints[i] == fp

    def __eq__(self, other):
        return isinstance(other, HsDirRing) and self.fingerprints == other.fingerprints

    def __hash__(self):
        return hash(self.fingerprints)

    def __repr__(self):
        return f"HsDirRing(size={len(self)})"

    def successors(self, desc_id, count=HSDIRS_PER_REPLICA):
        if len(self.fingerprints) < count:
            raise InsufficientRing(
                f"ring has {len(self.fingerprints)} HSDirs, need {count}"
            )
        target = _as_int(desc_id)
        n = len(self.fingerprints)
        if n == count and target in self:
            # an equal fingerprint never counts as following
            raise InsufficientRing(f"ring has only {n - 1} HSDirs distinct from target")
        start = bisect.bisect_right(self.fingerprints, target)
        return [self.fingerprints[(start + i) % n] for i in range(count)]


def responsible_hsdirs(desc_id, ring):
    """The 3 fingerprints strictly following ``desc_id``, walking clockwise."""
    return ring.successors(desc_id, HSDIRS_PER_REPLICA)


def avg_consecutive_distance(ring):
    # consecutive gaps, wraparound included, always sum to 2**160
    if len(ring) == 0:
        raise InvalidArgument("average gap of an empty ring is undefined")
    return RING_SIZE // len(ring)


def ring_gaps(ring):
    fps = ring.fingerprints
    if len(fps) == 1:
        return [RING_SIZE]
    return [(fps[(i + 1) % len(fps)] - fps[i]) % RING_SIZE for i in range(len(fps))]
