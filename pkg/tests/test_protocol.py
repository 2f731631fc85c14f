import random
import re

import pytest
from hypothesis import given, strategies as st

from hsdirwatch.errors import InsufficientRing, InvalidArgument
from hsdirwatch.protocol import (
    RING_SIZE,
    DescriptorId,
    HsDirRing,
    OnionAddress,
    avg_consecutive_distance,
    b32decode,
    b32encode,
    descriptor_id,
    onion_address_from_pubkey,
    responsible_hsdirs,
    ring_distance,
    ring_gaps,
    time_period,
)

from .oracles import brute_force_responsible


def padded(prefix_byte):
    return prefix_byte << 152


# Frozen with coreutils sha1sum/base32 and openssl sha1.
EMPTY_SHA1_ONION = "3i42h3s6nnfq2msv"
ZERO_ID_P0_R0 = "eyyjafzg2ibh3edc5m7zlesgr53ynspq"
ZERO_ID_P0_R1 = "3elj24d7fnvb7egyaclg4s53pwfkwveo"
ZERO_ID_P1_R0 = "tkthmgvvuane7cpn5zs6irdzsc7kreng"


class TestOnionAddress:
    def test_empty_sha1_vector(self):
        # the op rejects empty input, so check the encoding on the digest prefix
        digest_prefix = bytes.fromhex("da39a3ee5e6b4b0d3255")
        assert OnionAddress(digest_prefix).text == EMPTY_SHA1_ONION

    def test_empty_input_rejected(self):
        with pytest.raises(InvalidArgument):
            onion_address_from_pubkey(b"")

    def test_random_input_shape(self):
        data = random.Random(7).randbytes(1024)
        text = onion_address_from_pubkey(data).text
        assert re.fullmatch(r"[a-z2-7]{16}", text)

    def test_one_byte_difference(self):
        a = onion_address_from_pubkey(b"hsdirwatch-key-A")
        b = onion_address_from_pubkey(b"hsdirwatch-key-B")
        assert a.text == "355dpzjnfpf6sz5a"
        assert b.text == "tlsxc7qixk27em26"
        assert a != b

    def test_text_roundtrip(self):
        onion = OnionAddress.from_text("silkroadvb5piz3r.onion")
        assert onion.text == "silkroadvb5piz3r"
        assert OnionAddress.from_text(onion.text) == onion

    @given(st.binary(min_size=10, max_size=10))
    def test_base32_roundtrip_10(self, data):
        text = b32encode(data)
        assert len(text) == 16
        assert b32decode(text, 10) == data

    @given(st.binary(min_size=20, max_size=20))
    def test_base32_roundtrip_20(self, data):
        text = DescriptorId(data).text
        assert len(text) == 32
        assert DescriptorId.from_text(text).value == data

    def test_bad_base32(self):
        with pytest.raises(InvalidArgument):
            OnionAddress.from_text("not-an-onion!!!!")
        with pytest.raises(InvalidArgument):
            OnionAddress.from_text("abcd")


class TestTimePeriod:
    @pytest.mark.parametrize(
        "now, first_byte, expected",
        [(0, 0, 0), (86400, 0, 1), (0, 255, 0), (337, 255, 0), (338, 255, 1)],
    )
    def test_examples(self, now, first_byte, expected):
        service = bytes([first_byte]) + bytes(9)
        assert time_period(now, service) == expected

    def test_negative_rejected(self):
        with pytest.raises(InvalidArgument):
            time_period(-1, bytes(10))


class TestDescriptorId:
    def test_two_stage_sha1_oracle(self):
        zero = bytes(10)
        assert descriptor_id(zero, 0, 0).text == ZERO_ID_P0_R0
        assert descriptor_id(zero, 0, 1).text == ZERO_ID_P0_R1
        assert descriptor_id(zero, 1, 0).text == ZERO_ID_P1_R0

    def test_replica_and_period_separation(self):
        zero = bytes(10)
        assert descriptor_id(zero, 0, 0) != descriptor_id(zero, 0, 1)
        assert descriptor_id(zero, 0, 0) != descriptor_id(zero, 1, 0)

    def test_bad_replica(self):
        with pytest.raises(InvalidArgument):
            descriptor_id(bytes(10), 0, 2)

    def test_pure_and_collision_free_over_periods(self):
        service = onion_address_from_pubkey(b"some key")
        ids = {descriptor_id(service, p, 0) for p in range(15000, 25000)}
        assert len(ids) == 10000
        assert descriptor_id(service, 16000, 1) == descriptor_id(service, 16000, 1)


class TestRing:
    ring4 = HsDirRing([padded(0x10), padded(0x20), padded(0x30), padded(0x40)])

    def test_in_range(self):
        got = responsible_hsdirs(padded(0x15), self.ring4)
        assert got == [padded(0x20), padded(0x30), padded(0x40)]

    def test_wraparound(self):
        got = responsible_hsdirs(padded(0x45), self.ring4)
        assert got == [padded(0x10), padded(0x20), padded(0x30)]

    def test_equal_is_not_following(self):
        got = responsible_hsdirs(padded(0x20), self.ring4)
        assert got == [padded(0x30), padded(0x40), padded(0x10)]

    def test_insufficient(self):
        with pytest.raises(InsufficientRing):
            responsible_hsdirs(0, HsDirRing([1, 2]))
        with pytest.raises(InsufficientRing):
            responsible_hsdirs(2, HsDirRing([1, 2, 3]))

    def test_matches_brute_force(self):
        rng = random.Random(1234)
        for _ in range(100):
            fps = [rng.getrandbits(160) for _ in range(10)]
            desc = rng.getrandbits(160)
            if rng.random() < 0.2:
                desc = rng.choice(fps)
            ring = HsDirRing(fps)
            assert responsible_hsdirs(desc, ring) == brute_force_responsible(desc, fps)

    @given(
        st.lists(st.integers(0, RING_SIZE - 1), min_size=3, max_size=30, unique=True),
        st.integers(0, RING_SIZE - 1),
    )
    def test_distances_strictly_increasing(self, fps, desc):
        ring = HsDirRing(fps)
        try:
            got = responsible_hsdirs(desc, ring)
        except InsufficientRing:
            assert len(fps) == 3 and desc in fps
            return
        dists = [ring_distance(desc, f) for f in got]
        assert 0 < dists[0] < dists[1] < dists[2]


class TestDistance:
    def test_identity(self):
        assert ring_distance(12345, 12345) == 0

    def test_wraparound(self):
        assert ring_distance(RING_SIZE - 1, 4) == 5

    def test_random_pairs_match_bigint(self):
        rng = random.Random(99)
        for _ in range(1000):
            d, f = rng.getrandbits(160), rng.getrandbits(160)
            expected = f - d if f >= d else f - d + RING_SIZE
            assert ring_distance(d, f) == expected

    def test_descriptor_id_accepted(self):
        desc = DescriptorId.from_int(RING_SIZE - 1)
        assert ring_distance(desc, 4) == 5


class TestAverageDistance:
    def test_even_spacing(self):
        ring = HsDirRing([0, 2**158, 2**159, 3 * 2**158])
        assert avg_consecutive_distance(ring) == 2**158

    def test_single(self):
        assert avg_consecutive_distance(HsDirRing([5])) == RING_SIZE

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            avg_consecutive_distance(HsDirRing())

    def test_757_gap_sum(self):
        rng = random.Random(757)
        ring = HsDirRing(rng.getrandbits(160) for _ in range(757))
        assert len(ring) == 757
        # explicit gap sum: walk the sorted list and add the wraparound gap
        fps = list(ring)
        total = sum(b - a for a, b in zip(fps, fps[1:])) + (RING_SIZE - fps[-1] + fps[0])
        assert total == RING_SIZE
        assert avg_consecutive_distance(ring) == total // 757

    @given(st.lists(st.integers(0, RING_SIZE - 1), min_size=1, max_size=40, unique=True))
    def test_ring_closure(self, fps):
        assert sum(ring_gaps(HsDirRing(fps))) == RING_SIZE
