import pytest
from hypothesis import given, strategies as st

from fedaudit.store import (
    AccessDenied, BlobStore, ContentAddress, Keyring, Reachability, StoreError, TamperDetected,
    Unreachable, UnknownAddress, pack_bundle, unpack_bundle,
)

KEYS = Keyring(b"0123456789abcdef0123456789abcdef")


@given(st.binary(min_size=1, max_size=256))
def test_put_is_content_addressed(data):
    store = BlobStore()
    a = store.put("alice", data)
    assert store.put("bob", data) == a
    assert a == ContentAddress.of(data)
    assert store.providers(a) == {"alice", "bob"}
    assert store.get("carol", a) == data


def test_distinct_blobs_distinct_addresses():
    store = BlobStore()
    assert store.put("a", b"x") != store.put("a", b"y")


def test_empty_and_unknown():
    store = BlobStore()
    with pytest.raises(StoreError):
        store.put("a", b"")
    with pytest.raises(UnknownAddress):
        store.get("a", ContentAddress.of(b"nope"))


def test_corruption_detected():
    store = BlobStore()
    a = store.put("a", b"hello world")
    store.corrupt(a, 3)
    with pytest.raises(TamperDetected):
        store.get("b", a)


def test_unreachable_until_reshared():
    reach = Reachability()
    reach.block("bob", "alice")
    store = BlobStore(reach)
    a = store.put("alice", b"model")
    with pytest.raises(Unreachable):
        store.get("bob", a)
    assert store.get("carol", a) == b"model"
    store.put("carol", b"model")
    assert store.get("bob", a) == b"model"


def test_reachability_self():
    with pytest.raises(ValueError):
        Reachability().block("a", "a")
    assert Reachability({("a", "b")}).reachable("a", "a")


def test_save_load_layout(tmp_path):
    store = BlobStore()
    a = store.put("alice", b"one")
    store.put("bob", b"two")
    store.save(tmp_path)
    assert (tmp_path / f"{a.hex}.blob").read_bytes() == b"one"
    assert (tmp_path / "providers.json").exists()
    back = BlobStore.load(tmp_path)
    assert back.get("x", a) == b"one" and back.providers(a) == {"alice"}


def test_tampered_file_detected_after_load(tmp_path):
    store = BlobStore()
    a = store.put("alice", b"payload")
    store.save(tmp_path)
    path = tmp_path / f"{a.hex}.blob"
    path.write_bytes(b"paylaod")
    with pytest.raises(TamperDetected):
        BlobStore.load(tmp_path).get("bob", a)


@given(st.binary(max_size=200))
def test_envelope_round_trip(data):
    env = KEYS.seal("alice", "bob", data)
    assert KEYS.open("bob", env) == data
    assert KEYS.open("alice", env) == data


def test_third_party_denied():
    env = KEYS.seal("alice", "bob", b"secret")
    with pytest.raises(AccessDenied):
        KEYS.open("eve", env)


def test_self_envelope_rejected():
    with pytest.raises(ValueError):
        KEYS.seal("alice", "alice", b"x")


def test_flipped_ciphertext_bit_fails():
    env = KEYS.seal("alice", "bob", b"secret weights")
    body = bytearray(env.ciphertext)
    body[-1] ^= 1
    with pytest.raises(TamperDetected):
        KEYS.open("bob", type(env)(env.sender, env.receiver, bytes(body)))


def test_swapped_parties_fail_authentication():
    env = KEYS.seal("alice", "bob", b"secret")
    with pytest.raises(TamperDetected):
        KEYS.open("bob", type(env)("carol", "bob", env.ciphertext))


def test_different_secrets_cannot_open():
    env = KEYS.seal("alice", "bob", b"secret")
    with pytest.raises(TamperDetected):
        Keyring(b"another secret of 32 bytes......").open("bob", env)


def test_bundle_round_trip():
    envs = [KEYS.seal("alice", r, b"w") for r in ("carol", "bob")]
    sender, by_receiver = unpack_bundle(pack_bundle("alice", envs))
    assert sender == "alice" and sorted(by_receiver) == ["bob", "carol"]
    assert KEYS.open("bob", by_receiver["bob"]) == b"w"
    with pytest.raises(StoreError):
        unpack_bundle(b"\xff not json")
