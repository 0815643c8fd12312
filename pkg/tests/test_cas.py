import hashlib
import random
import threading

import pytest

from martsia.cas import ContentStore, DirectoryBackend, MemoryBackend, locator_for
from martsia.errors import IntegrityFault, NotFound, StorageFull

EMPTY = "cas:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


@pytest.fixture(params=["memory", "directory"])
def store(request, tmp_path):
    if request.param == "memory":
        return ContentStore(MemoryBackend())
    return ContentStore.at(tmp_path)


def test_empty_locator(store):
    assert store.put(b"") == EMPTY
    assert len(EMPTY) == 68


def test_put_is_idempotent(store):
    assert store.put(b"x") == store.put(b"x")
    assert len(store.backend) == 1


def test_roundtrip(store):
    rnd = random.Random(7)
    for _ in range(50):
        blob = rnd.randbytes(rnd.randrange(0, 300))
        assert store.get(store.put(blob)) == blob


def test_not_found(store):
    with pytest.raises(NotFound):
        store.get(locator_for(b"never stored"))


def test_malformed_locator(store):
    with pytest.raises(ValueError):
        store.get("Qmb4Hz")
    with pytest.raises(ValueError):
        store.get("cas:" + "A" * 64)


def test_avalanche():
    rnd = random.Random(1)
    fractions = []
    for _ in range(1000):
        blob = bytearray(rnd.randbytes(64))
        a = locator_for(bytes(blob))
        blob[rnd.randrange(64)] ^= 1 << rnd.randrange(8)
        b = locator_for(bytes(blob))
        assert a != b
        diff = int(a[4:], 16) ^ int(b[4:], 16)
        fractions.append(bin(diff).count("1") / 256)
    assert abs(sum(fractions) / len(fractions) - 0.5) < 0.02


def test_directory_layout(tmp_path):
    store = ContentStore.at(tmp_path)
    loc = store.put(b"hello")
    digest = hashlib.sha256(b"hello").hexdigest()
    assert loc == "cas:" + digest
    assert (tmp_path / "objects" / digest[:2] / digest[2:]).read_bytes() == b"hello"


def test_directory_tamper_detected(tmp_path):
    store = ContentStore.at(tmp_path)
    loc = store.put(b"payload bytes")
    path = store.backend.path(loc[4:])
    raw = bytearray(path.read_bytes())
    raw[3] ^= 0x04
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityFault):
        store.get(loc)


def test_memory_tamper_detected():
    store = ContentStore()
    loc = store.put(b"abc")
    store.backend.objects[loc[4:]] = b"abd"
    with pytest.raises(IntegrityFault):
        store.get(loc)


def test_capacity():
    store = ContentStore(MemoryBackend(capacity=10))
    store.put(b"12345")
    with pytest.raises(StorageFull):
        store.put(b"1234567")


def test_concurrent_puts_converge(tmp_path):
    store = ContentStore.at(tmp_path)
    locs = []
    threads = [threading.Thread(target=lambda: locs.append(store.put(b"same content"))) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(locs)) == 1
    assert len(DirectoryBackend(tmp_path)) == 1
    assert store.get(locs[0]) == b"same content"
