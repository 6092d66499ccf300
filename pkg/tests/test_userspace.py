import random
import threading

import pytest

from siat import errors
from siat.userspace import SPACES, Space, Userspace


@pytest.fixture
def us(tmp_path):
    store = Userspace(tmp_path, admin_check=lambda uid: uid == "admin")
    store.create_user_space("u1")
    return store


def test_create_user_space_has_three_spaces(us):
    assert us.list_spaces("u1") == [Space.RAW_VIDEO, Space.MODEL, Space.PROJECT]
    assert tuple(SPACES) == (Space.RAW_VIDEO, Space.MODEL, Space.PROJECT)


def test_create_user_space_twice(us):
    with pytest.raises(errors.AlreadyExists):
        us.create_user_space("u1")


def test_fresh_spaces_are_empty(us):
    for space in SPACES:
        assert us.list_objects("u1", "u1", space) == []


def test_put_get_roundtrip(us, rng):
    blob = rng.randbytes(100_000)
    ref = us.put_object("u1", "u1", Space.RAW_VIDEO, "clip0.svb", blob)
    assert ref.size == len(blob)
    assert us.get_object("u1", "u1", Space.RAW_VIDEO, "clip0.svb") == blob


def test_overwrite_updates_size(us):
    us.put_object("u1", "u1", Space.MODEL, "m.json", b"12345")
    ref = us.put_object("u1", "u1", Space.MODEL, "m.json", b"12")
    assert ref.size == 2
    assert us.get_object("u1", "u1", Space.MODEL, "m.json") == b"12"


def test_non_owner_denied_everywhere(us):
    us.put_object("u1", "u1", Space.PROJECT, "x", b"data")
    for space in SPACES:
        with pytest.raises(errors.AccessDenied):
            us.put_object("intruder", "u1", space, "x", b"!")
        with pytest.raises(errors.AccessDenied):
            us.get_object("intruder", "u1", space, "x")
        with pytest.raises(errors.AccessDenied):
            us.list_objects("intruder", "u1", space)


def test_admin_allowed(us):
    us.put_object("u1", "u1", Space.RAW_VIDEO, "a", b"data")
    assert us.get_object("admin", "u1", Space.RAW_VIDEO, "a") == b"data"
    us.put_object("admin", "u1", Space.RAW_VIDEO, "b", b"x")
    assert len(us.list_objects("admin", "u1", Space.RAW_VIDEO)) == 2


@pytest.mark.parametrize("path", ["../x", "a/../x", "/abs", "", ".", "a//b", "a\\b"])
def test_bad_paths_rejected(us, path):
    with pytest.raises(errors.BadPath):
        us.put_object("u1", "u1", Space.RAW_VIDEO, path, b"x")


def test_get_missing(us):
    with pytest.raises(errors.NotFound):
        us.get_object("u1", "u1", Space.MODEL, "nope")


def test_list_lexicographic_and_prefix(us):
    for name in ("b", "a", "m/2", "m/1"):
        us.put_object("u1", "u1", Space.PROJECT, name, b"x")
    paths = [r.path for r in us.list_objects("u1", "u1", Space.PROJECT)]
    assert paths == ["a", "b", "m/1", "m/2"]
    only_m = [r.path for r in us.list_objects("u1", "u1", Space.PROJECT, prefix="m/")]
    assert only_m == ["m/1", "m/2"]


def test_nested_paths(us):
    us.put_object("u1", "u1", Space.RAW_VIDEO, "deep/tree/file.bin", b"ok")
    assert us.get_object("u1", "u1", Space.RAW_VIDEO, "deep/tree/file.bin") == b"ok"


def test_concurrent_overwrites_never_tear(us):
    payloads = [bytes([i]) * 4096 for i in range(8)]

    def writer(p):
        for _ in range(30):
            us.put_object("u1", "u1", Space.RAW_VIDEO, "hot", p)

    threads = [threading.Thread(target=writer, args=(p,)) for p in payloads]
    for t in threads:
        t.start()
    seen_bad = []
    for _ in range(200):
        try:
            data = us.get_object("u1", "u1", Space.RAW_VIDEO, "hot")
        except errors.NotFound:
            continue
        if len(set(data)) > 1 or len(data) != 4096:
            seen_bad.append(data[:8])
    for t in threads:
        t.join()
    assert not seen_bad


def test_roundtrip_various_sizes(us, rng):
    for size in (0, 1, 255, 4096, 1 << 20):
        blob = rng.randbytes(size)
        us.put_object("u1", "u1", Space.MODEL, f"s{size}", blob)
        assert us.get_object("u1", "u1", Space.MODEL, f"s{size}") == blob
