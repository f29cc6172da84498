import json
import os
import random

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

import itx


def test_constants():
    assert itx.KEY_CONTEXTS == 16
    assert itx.MAX_KEY_REGIONS == 17
    assert itx.MAX_FRAME_SIZE == 1024
    assert itx.FRAME_GRANULE == 128


@pytest.mark.parametrize("size", [128, 256, 512, 1024])
def test_frame_sizes_accepted(size):
    itx.check_frame_size(size)


@pytest.mark.parametrize("size", [0, 100, 1000, 1152])
def test_frame_sizes_rejected(size):
    with pytest.raises(itx.ItxError) as e:
        itx.check_frame_size(size)
    assert e.value.code == "InvalidFrameSize"


def test_frame_matches_cryptography():
    rng = random.Random(7)
    for i in range(50):
        key = bytes(rng.randrange(256) for _ in range(32))
        iv = itx.compose_iv(itx.StreamIV.data(2 + i), rng.randrange(1 << 32))
        payload = bytes(rng.randrange(256) for _ in range(128 * (1 + rng.randrange(8)) - 32))
        frame = itx.encrypt_frame(key, iv, payload)
        nonce = iv.serialize()
        assert frame[:16] == nonce + bytes(4)
        assert frame[16:] == AESGCM(key).encrypt(nonce, payload, None)
        got_iv, got = itx.decrypt_frame(key, frame)
        assert got == payload and got_iv == iv


def test_tampered_frame_fails():
    key = os.urandom(32)
    frame = bytearray(itx.encrypt_frame(key, itx.StreamIV.data(3), bytes(96)))
    frame[20] ^= 1
    with pytest.raises(itx.ItxError) as e:
        itx.decrypt_frame(key, bytes(frame))
    assert e.value.code == "AuthenticationFailure"


def test_stream_roundtrip():
    key = os.urandom(32)
    data = os.urandom(16 * 200)
    f = itx.encrypt_stream(key, itx.StreamIV.data(2), data, 512)
    assert f[:4] == b"ITXS"
    assert itx.decrypt_stream(key, f) == data


def test_dice_separation():
    seen = {}
    for s in range(2):
        for c in range(2):
            seen[s, c] = itx.dice_boot(3, b"sbl-%d" % s, b"cce-%d" % c)
    assert len({v["cik"] for v in seen.values()}) == 1
    assert seen[0, 0]["pik"] == seen[0, 1]["pik"] != seen[1, 0]["pik"]
    assert len({v["ak"] for v in seen.values()}) == 4
    assert itx.dice_boot(3, b"sbl-0", b"cce-0", hardened=True)["pik_endorsement"]


def test_compile_toy_job():
    job = json.loads(itx.toy_job_json())
    out = itx.compile(json.dumps(job))
    assert len(out["manifest_measurement"]) == 32
    assert out["sync_points"][0].startswith("boot")
    job["frame_size"] = 1000
    with pytest.raises(itx.ItxError) as e:
        itx.compile(json.dumps(job))
    assert e.value.code == "InvalidFrameSize"


def test_normal_equals_trusted():
    sc = itx.Scenario()
    assert sc.run_normal()["completed"]
    clear = sc.model()
    r = sc.run_trusted()
    assert r["completed"] and r["released_to"] == ["model-owner"]
    assert sc.key_release_ordered()
    assert sc.model() == clear == sc.reference_model()
    assert sc.verify_last()["accept"]


def test_checkpoint_resume():
    sc = itx.Scenario(seed=4)
    full = sc.run_trusted()
    want = sc.model()
    sc.new_sessions(False)
    killed = sc.run_trusted(kill_after=1)
    assert killed["killed"] and len(killed["checkpoints"]) == 1
    sc.new_sessions(True)
    r = sc.run_trusted(checkpoint=killed["checkpoints"][0])
    assert full["completed"] and r["completed"]
    assert sc.model() == want
    sc.new_sessions(True)
    stale = sc.run_trusted(checkpoint=killed["checkpoints"][0])
    assert stale["abort_code"] == "SecurityException" and not stale["has_model"]


def test_adversary_aborts():
    sc = itx.Scenario()
    script = json.dumps({"actions": [{"kind": "tamper-frame", "stream": 2, "index": 0, "bit": 200}]})
    r = sc.run_trusted(adversary=script)
    assert not r["completed"] and r["abort_code"] == "SecurityException"
    assert not r["has_model"] and r["released_to"] == []
    assert sc.key_release_ordered()


def test_random_schedules_never_wrong():
    sc = itx.Scenario()
    ref = sc.reference_model()
    for seed in range(40):
        sc.new_sessions(False)
        r = sc.run_trusted(adversary=sc.random_schedule(seed))
        if r["completed"]:
            assert sc.model() == ref
        else:
            assert not r["has_model"]


def test_bootloader_update_needs_tcb_certificate():
    sc = itx.Scenario(hardened=True)
    sc.update_secondary_bootloader(b"sbl-v2", issue_tcb=False)
    r = sc.run_trusted()
    assert r["rejected"] == "bootloader-tcb"
    sc.update_secondary_bootloader(b"sbl-v3", issue_tcb=True)
    sc.new_sessions(False)
    assert sc.run_trusted()["completed"]
    assert sc.verify_last()["accept"]
    v = sc.verify_last(with_tcb=False)
    assert not v["accept"] and v["reason"] == "bootloader-tcb"
