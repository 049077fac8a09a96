from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepqa.errors import MalformedHeader, ParseError, TruncatedPayload, ValidationError
from sweepqa.fileio import (
    Manifest,
    ManifestEntry,
    SweepRef,
    decode_sweep,
    dumps_manifest,
    encode_sweep,
    iter_jsonl,
    read_manifest,
    read_sweep,
    validate_manifest,
    write_jsonl,
    write_manifest,
    write_sweep,
)
from sweepqa.sweep import PerturbationPlan, PlacentaLabel, PresentationLabel, Sweep, SweepTag

from conftest import random_sweep


@st.composite
def sweeps(draw):
    t, h, w = draw(st.integers(1, 5)), draw(st.integers(1, 9)), draw(st.integers(1, 9))
    data = draw(st.binary(min_size=t * h * w, max_size=t * h * w))
    frames = np.frombuffer(data, dtype=np.uint8).reshape(t, h, w)
    pid = draw(st.text(max_size=12))
    mm = draw(st.floats(1e-3, 1e3, allow_nan=False))
    return Sweep(frames, draw(st.sampled_from(list(SweepTag))), pid, mm)


@given(sweeps())
@settings(max_examples=100, deadline=None)
def test_bswp_round_trip(s):
    blob = encode_sweep(s)
    back = decode_sweep(blob)
    assert back == s
    assert encode_sweep(back) == blob


def test_bswp_header_layout():
    s = Sweep(np.arange(12, dtype=np.uint8).reshape(1, 3, 4), SweepTag.L1, "ab", 0.75)
    blob = encode_sweep(s)
    assert blob[:4] == b"BSWP"
    assert struct.unpack_from("<HHHHBfBH", blob, 4) == (1, 1, 3, 4, 0, 0.75, 3, 2)
    assert blob[20:22] == b"ab"
    assert blob[22:] == bytes(range(12))


def test_bswp_file_round_trip(tmp_path):
    s = random_sweep(np.random.default_rng(0), 4, 7, 5)
    write_sweep(s, tmp_path / "a" / "s.bswp")
    assert read_sweep(tmp_path / "a" / "s.bswp") == s
    assert not list((tmp_path / "a").glob(".*tmp"))


def test_bswp_errors():
    s = random_sweep(np.random.default_rng(1), 2, 3, 3)
    blob = encode_sweep(s)
    with pytest.raises(MalformedHeader) as e:
        decode_sweep(b"XSWP" + blob[4:])
    assert e.value.offset == 0
    with pytest.raises(MalformedHeader):
        decode_sweep(blob[:10])
    with pytest.raises(TruncatedPayload) as e:
        decode_sweep(blob[:-5])
    assert e.value.expected == 18 and e.value.actual == 13
    assert "18" in str(e.value) and "13" in str(e.value)
    with pytest.raises(MalformedHeader):
        decode_sweep(blob + b"\0")
    bad_tag = bytearray(blob)
    bad_tag[17] = 9
    with pytest.raises(MalformedHeader) as e:
        decode_sweep(bytes(bad_tag))
    assert e.value.offset == 17
    bad_version = bytearray(blob)
    bad_version[4] = 2
    with pytest.raises(MalformedHeader):
        decode_sweep(bytes(bad_version))


def test_read_sweep_error_names_file(tmp_path):
    p = tmp_path / "x.bswp"
    p.write_bytes(b"nope")
    with pytest.raises(MalformedHeader, match="x.bswp"):
        read_sweep(p)


def make_manifest(n=3, root=None, mixture=None, plans=False):
    entries = []
    for i in range(n):
        refs = tuple(
            SweepRef(
                t,
                f"sweeps/P{i}_{t.name}.bswp",
                PerturbationPlan(bool(i % 2), True, True, i % 9, 8 + i % 17) if plans else None,
            )
            for t in SweepTag
        )
        entries.append(
            ManifestEntry(
                f"P{i}", ("train", "val", "test")[i % 3],
                list(PresentationLabel)[i % 2], list(PlacentaLabel)[(i // 2) % 2], refs,
            )
        )
    return Manifest(7, tuple(entries), mixture, root)


def test_manifest_round_trip(tmp_path):
    m = make_manifest(3, mixture=(0.5, 0.3, 0.15, 0.05), plans=True)
    write_manifest(m, tmp_path / "manifest.json")
    back = read_manifest(tmp_path / "manifest.json")
    assert back == m
    assert back.root == tmp_path
    assert dumps_manifest(back) == (tmp_path / "manifest.json").read_text()


@given(st.integers(0, 6), st.booleans(), st.integers(0, 2**63))
@settings(max_examples=30, deadline=None)
def test_manifest_text_round_trip(n, plans, seed):
    m = make_manifest(n, plans=plans)
    m = Manifest(seed, m.entries, m.mixture)
    from sweepqa.fileio import manifest_from_dict

    text = dumps_manifest(m)
    again = manifest_from_dict(json.loads(text))
    assert again == m and dumps_manifest(again) == text


def test_manifest_parse_error_has_location(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{\n  "seed": 1,\n  "entries": [,]\n}\n')
    with pytest.raises(ParseError) as e:
        read_manifest(p)
    assert e.value.line == 3 and e.value.column is not None


def test_manifest_schema_errors(tmp_path):
    p = tmp_path / "m.json"
    d = json.loads(dumps_manifest(make_manifest(1)))
    d["entries"][0]["sweeps"][0]["tag"] = "Z9"
    p.write_text(json.dumps(d))
    with pytest.raises(ParseError, match="unknown tag"):
        read_manifest(p)


def test_validate_manifest(tmp_path):
    m = make_manifest(3, root=tmp_path)
    with pytest.raises(ValidationError, match="missing sweep file"):
        validate_manifest(m)
    validate_manifest(m, split_sizes=(1, 1, 1), check_files=False)
    with pytest.raises(ValidationError, match="split"):
        validate_manifest(m, split_sizes=(850, 200, 200), check_files=False)
    dup = Manifest(1, m.entries + m.entries[:1])
    with pytest.raises(ValidationError, match="duplicate"):
        validate_manifest(dup, check_files=False)
    short = ManifestEntry("Q", "test", PresentationLabel.CEPHALIC, PlacentaLabel.ANTERIOR, m.entries[0].sweeps[:5])
    with pytest.raises(ValidationError, match="one sweep per tag"):
        validate_manifest(Manifest(1, (short,)), check_files=False)


def test_manifest_accessors():
    m = make_manifest(3)
    assert m.split_counts() == {"train": 1, "val": 1, "test": 1}
    assert m.keys("test") == [("P2", t) for t in SweepTag]
    assert len(list(m.refs(None))) == 18
    assert m.entry("P1").sweep(SweepTag.M).path == "sweeps/P1_M.bswp"
    with pytest.raises(KeyError):
        m.entry("nobody")


def test_jsonl(tmp_path):
    p = tmp_path / "r.jsonl"
    recs = [{"a": 1}, {"b": [1, 2]}]
    write_jsonl(recs, p)
    assert [r for _, r in iter_jsonl(p)] == recs
    p.write_text('{"a": 1}\n\n[1]\n')
    with pytest.raises(ParseError) as e:
        list(iter_jsonl(p))
    assert e.value.line == 3
    p.write_text('{"a": 1}\n{oops\n')
    with pytest.raises(ParseError) as e:
        list(iter_jsonl(p))
    assert e.value.line == 2
