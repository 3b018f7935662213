import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edafm.errors import EmptyArchive, EmptySeries, MalformedHeader, NegativeSample, RateMismatch
from edafm.ingest import (
    ArchiveManifest,
    EdaRecording,
    build_manifest,
    format_e4_eda,
    load_recording,
    parse_e4_eda,
    write_archive,
)


def test_parse_basic():
    rec = parse_e4_eda(b"1500000000.000000\n4.000000\n0.5\n0.6\n")
    assert rec.start_unix == 1500000000.0
    assert rec.rate_hz == 4.0
    np.testing.assert_array_equal(rec.values, [0.5, 0.6])


def test_multicolumn_header_and_blank_timestamp():
    rec = parse_e4_eda("\n4.0\n0.1\n0.2\n0.3\n")
    assert rec.start_unix == 0.0
    rec = parse_e4_eda("1500000000.0, 1500000000.0\n4.0, 4.0\n0.1\n")
    assert rec.start_unix == 1500000000.0


@pytest.mark.parametrize("text, err", [
    ("1500000000\n32.000000\n0.5\n", RateMismatch),
    ("abc\n4.0\n0.5\n", MalformedHeader),
    ("1500000000\nxx\n0.5\n", MalformedHeader),
    ("1500000000\n", MalformedHeader),
    ("1500000000\n4.0\n", EmptySeries),
    ("1500000000\n4.0\n0.5\n-0.1\n", NegativeSample),
    ("1500000000\n4.0\n0.5\nnan\n", MalformedHeader),
    ("-5\n4.0\n0.5\n", MalformedHeader),
])
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_e4_eda(text)


def test_recording_invariants():
    with pytest.raises(RateMismatch):
        EdaRecording("u", "d", 0.0, [1.0], rate_hz=32.0)
    with pytest.raises(NegativeSample):
        EdaRecording("u", "d", 0.0, [1.0, -1.0])
    with pytest.raises(EmptySeries):
        EdaRecording("u", "d", 0.0, [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False, allow_infinity=False), min_size=1, max_size=50),
       st.one_of(st.just(0.0), st.floats(0, 2e9)))
def test_round_trip_bit_exact(values, start):
    rec = EdaRecording("u", "d", start, values)
    back = parse_e4_eda(format_e4_eda(rec))
    assert back.values.tobytes() == rec.values.tobytes()
    assert back.start_unix == rec.start_unix


def _tree(root, spec):
    for ds, users in spec.items():
        for user, text in users.items():
            d = root / ds / user / "session1"
            d.mkdir(parents=True)
            (d / "EDA.csv").write_text(text)


GOOD = "1500000000\n4.0\n" + "\n".join(["1.0"] * 400) + "\n"


def test_manifest_two_datasets(tmp_path):
    _tree(tmp_path, {"A": {"u1": GOOD}, "B": {"u2": GOOD}})
    m = build_manifest(tmp_path)
    assert len(m.entries) == 2
    assert m.datasets() == ["A", "B"]
    assert math.isclose(m.total_hours, sum(e.duration_s for e in m.entries) / 3600, rel_tol=1e-9)
    assert all(e.duration_s == e.n_samples / 4 for e in m.entries)


def test_manifest_skips_corrupt(tmp_path):
    _tree(tmp_path, {"A": {"u1": GOOD, "u2": "abc\n4.0\n1\n"}})
    m = build_manifest(tmp_path, workers=2)
    assert len(m.entries) == 1
    assert len(m.skipped) == 1
    assert m.skipped[0].error == "ingest.MalformedHeader"


def test_empty_archive(tmp_path):
    _tree(tmp_path, {"A": {"u1": "abc\n"}})
    with pytest.raises(EmptyArchive):
        build_manifest(tmp_path)


def test_duplicate_keys_rejected(tmp_path):
    _tree(tmp_path, {"A": {"u1": GOOD}})
    e = build_manifest(tmp_path).entries[0]
    with pytest.raises(ValueError):
        ArchiveManifest(entries=[e, e])


def test_archive_round_trip(tmp_path):
    src = tmp_path / "src"
    _tree(src, {"A": {"u1": GOOD}, "B": {"u2": "\n4.0\n0.25\n0.5\n"}})
    (src / "A" / "meta.json").write_text(json.dumps({"scenario": "lab", "side": "left"}))
    m = write_archive(src, tmp_path / "arc")
    again = ArchiveManifest.read(tmp_path / "arc" / "manifest.jsonl")
    assert [e.key() for e in again.entries] == [e.key() for e in m.entries]
    a = next(e for e in again.entries if e.dataset_id == "A")
    assert (a.scenario, a.side) == ("lab", "left")
    rec = load_recording(tmp_path / "arc", a)
    assert rec.side == "left" and len(rec.values) == 400
    b = load_recording(tmp_path / "arc", next(e for e in again.entries if e.dataset_id == "B"))
    assert b.start_unix == 0.0
    np.testing.assert_array_equal(b.values, [0.25, 0.5])
