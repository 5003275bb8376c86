"""Directory record codec: timestamp packing, layout goldens, LFN runs."""

from datetime import datetime

import pytest
from hypothesis import given, strategies as st

from umstk.fat32 import entries, names


def test_datetime_goldens():
    assert entries.encode_datetime(datetime(1980, 1, 1)) == (0x0021, 0x0000, 0)
    assert entries.encode_datetime(
        datetime(2107, 12, 31, 23, 59, 58)) == (0xFF9F, 0xBF7D, 0)


def test_datetime_tenths_field():
    date, time, tenths = entries.encode_datetime(
        datetime(1980, 1, 1, 0, 0, 1, 990000))
    assert time == 0x0000          # odd second folds into tenths
    assert tenths == 199
    back = entries.decode_datetime(date, time, tenths)
    assert back == datetime(1980, 1, 1, 0, 0, 1, 990000)


def test_datetime_rejects_out_of_range_years():
    with pytest.raises(ValueError):
        entries.encode_datetime(datetime(1979, 12, 31))
    with pytest.raises(ValueError):
        entries.encode_datetime(datetime(2108, 1, 1))


def test_datetime_decode_invalid_returns_none():
    assert entries.decode_datetime(0, 0) is None          # month/day zero
    assert entries.decode_datetime(0x0021, 0xBF7E) is None  # second field 30


@given(st.datetimes(min_value=datetime(1980, 1, 1),
                    max_value=datetime(2107, 12, 31, 23, 59, 59)))
def test_datetime_round_trip_two_second_resolution(dt):
    date, time, tenths = entries.encode_datetime(dt)
    back = entries.decode_datetime(date, time, tenths)
    # lossless down to 10 ms via the tenths field
    truncated = dt.replace(microsecond=dt.microsecond // 10000 * 10000)
    assert back == truncated
    # and without tenths, exactly 2-second resolution
    coarse = entries.decode_datetime(date, time)
    assert coarse == dt.replace(second=dt.second // 2 * 2, microsecond=0)


def test_short_entry_layout_golden():
    # hand-packed record: size lives in the last four bytes (offset 28)
    raw = (b"README  TXT"            # name
           + bytes([0x20])           # attributes: changed-flag only
           + bytes([0])              # reserved
           + bytes([100])            # creation tenths
           + bytes.fromhex("0000 2100 2100 1200 0000 2100 3400".replace(" ", ""))
           + (0x11223344).to_bytes(4, "little"))
    entry = entries.decode_entry(raw)
    assert entry.name == b"README  TXT"
    assert entry.attributes == 0x20
    assert entry.start_cluster == (0x0012 << 16) | 0x0034
    assert entry.size == 0x11223344
    assert entries.encode_entry(entry) == raw


def test_entry_first_byte_kanji_substitution():
    entry = entries.DirEntry(name=b"\xe5BC     TXT", attributes=0x20)
    raw = entries.encode_entry(entry)
    assert raw[0] == 0x05
    back = entries.decode_entry(raw)
    assert back.name[0] == 0xE5


def test_lfn_run_boundaries():
    short = b"THIRTE~1TXT"
    run13 = entries.build_lfn_run("thirteen.txt8", short)   # 13 chars
    assert len(run13) == 32
    assert run13[0] == 0x41                                  # last | ordinal 1
    run14 = entries.build_lfn_run("fourteen.txt89", short)  # 14 chars
    assert len(run14) == 64
    assert run14[0] == 0x42 and run14[32] == 0x01
    run255 = entries.build_lfn_run("a" * 255, short)
    assert len(run255) == 20 * 32
    assert run255[0] == 0x40 | 20


def test_lfn_run_padding_and_checksum():
    short = b"AB      TXT"
    run = entries.build_lfn_run("ab.txt", short)            # 6 chars, 1 entry
    assert len(run) == 32
    csum = names.short_name_checksum(short)
    assert run[11] == 0x0F and run[12] == 0x00 and run[13] == csum
    assert run[26:28] == b"\x00\x00"
    # chars 1-5 at offset 1, 6-11 at 14, 12-13 at 28; name then 0000h then FFFFh
    chars = run[1:11] + run[14:26] + run[28:32]
    assert chars[:12] == "ab.txt".encode("utf-16-le")
    assert chars[12:14] == b"\x00\x00"
    assert chars[14:] == b"\xff" * 12


def test_serialize_skips_lfn_when_name_is_the_short_form():
    rec = entries.serialize_directory_entry(
        "README.TXT", b"README  TXT", attributes=0x20, start_cluster=5,
        size=10, written=datetime(2001, 2, 3, 4, 5, 6))
    assert len(rec) == 32
    rec2 = entries.serialize_directory_entry(
        "readme.txt", b"README  TXT", attributes=0x20, start_cluster=5,
        size=10, written=datetime(2001, 2, 3, 4, 5, 6))
    assert len(rec2) == 64    # case differs from the stored form, LFN needed


def _records_for(name, attributes=0x20, start=0, size=0):
    short = names.generate_short_name(name, set())
    return entries.serialize_directory_entry(
        name, short, attributes=attributes, start_cluster=start, size=size,
        created=datetime(1999, 8, 7, 6, 5, 4, 130000),
        accessed=datetime(2004, 3, 2),
        written=datetime(2010, 11, 12, 13, 14, 15))


def test_parse_directory_round_trip():
    data = _records_for("Mixed Case Name.bin", start=77, size=123456)
    data += _records_for("plain.txt", start=9, size=1)
    data += bytes(32)   # terminator
    parsed = entries.parse_directory(data)
    assert [e.long_name for e in parsed.entries] == [
        "Mixed Case Name.bin", "plain.txt"]
    first = parsed.entries[0]
    assert first.start_cluster == 77
    assert first.size == 123456
    assert first.created == datetime(1999, 8, 7, 6, 5, 4, 130000)
    assert first.accessed == datetime(2004, 3, 2)
    # write time has no tenths byte: two-second resolution, odd second drops
    assert first.written == datetime(2010, 11, 12, 13, 14, 14)
    assert first.slot_start == 0 and first.slot_count == 3  # 2 LFN + short
    assert parsed.terminator_slot == first.slot_count + 2


def test_parse_directory_skips_deleted_and_stops_at_terminator():
    live = _records_for("keep.txt")
    dead = bytearray(_records_for("gone.txt"))
    for i in range(0, len(dead), 32):
        dead[i] = 0xE5        # tombstone the whole span, LFN run included
    tail = _records_for("after-terminator.txt")
    data = bytes(dead) + live + bytes(32) + tail
    parsed = entries.parse_directory(data)
    assert [e.long_name for e in parsed.entries] == ["keep.txt"]


def test_parse_directory_drops_corrupt_lfn_keeps_short():
    data = bytearray(_records_for("Corrupt Me Please.txt"))
    data[13] ^= 0xFF          # break the first LFN record's checksum
    parsed = entries.parse_directory(bytes(data) + bytes(32))
    assert len(parsed.entries) == 1
    entry = parsed.entries[0]
    assert entry.had_lfn is False
    assert entry.long_name == names.short_display_form(entry.short_name)


def test_parse_directory_drops_orphan_lfn_run():
    orphan = entries.build_lfn_run("lost forever.txt", b"LOSTFO~1TXT")
    data = orphan + _records_for("still here.txt") + bytes(32)
    parsed = entries.parse_directory(data)
    assert [e.long_name for e in parsed.entries] == ["still here.txt"]


def test_parse_directory_captures_volume_label():
    label = entries.DirEntry(name=b"MYVOLUME   ", attributes=0x08)
    data = entries.encode_entry(label) + _records_for("x.txt") + bytes(32)
    parsed = entries.parse_directory(data)
    assert parsed.label == "MYVOLUME"
    assert [e.long_name for e in parsed.entries] == ["x.txt"]


def test_parse_directory_recognizes_dot_entries():
    dot = entries.DirEntry(name=b".          ", attributes=0x10,
                           start_cluster=8)
    dotdot = entries.DirEntry(name=b"..         ", attributes=0x10)
    data = (entries.encode_entry(dot) + entries.encode_entry(dotdot)
            + _records_for("child.txt") + bytes(32))
    parsed = entries.parse_directory(data)
    dots = [e for e in parsed.entries if e.is_dot or e.is_dotdot]
    assert len(dots) == 2
    assert dots[0].start_cluster == 8
    names_seen = [e.long_name for e in parsed.entries
                  if not (e.is_dot or e.is_dotdot)]
    assert names_seen == ["child.txt"]


def test_parse_directory_rejects_partial_records():
    with pytest.raises(ValueError):
        entries.parse_directory(bytes(33))
