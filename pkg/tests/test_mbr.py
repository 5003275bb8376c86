"""Partition table codec, EBR chains, and partition views."""

import struct

import pytest
from hypothesis import given, strategies as st

from umstk import mbr
from umstk.blockdev import MemoryDevice
from umstk.errors import (MalformedTableError, OutOfRangeError,
                          UnsupportedPartitionFormatError)


def sector_with(entries_raw):
    sector = bytearray(512)
    for slot, raw in enumerate(entries_raw):
        sector[446 + slot * 16:446 + slot * 16 + len(raw)] = raw
    sector[510:512] = b"\x55\xaa"
    return bytes(sector)


def raw_entry(ptype, first_lba, count, bootflag=0x00):
    return bytes([bootflag, 0, 0, 0, ptype, 0, 0, 0]) + \
        struct.pack("<II", first_lba, count)


def test_parse_golden_fat32_entry():
    sector = sector_with([raw_entry(0x0B, 2048, 262144, bootflag=0x80)])
    record = mbr.parse_mbr(sector)
    assert len(record.entries) == 1
    entry = record.entries[0]
    assert entry.is_fat32
    assert entry.partition_type == 0x0B
    assert entry.first_lba == 2048
    assert entry.sector_count == 262144
    assert entry.bootable is True


def test_parse_without_signature_is_none():
    assert mbr.parse_mbr(bytes(512)) is None


def test_parse_signature_but_empty_table():
    record = mbr.parse_mbr(sector_with([]))
    assert record is not None
    assert record.entries == []


def test_parse_skips_type_zero_slots():
    sector = sector_with([raw_entry(0, 5, 5), raw_entry(0x0C, 64, 128)])
    record = mbr.parse_mbr(sector)
    assert [e.partition_type for e in record.entries] == [0x0C]


def test_serialize_round_trip():
    entries = [
        mbr.PartitionTableEntry(0x0B, 2048, 4096, bootable=True),
        mbr.PartitionTableEntry(0x0C, 8192, 1024),
    ]
    parsed = mbr.parse_mbr(mbr.serialize_mbr(entries))
    assert parsed.entries == entries


def test_serialize_zero_entries_is_valid_empty_table():
    sector = mbr.serialize_mbr([])
    assert sector[510:512] == b"\x55\xaa"
    assert sector[:446] == bytes(446)   # no boot code emitted
    assert mbr.parse_mbr(sector).entries == []


def test_serialize_rejects_overlap():
    with pytest.raises(MalformedTableError):
        mbr.serialize_mbr([mbr.PartitionTableEntry(0x0B, 100, 100),
                           mbr.PartitionTableEntry(0x0C, 150, 100)])


def test_serialize_rejects_more_than_four():
    entries = [mbr.PartitionTableEntry(0x0B, 100 * i + 100, 50)
               for i in range(5)]
    with pytest.raises(ValueError):
        mbr.serialize_mbr(entries)


@given(st.lists(st.tuples(st.sampled_from([0x0B, 0x0C, 0x07, 0x83]),
                          st.integers(min_value=1, max_value=2 ** 32 - 1),
                          st.integers(min_value=1, max_value=2 ** 20),
                          st.booleans()),
                min_size=0, max_size=4))
def test_parse_serialize_identity(raw_entries):
    entries = []
    next_free = 1
    for ptype, _, count, boot in raw_entries:
        entries.append(mbr.PartitionTableEntry(ptype, next_free, count, boot))
        next_free += count
    parsed = mbr.parse_mbr(mbr.serialize_mbr(entries))
    assert parsed.entries == entries


def ebr_sector(logical=None, link=None):
    raws = []
    raws.append(raw_entry(*logical) if logical else bytes(16))
    if link:
        raws.append(raw_entry(*link))
    return sector_with(raws)


def make_disk(total_sectors=512):
    return MemoryDevice(size_bytes=total_sectors * 512)


def test_follow_ebr_chain_two_links():
    # extended partition at LBA 100; EBR#2 at 100+50
    disk = make_disk()
    ext = mbr.PartitionTableEntry(0x05, 100, 120)
    disk.write_at(100 * 512, ebr_sector(logical=(0x0B, 1, 10),
                                        link=(0x05, 50, 40)))
    disk.write_at(150 * 512, ebr_sector(logical=(0x0C, 2, 30)))
    logical = mbr.follow_ebr_chain(disk, ext)
    assert [(e.partition_type, e.first_lba, e.sector_count)
            for e in logical] == [(0x0B, 101, 10), (0x0C, 152, 30)]


def test_follow_ebr_chain_unsigned_sector_is_empty():
    disk = make_disk()
    ext = mbr.PartitionTableEntry(0x0F, 100, 100)
    assert mbr.follow_ebr_chain(disk, ext) == []


def test_follow_ebr_chain_self_link_is_malformed():
    disk = make_disk()
    ext = mbr.PartitionTableEntry(0x05, 100, 100)
    disk.write_at(100 * 512, ebr_sector(logical=(0x0B, 1, 10),
                                        link=(0x05, 0, 50)))
    with pytest.raises(MalformedTableError):
        mbr.follow_ebr_chain(disk, ext)


def test_follow_ebr_chain_rejects_non_extended_entry():
    with pytest.raises(ValueError):
        mbr.follow_ebr_chain(make_disk(),
                             mbr.PartitionTableEntry(0x0B, 100, 10))


def test_discover_partitions_combines_primary_and_logical():
    disk = make_disk()
    table = mbr.serialize_mbr([mbr.PartitionTableEntry(0x0C, 10, 64),
                               mbr.PartitionTableEntry(0x05, 100, 120)])
    disk.write_at(0, table)
    disk.write_at(100 * 512, ebr_sector(logical=(0x0B, 1, 16)))
    record = mbr.discover_partitions(disk)
    assert [e.first_lba for e in record.entries] == [10, 100]
    assert [e.first_lba for e in record.logical_entries] == [101]
    assert len(record.all_entries) == 3


def test_discover_partitions_without_table_is_none():
    assert mbr.discover_partitions(make_disk()) is None


def test_discover_partitions_rejects_gpt():
    disk = make_disk()
    disk.write_at(0, mbr.serialize_mbr(
        [mbr.PartitionTableEntry(0xEE, 1, 511)]))
    with pytest.raises(UnsupportedPartitionFormatError):
        mbr.discover_partitions(disk)


def test_discover_partitions_drops_out_of_range_entry():
    disk = make_disk(total_sectors=256)
    disk.write_at(0, mbr.serialize_mbr(
        [mbr.PartitionTableEntry(0x0B, 10, 64),
         mbr.PartitionTableEntry(0x0C, 128, 10 ** 6)]))
    record = mbr.discover_partitions(disk)
    assert [e.first_lba for e in record.entries] == [10]


def test_partition_view_translates_by_base_lba():
    disk = make_disk(4096)
    disk.write_at(2048 * 512, b"first sector of the partition")
    view = mbr.PartitionView(disk, mbr.PartitionTableEntry(0x0B, 2048, 64))
    assert view.block_count == 64
    assert view.read_at(0, 29) == b"first sector of the partition"
    view.write_at(512, b"second")
    assert disk.read_at(2049 * 512, 6) == b"second"


def test_partition_view_bounds_by_span_not_parent():
    disk = make_disk()
    view = mbr.PartitionView(disk, mbr.PartitionTableEntry(0x0B, 8, 4))
    with pytest.raises(OutOfRangeError):
        view.read_at(4 * 512, 1)        # parent has room, span does not
    with pytest.raises(OutOfRangeError):
        view.write_at(4 * 512 - 1, b"xx")


def test_partition_view_rejects_entry_past_parent():
    with pytest.raises(OutOfRangeError):
        mbr.PartitionView(make_disk(64),
                          mbr.PartitionTableEntry(0x0B, 32, 64))


def test_two_views_never_alias():
    disk = make_disk()
    a = mbr.PartitionView(disk, mbr.PartitionTableEntry(0x0B, 16, 16))
    b = mbr.PartitionView(disk, mbr.PartitionTableEntry(0x0C, 32, 16))
    a.write_at(0, b"\xaa" * a.size_bytes)
    b.write_at(0, b"\xbb" * b.size_bytes)
    assert a.read_at(0, a.size_bytes) == b"\xaa" * a.size_bytes
    assert b.read_at(0, b.size_bytes) == b"\xbb" * b.size_bytes