"""Directory record codec: 32-byte entries, timestamps, long-name runs.

A directory region is an array of 32-byte records. A file with a long name
occupies one short record preceded by up to twenty long-name records in
reverse ordinal order, each bound to the short record by a checksum.
"""

import logging
import struct
from dataclasses import dataclass, field
from datetime import datetime

from . import names

log = logging.getLogger("umstk.fat32")

RECORD_SIZE = 32
FREE_BYTE = 0xE5        # first byte of a deleted record
TERMINATOR_BYTE = 0x00  # first byte of the end-of-directory record
KANJI_SUBSTITUTE = 0x05  # stored stand-in for a real leading 0xE5 byte

ATTR_READ_ONLY = 0x01
ATTR_HIDDEN = 0x02
ATTR_SYSTEM = 0x04
ATTR_VOLUME_ID = 0x08
ATTR_DIRECTORY = 0x10
ATTR_ARCHIVE = 0x20
ATTR_LONG_NAME = 0x0F
ATTR_LONG_NAME_MASK = 0x3F

LFN_LAST_FLAG = 0x40
LFN_CHARS_PER_RECORD = 13
MAX_LFN_RECORDS = 20

DOT_NAME = b".          "
DOTDOT_NAME = b"..         "

_ENTRY = struct.Struct("<11sBBBHHHHHHHI")


def encode_datetime(dt):
    """Pack a datetime into (date, time, tenths) record fields.

    The time field holds two-second resolution; the odd second and the
    10 ms remainder go into the tenths byte (0..199).
    """
    if not 1980 <= dt.year <= 2107:
        raise ValueError(f"year {dt.year} outside storable range 1980..2107")
    date = ((dt.year - 1980) << 9) | (dt.month << 5) | dt.day
    time = (dt.hour << 11) | (dt.minute << 5) | (dt.second // 2)
    tenths = (dt.second % 2) * 100 + dt.microsecond // 10000
    return date, time, tenths


def decode_datetime(date, time, tenths=0):
    """Unpack record fields to a datetime, or None if any field is invalid.

    Zeroed timestamps (common on volumes written by minimal drivers)
    decode to None rather than raising.
    """
    year = 1980 + (date >> 9)
    month = (date >> 5) & 0x0F
    day = date & 0x1F
    two_seconds = time & 0x1F
    minute = (time >> 5) & 0x3F
    hour = time >> 11
    if two_seconds > 29 or minute > 59 or hour > 23 or not 0 <= tenths <= 199:
        return None
    try:
        return datetime(year, month, day, hour, minute,
                        two_seconds * 2 + tenths // 100,
                        (tenths % 100) * 10000)
    except ValueError:
        return None


@dataclass
class DirEntry:
    """Raw 32-byte short record, fields as stored (timestamps unpacked
    elsewhere). `name` carries the logical first byte: a real 0xE5 here is
    stored on disk as 0x05."""

    name: bytes
    attributes: int = 0
    ntres: int = 0
    created_tenths: int = 0
    created_time: int = 0
    created_date: int = 0
    accessed_date: int = 0
    written_time: int = 0
    written_date: int = 0
    start_cluster: int = 0
    size: int = 0


def encode_entry(entry):
    name = bytes(entry.name)
    if len(name) != 11:
        raise ValueError(f"record name must be 11 bytes, got {len(name)}")
    if name[0] == FREE_BYTE:
        name = bytes([KANJI_SUBSTITUTE]) + name[1:]
    return _ENTRY.pack(name, entry.attributes, entry.ntres,
                       entry.created_tenths, entry.created_time,
                       entry.created_date, entry.accessed_date,
                       entry.start_cluster >> 16, entry.written_time,
                       entry.written_date, entry.start_cluster & 0xFFFF,
                       entry.size)


def decode_entry(raw):
    if len(raw) != RECORD_SIZE:
        raise ValueError(f"record must be 32 bytes, got {len(raw)}")
    (name, attributes, ntres, created_tenths, created_time, created_date,
     accessed_date, cluster_hi, written_time, written_date, cluster_lo,
     size) = _ENTRY.unpack(raw)
    if name[0] == KANJI_SUBSTITUTE:
        name = bytes([FREE_BYTE]) + name[1:]
    return DirEntry(name=name, attributes=attributes, ntres=ntres,
                    created_tenths=created_tenths, created_time=created_time,
                    created_date=created_date, accessed_date=accessed_date,
                    written_time=written_time, written_date=written_date,
                    start_cluster=(cluster_hi << 16) | cluster_lo, size=size)


def _stored_name(short_name):
    if short_name[0] == FREE_BYTE:
        return bytes([KANJI_SUBSTITUTE]) + short_name[1:]
    return bytes(short_name)


def build_lfn_run(long_name, short_name):
    """Long-name records for `long_name`, highest ordinal first.

    Each record carries 13 UTF-16 units; a name that does not fill the last
    record is terminated with 0x0000 and padded with 0xFFFF.
    """
    encoded = long_name.encode("utf-16-le")
    unit_count = len(encoded) // 2
    record_count = -(-unit_count // LFN_CHARS_PER_RECORD)
    if not 1 <= record_count <= MAX_LFN_RECORDS:
        raise ValueError(f"name needs {record_count} long-name records, "
                         f"limit is {MAX_LFN_RECORDS}")
    if unit_count < record_count * LFN_CHARS_PER_RECORD:
        encoded += b"\x00\x00"
    encoded = encoded.ljust(record_count * LFN_CHARS_PER_RECORD * 2, b"\xff")
    checksum = names.short_name_checksum(_stored_name(short_name))

    out = bytearray()
    for ordinal in range(record_count, 0, -1):
        chars = encoded[(ordinal - 1) * 26:ordinal * 26]
        flag = LFN_LAST_FLAG if ordinal == record_count else 0
        out += bytes([ordinal | flag]) + chars[0:10]
        out += bytes([ATTR_LONG_NAME, 0, checksum]) + chars[10:22]
        out += b"\x00\x00" + chars[22:26]
    return bytes(out)


def serialize_directory_entry(long_name, short_name, *, attributes=0,
                              start_cluster=0, size=0, created=None,
                              accessed=None, written=None, ntres=0):
    """Records for one directory child: optional long-name run + short
    record. The run is emitted only when the long name differs from what the
    short record alone would display."""
    created_date = created_time = created_tenths = 0
    if created is not None:
        created_date, created_time, created_tenths = encode_datetime(created)
    accessed_date = encode_datetime(accessed)[0] if accessed else 0
    written_date = written_time = 0
    if written is not None:
        written_date, written_time, _ = encode_datetime(written)
    short = encode_entry(DirEntry(
        name=short_name, attributes=attributes, ntres=ntres,
        created_tenths=created_tenths, created_time=created_time,
        created_date=created_date, accessed_date=accessed_date,
        written_time=written_time, written_date=written_date,
        start_cluster=start_cluster, size=size))
    if long_name == names.short_display_form(short_name):
        return short
    return build_lfn_run(long_name, short_name) + short


@dataclass
class ParsedEntry:
    """One directory child as seen by callers: decoded name, timestamps,
    and the slot span its records occupy."""

    long_name: str
    short_name: bytes
    attributes: int
    start_cluster: int
    size: int
    created: datetime | None
    accessed: datetime | None
    written: datetime | None
    slot_start: int
    slot_count: int
    had_lfn: bool

    @property
    def is_directory(self):
        return bool(self.attributes & ATTR_DIRECTORY)

    @property
    def is_dot(self):
        return self.short_name == DOT_NAME

    @property
    def is_dotdot(self):
        return self.short_name == DOTDOT_NAME


@dataclass
class ParsedDirectory:
    entries: list = field(default_factory=list)
    label: str | None = None
    label_slot: int | None = None
    terminator_slot: int | None = None
    total_slots: int = 0


class _LfnRun:
    """Accumulates a reverse-ordered long-name run during a directory scan."""

    def __init__(self, slot, ordinal, checksum, chars):
        self.slot_start = slot
        self.checksum = checksum
        self.top_ordinal = ordinal
        self.expected = ordinal
        self.pieces = {ordinal: chars}

    def accept(self, ordinal, checksum, chars):
        if ordinal != self.expected - 1 or checksum != self.checksum:
            return False
        self.expected = ordinal
        self.pieces[ordinal] = chars
        return True

    @property
    def complete(self):
        return self.expected == 1

    def name(self):
        raw = b"".join(self.pieces[i] for i in range(1, self.top_ordinal + 1))
        # the 0x0000 terminator is unit-aligned; a byte-level find could land
        # between units, so walk two bytes at a time
        out = bytearray()
        for i in range(0, len(raw), 2):
            if raw[i] == 0 and raw[i + 1] == 0:
                break
            out += raw[i:i + 2]
        try:
            return out.decode("utf-16-le")
        except UnicodeDecodeError:
            return None


def parse_directory(data):
    """Scan a directory region into entries, volume label, and slot map.

    Damaged long-name runs (bad checksum, broken ordinal sequence, no
    adjacent short record) are dropped with a log warning; the short record,
    if present, still yields an entry under its 8.3 name.
    """
    if len(data) % RECORD_SIZE:
        raise ValueError(
            f"directory region length {len(data)} not a record multiple")
    result = ParsedDirectory(total_slots=len(data) // RECORD_SIZE)
    run = None

    def drop_run(reason):
        nonlocal run
        if run is not None:
            log.warning("dropping long-name run at slot %d: %s",
                        run.slot_start, reason)
            run = None

    for slot in range(result.total_slots):
        raw = data[slot * RECORD_SIZE:(slot + 1) * RECORD_SIZE]
        first = raw[0]
        if first == TERMINATOR_BYTE:
            result.terminator_slot = slot
            break
        if first == FREE_BYTE:
            drop_run("followed by a deleted record")
            continue
        attributes = raw[11]
        if attributes & ATTR_LONG_NAME_MASK == ATTR_LONG_NAME:
            ordinal = first & 0x3F
            chars = raw[1:11] + raw[14:26] + raw[28:32]
            if raw[12] != 0 or ordinal == 0:
                drop_run("malformed long-name record")
                continue
            if first & LFN_LAST_FLAG:
                drop_run("superseded by a new run")
                run = _LfnRun(slot, ordinal, raw[13], chars)
            elif run is None or not run.accept(ordinal, raw[13], chars):
                drop_run("ordinal or checksum mismatch")
            continue

        entry = decode_entry(raw)
        if attributes & ATTR_VOLUME_ID and not (attributes & ATTR_DIRECTORY):
            drop_run("followed by the volume label")
            if result.label is None:
                result.label = _stored_name(entry.name).rstrip(b" ") \
                    .decode("latin-1")
                result.label_slot = slot
            continue

        long_name = None
        slot_start = slot
        slot_count = 1
        if run is not None:
            stored = raw[0:11]
            if run.complete \
                    and run.checksum == names.short_name_checksum(stored):
                long_name = run.name()
            if long_name is None:
                drop_run("does not match the following short record")
            else:
                slot_start = run.slot_start
                slot_count = slot - run.slot_start + 1
                run = None
        had_lfn = long_name is not None
        if long_name is None:
            long_name = names.short_display_form(entry.name)
        result.entries.append(ParsedEntry(
            long_name=long_name, short_name=entry.name,
            attributes=entry.attributes, start_cluster=entry.start_cluster,
            size=entry.size,
            created=decode_datetime(entry.created_date, entry.created_time,
                                    entry.created_tenths),
            accessed=decode_datetime(entry.accessed_date, 0),
            written=decode_datetime(entry.written_date, entry.written_time),
            slot_start=slot_start, slot_count=slot_count, had_lfn=had_lfn))
    return result
