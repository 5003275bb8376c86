"""Master boot record parsing, serialization, and partition views.

The table lives in sector 0: four 16-byte entries starting at byte 446,
signature 55h AAh at 510. Extended partitions (types 05h/0Fh) chain EBR
sectors, each describing one logical partition plus an optional link to the
next EBR. CHS fields are ignored everywhere; only the LBA fields matter.
"""

import logging
import struct
from dataclasses import dataclass, field

from .blockdev import BlockDevice
from .errors import (MalformedTableError, OutOfRangeError,
                     UnsupportedPartitionFormatError)

log = logging.getLogger("umstk.mbr")

SECTOR = 512
TABLE_OFFSET = 446
ENTRY_SIZE = 16
SIGNATURE_OFFSET = 510
SIGNATURE = b"\x55\xaa"

TYPE_EMPTY = 0x00
TYPE_FAT32_CHS = 0x0B
TYPE_FAT32_LBA = 0x0C
TYPE_EXTENDED_CHS = 0x05
TYPE_EXTENDED_LBA = 0x0F
TYPE_GPT_PROTECTIVE = 0xEE

EXTENDED_TYPES = (TYPE_EXTENDED_CHS, TYPE_EXTENDED_LBA)
FAT32_TYPES = (TYPE_FAT32_CHS, TYPE_FAT32_LBA)

# 8 EBRs is already exotic; 1024 means a broken or adversarial chain
MAX_EBR_CHAIN = 1024


@dataclass(frozen=True)
class PartitionTableEntry:
    """One 16-byte table slot with the CHS bytes dropped."""

    partition_type: int
    first_lba: int
    sector_count: int
    bootable: bool = False

    @property
    def is_extended(self):
        return self.partition_type in EXTENDED_TYPES

    @property
    def is_fat32(self):
        return self.partition_type in FAT32_TYPES

    @property
    def end_lba(self):
        return self.first_lba + self.sector_count


@dataclass
class MasterBootRecord:
    entries: list = field(default_factory=list)
    logical_entries: list = field(default_factory=list)

    @property
    def all_entries(self):
        return self.entries + self.logical_entries


def _decode_entry(raw):
    bootflag = raw[0]
    partition_type = raw[4]
    first_lba, sector_count = struct.unpack_from("<II", raw, 8)
    return PartitionTableEntry(partition_type=partition_type,
                               first_lba=first_lba,
                               sector_count=sector_count,
                               bootable=bool(bootflag & 0x80))


def parse_mbr(sector0):
    """Decode sector 0; returns None when the 55AAh signature is absent.

    Absence is a value, not an error: the caller may then probe LBA 0 as a
    filesystem start directly. Type-0 slots are skipped.
    """
    if len(sector0) < SECTOR:
        raise ValueError(f"need a full 512-byte sector, got {len(sector0)}")
    if bytes(sector0[SIGNATURE_OFFSET:SIGNATURE_OFFSET + 2]) != SIGNATURE:
        return None
    record = MasterBootRecord()
    for slot in range(4):
        at = TABLE_OFFSET + slot * ENTRY_SIZE
        entry = _decode_entry(sector0[at:at + ENTRY_SIZE])
        if entry.partition_type != TYPE_EMPTY:
            record.entries.append(entry)
    return record


def _encode_entry(entry):
    raw = bytearray(ENTRY_SIZE)
    raw[0] = 0x80 if entry.bootable else 0x00
    raw[4] = entry.partition_type
    struct.pack_into("<II", raw, 8, entry.first_lba, entry.sector_count)
    return bytes(raw)


def serialize_mbr(entries):
    """Pack up to four entries into a fresh 512-byte sector.

    The code area is zeroed (no bootloader emitted). Overlapping used
    entries are rejected; parse_mbr round-trips the result.
    """
    entries = list(entries)
    if len(entries) > 4:
        raise ValueError(f"an MBR holds at most 4 entries, got {len(entries)}")
    spans = sorted((e.first_lba, e.end_lba) for e in entries
                   if e.partition_type != TYPE_EMPTY)
    for (_, prev_end), (next_start, _) in zip(spans, spans[1:]):
        if next_start < prev_end:
            raise MalformedTableError(
                f"partitions overlap at LBA {next_start}")
    sector = bytearray(SECTOR)
    for slot, entry in enumerate(entries):
        sector[TABLE_OFFSET + slot * ENTRY_SIZE:
               TABLE_OFFSET + (slot + 1) * ENTRY_SIZE] = _encode_entry(entry)
    sector[SIGNATURE_OFFSET:SIGNATURE_OFFSET + 2] = SIGNATURE
    return bytes(sector)


def follow_ebr_chain(device, extended_entry):
    """Collect logical partitions behind an extended entry.

    Each EBR's first slot addresses its logical partition relative to that
    EBR's own sector; the second slot links to the next EBR relative to the
    extended partition's start. The walk stops at a missing signature or a
    missing link; revisiting a sector is a structural error.
    """
    if not extended_entry.is_extended:
        raise ValueError(
            f"entry type {extended_entry.partition_type:#04x} is not "
            f"an extended partition")
    extended_start = extended_entry.first_lba
    logical = []
    visited = set()
    ebr_lba = extended_start
    for _ in range(MAX_EBR_CHAIN):
        if ebr_lba in visited:
            raise MalformedTableError(
                f"EBR chain revisits sector {ebr_lba}")
        visited.add(ebr_lba)
        if (ebr_lba + 1) * SECTOR > device.size_bytes:
            raise MalformedTableError(
                f"EBR link points past the device (LBA {ebr_lba})")
        sector = device.read_at(ebr_lba * SECTOR, SECTOR)
        if sector[SIGNATURE_OFFSET:SIGNATURE_OFFSET + 2] != SIGNATURE:
            log.warning("EBR at LBA %d lacks a signature, stopping", ebr_lba)
            break
        first = _decode_entry(sector[TABLE_OFFSET:TABLE_OFFSET + ENTRY_SIZE])
        link = _decode_entry(
            sector[TABLE_OFFSET + ENTRY_SIZE:TABLE_OFFSET + 2 * ENTRY_SIZE])
        if first.partition_type != TYPE_EMPTY and first.sector_count > 0:
            logical.append(PartitionTableEntry(
                partition_type=first.partition_type,
                first_lba=ebr_lba + first.first_lba,
                sector_count=first.sector_count,
                bootable=first.bootable))
        if link.partition_type == TYPE_EMPTY or link.sector_count == 0:
            break
        ebr_lba = extended_start + link.first_lba
    else:
        raise MalformedTableError(
            f"EBR chain longer than {MAX_EBR_CHAIN} sectors")
    return logical


def discover_partitions(device):
    """Parse the MBR and every EBR chain on `device`.

    Returns a MasterBootRecord (primaries in `entries`, logicals in
    `logical_entries`) or None when sector 0 carries no table. A GPT
    protective entry (type EEh) is rejected outright. Entries reaching past
    the device are dropped with a warning rather than failing the whole
    table.
    """
    record = parse_mbr(device.read_at(0, SECTOR))
    if record is None:
        return None
    kept = []
    for entry in record.entries:
        if entry.partition_type == TYPE_GPT_PROTECTIVE:
            raise UnsupportedPartitionFormatError(
                "GPT protective MBR found; GPT is not supported")
        if entry.sector_count == 0:
            log.warning("dropping zero-length partition at LBA %d",
                        entry.first_lba)
            continue
        if entry.end_lba * SECTOR > device.size_bytes:
            log.warning(
                "dropping partition [%d, %d): reaches past the device",
                entry.first_lba, entry.end_lba)
            continue
        kept.append(entry)
        if entry.is_extended:
            record.logical_entries.extend(follow_ebr_chain(device, entry))
    record.entries = kept
    return record


class PartitionView(BlockDevice):
    """A partition exposed as its own zero-based block device.

    Pure translation: every access is shifted by base_lba and bounded by
    the entry's span, so neighbors can never be touched through a view.
    """

    def __init__(self, parent, entry):
        if entry.end_lba * SECTOR > parent.size_bytes:
            raise OutOfRangeError(
                f"partition [{entry.first_lba}, {entry.end_lba}) exceeds "
                f"the parent device")
        self.parent = parent
        self.entry = entry
        self.base_lba = entry.first_lba
        self.block_size = SECTOR
        self.block_count = entry.sector_count

    def read_at(self, offset, length):
        self._check_range(offset, length)
        return self.parent.read_at(self.base_lba * SECTOR + offset, length)

    def write_at(self, offset, data):
        self._check_range(offset, len(data))
        self.parent.write_at(self.base_lba * SECTOR + offset, data)
