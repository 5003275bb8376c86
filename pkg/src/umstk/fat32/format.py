"""Build a fresh FAT32 volume on a block device.

Layout follows common tooling: 32 reserved sectors, two mirrored FATs,
root directory at cluster 2, FSInfo in sector 1, backup boot sector at 6.
The official minimum cluster count that separates FAT32 from FAT16 is
deliberately not enforced; small test volumes self-identify as FAT32 by
construction.
"""

import logging
import os
import struct
from datetime import datetime

from ..errors import ImageSizeError
from . import entries, names
from .bootsector import FsInfo, parse_boot_sector, write_fsinfo
from .fat import END_OF_CHAIN

log = logging.getLogger("umstk.fat32")

SECTOR = 512
RESERVED_SECTORS = 32
NUM_FATS = 2
ROOT_CLUSTER = 2
FSINFO_SECTOR = 1
BACKUP_BOOT_SECTOR = 6
MIN_VOLUME_BYTES = 1 << 20

MEDIA_FIXED = 0xF8


def _fat_size_sectors(total_sectors, sectors_per_cluster):
    """Smallest FAT size (in sectors) covering every data cluster."""
    estimate = ((total_sectors - RESERVED_SECTORS) // sectors_per_cluster + 2) * 4
    fatsz = -(-estimate // SECTOR)
    while True:
        data = total_sectors - RESERVED_SECTORS - NUM_FATS * fatsz
        if (data // sectors_per_cluster + 2) * 4 <= fatsz * SECTOR:
            return fatsz
        fatsz += 1


def _build_boot_sector(total_sectors, sectors_per_cluster, fat_size, label11,
                       volume_id):
    b = bytearray(SECTOR)
    b[0:3] = b"\xeb\x58\x90"
    b[3:11] = b"UMSTK1.0"
    struct.pack_into("<H", b, 11, SECTOR)
    b[13] = sectors_per_cluster
    struct.pack_into("<H", b, 14, RESERVED_SECTORS)
    b[16] = NUM_FATS
    b[21] = MEDIA_FIXED
    struct.pack_into("<H", b, 24, 32)    # sectors per track, CHS relic
    struct.pack_into("<H", b, 26, 64)    # head count, CHS relic
    struct.pack_into("<I", b, 32, total_sectors)
    struct.pack_into("<I", b, 36, fat_size)
    struct.pack_into("<I", b, 44, ROOT_CLUSTER)
    struct.pack_into("<H", b, 48, FSINFO_SECTOR)
    struct.pack_into("<H", b, 50, BACKUP_BOOT_SECTOR)
    b[64] = 0x80  # BIOS drive number for a fixed disk
    b[66] = 0x29  # extended boot signature: volume id and label follow
    struct.pack_into("<I", b, 67, volume_id)
    b[71:82] = label11
    b[82:90] = b"FAT32   "
    b[510] = 0x55
    b[511] = 0xAA
    return bytes(b)


def format_volume(device, label=None, sectors_per_cluster=8, *,
                  volume_id=None, clock=None):
    """Write a complete empty FAT32 volume onto `device`.

    `label` lands in the boot sector and, when given, as a root VOLUME_ID
    entry as well. Returns the parsed boot sector of the fresh volume.
    """
    if sectors_per_cluster < 1 or sectors_per_cluster & (sectors_per_cluster - 1):
        raise ValueError("sectors per cluster must be a power of two")
    if sectors_per_cluster > 128:
        raise ValueError("clusters above 64 KiB are not valid FAT32")
    if device.size_bytes < MIN_VOLUME_BYTES:
        raise ImageSizeError(
            "device holds %d bytes; at least %d are needed"
            % (device.size_bytes, MIN_VOLUME_BYTES))
    total_sectors = device.size_bytes // SECTOR
    fat_size = _fat_size_sectors(total_sectors, sectors_per_cluster)
    cluster_count = (total_sectors - RESERVED_SECTORS
                     - NUM_FATS * fat_size) // sectors_per_cluster
    if cluster_count < 1:
        raise ImageSizeError("no room for even one data cluster")

    if volume_id is None:
        volume_id = struct.unpack("<I", os.urandom(4))[0]
    label11 = names.encode_volume_label(label) if label else b"NO NAME    "
    boot_raw = _build_boot_sector(total_sectors, sectors_per_cluster,
                                  fat_size, label11, volume_id)

    # wipe the reserved region, then lay the boot sector and its backup
    blank = bytes(SECTOR)
    for sector in range(RESERVED_SECTORS):
        device.write_at(sector * SECTOR, blank)
    device.write_at(0, boot_raw)
    device.write_at(BACKUP_BOOT_SECTOR * SECTOR, boot_raw)

    # both FATs: zeroed, then the two reserved entries plus the root chain
    chunk = bytes(1 << 17)
    fat_bytes = fat_size * SECTOR
    for copy in range(NUM_FATS):
        base = (RESERVED_SECTORS + copy * fat_size) * SECTOR
        written = 0
        while written < fat_bytes:
            n = min(len(chunk), fat_bytes - written)
            device.write_at(base + written, chunk[:n])
            written += n
        head = struct.pack("<III", 0x0FFFFF00 | MEDIA_FIXED, END_OF_CHAIN,
                           END_OF_CHAIN)
        device.write_at(base, head)

    # root directory: one zeroed cluster, plus the label entry when asked
    boot = parse_boot_sector(boot_raw)
    root_offset = boot.data_region_start * SECTOR
    cluster_bytes = sectors_per_cluster * SECTOR
    device.write_at(root_offset, bytes(cluster_bytes))
    if label:
        now = (clock or datetime.now)()
        date, time, _ = entries.encode_datetime(now)
        record = entries.DirEntry(
            name=label11, attributes=entries.ATTR_VOLUME_ID,
            written_time=time, written_date=date)
        device.write_at(root_offset, entries.encode_entry(record))

    write_fsinfo(device, boot, FsInfo(free_count=cluster_count - 1,
                                      next_free=ROOT_CLUSTER))
    log.info("formatted %d sectors: %d clusters of %d bytes, FAT %d sectors",
             total_sectors, cluster_count, cluster_bytes, fat_size)
    return boot
