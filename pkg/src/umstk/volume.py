"""Locating the FAT32 volume inside a raw image.

Images come in two shapes: a bare volume whose boot sector sits at LBA 0,
or a partitioned disk whose MBR points at the volume. A bare FAT32 boot
sector also carries the 55AAh signature an MBR has, so the boot-sector
check runs first; the reverse misreading (treating stray MBR boot code as
a BPB) is blocked by the boot sector's stricter field validation.
"""

import logging

from .errors import NotFat32Error, PartitionTableError
from .fat32.bootsector import parse_boot_sector
from .mbr import PartitionView, discover_partitions

log = logging.getLogger("umstk.volume")


def usable_partitions(table):
    """FAT-mountable slots: primaries minus extended containers, plus logicals."""
    return [e for e in table.entries if not e.is_extended] + table.logical_entries


def open_volume(device, partition=0):
    """Find the volume: returns (volume block device, table or None).

    A bare volume returns the device itself; a partitioned image returns a
    view of the requested partition (index over primaries then logicals, in
    table order).
    """
    sector0 = device.read_at(0, 512)
    try:
        parse_boot_sector(sector0)
    except NotFat32Error:
        pass
    else:
        log.info("image is a bare volume (boot sector at LBA 0)")
        if partition:
            raise PartitionTableError(
                "image has no partition table; only partition 0 exists")
        return device, None
    table = discover_partitions(device)
    if table is None:
        raise NotFat32Error(
            "sector 0 is neither a FAT32 boot sector nor a partition table")
    slots = usable_partitions(table)
    if not slots:
        raise PartitionTableError("partition table holds no usable partitions")
    if not 0 <= partition < len(slots):
        raise PartitionTableError(
            "partition %d requested but the image holds %d"
            % (partition, len(slots)))
    entry = slots[partition]
    log.info("using partition %d: type %02Xh at LBA %d, %d sectors",
             partition, entry.partition_type, entry.first_lba,
             entry.sector_count)
    return PartitionView(device, entry), table
