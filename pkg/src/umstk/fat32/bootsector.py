"""FAT32 boot sector and FSInfo sector codecs.

The boot sector holds the volume geometry; everything else is derived from
it. FSInfo caches a free-cluster count and a next-free hint, both of which
are allowed to be unknown (FFFFFFFFh) and must then be recomputed by
scanning the FAT.
"""

import logging
import struct

from ..errors import NotFat32Error

log = logging.getLogger("umstk.fat32")

BOOT_SIGNATURE = b"\x55\xaa"
BOOT_SIGNATURE_OFFSET = 510

FSINFO_LEAD_SIG = 0x41615252
FSINFO_STRUC_SIG = 0x61417272
FSINFO_TRAIL_SIG = 0xAA550000
UNKNOWN = 0xFFFFFFFF

VALID_SECTOR_SIZES = (512, 1024, 2048, 4096)


class Fat32BootSector:
    """Decoded boot sector plus the raw bytes it came from.

    The raw sector is kept so label updates can be re-serialized without
    touching fields this library does not own (OEM name, boot code, the
    FAT16 relics in the middle of the BPB).
    """

    def __init__(self, raw):
        self.raw = bytearray(raw)
        b = self.raw
        self.bytes_per_sector = struct.unpack_from("<H", b, 11)[0]
        self.sectors_per_cluster = b[13]
        self.reserved_sector_count = struct.unpack_from("<H", b, 14)[0]
        self.num_fats = b[16]
        self.total_sectors = struct.unpack_from("<I", b, 32)[0]
        self.fat_size_sectors = struct.unpack_from("<I", b, 36)[0]
        self.ext_flags = struct.unpack_from("<H", b, 40)[0]
        self.root_cluster = struct.unpack_from("<I", b, 44)[0]
        self.fsinfo_sector = struct.unpack_from("<H", b, 48)[0]
        self.backup_boot_sector = struct.unpack_from("<H", b, 50)[0]
        self.volume_label = bytes(b[71:82])

    # ext_flags bit 7 set means mirroring is off and bits 0-3 pick the
    # one live FAT copy; otherwise every copy is kept in sync.
    @property
    def mirroring_enabled(self):
        return not self.ext_flags & 0x80

    @property
    def active_fat(self):
        if self.mirroring_enabled:
            return 0
        return self.ext_flags & 0x0F

    @property
    def fat_region_start(self):
        return self.reserved_sector_count

    @property
    def data_region_start(self):
        """First data sector: reserved region plus all FAT copies."""
        return self.reserved_sector_count + self.num_fats * self.fat_size_sectors

    @property
    def cluster_size_bytes(self):
        return self.bytes_per_sector * self.sectors_per_cluster

    @property
    def cluster_count(self):
        """Number of data clusters the volume actually has room for."""
        data_sectors = self.total_sectors - self.data_region_start
        if data_sectors < 0:
            return 0
        return data_sectors // self.sectors_per_cluster

    @property
    def entry_count(self):
        """One past the highest valid cluster number (clusters start at 2)."""
        return self.cluster_count + 2

    def fat_offset_bytes(self, copy):
        """Byte offset of FAT copy `copy` from the start of the volume."""
        if not 0 <= copy < self.num_fats:
            raise ValueError("no FAT copy %d" % copy)
        start = self.reserved_sector_count + copy * self.fat_size_sectors
        return start * self.bytes_per_sector

    def set_volume_label(self, label11):
        if len(label11) != 11:
            raise ValueError("boot sector label must be exactly 11 bytes")
        self.raw[71:82] = label11
        self.volume_label = bytes(label11)


def parse_boot_sector(sector):
    """Decode and validate sector 0 of a FAT32 volume.

    Raises NotFat32Error when the sector cannot be a FAT32 boot sector:
    bad signature, impossible sector size, non-power-of-two cluster size,
    or geometry fields that would make the layout degenerate.
    """
    if len(sector) < 512:
        raise NotFat32Error("boot sector shorter than 512 bytes")
    if bytes(sector[BOOT_SIGNATURE_OFFSET:BOOT_SIGNATURE_OFFSET + 2]) != BOOT_SIGNATURE:
        raise NotFat32Error("boot sector signature 55AAh missing")
    boot = Fat32BootSector(sector[:512])
    if boot.bytes_per_sector not in VALID_SECTOR_SIZES:
        raise NotFat32Error(
            "bytes per sector %d not one of %s"
            % (boot.bytes_per_sector, list(VALID_SECTOR_SIZES)))
    spc = boot.sectors_per_cluster
    if spc == 0 or spc & (spc - 1):
        raise NotFat32Error("sectors per cluster %d is not a power of two" % spc)
    if boot.reserved_sector_count == 0:
        raise NotFat32Error("reserved sector count is zero")
    if boot.num_fats == 0:
        raise NotFat32Error("FAT copy count is zero")
    if boot.fat_size_sectors == 0:
        raise NotFat32Error("32-bit FAT size is zero (not a FAT32 volume)")
    if boot.total_sectors == 0:
        raise NotFat32Error("total sector count is zero")
    if boot.root_cluster < 2:
        raise NotFat32Error("root cluster %d below 2" % boot.root_cluster)
    if boot.cluster_count == 0:
        raise NotFat32Error("volume has no data clusters")
    return boot


class FsInfo:
    """Free-count / next-free pair from the FSInfo sector.

    Either value may be UNKNOWN (FFFFFFFFh), which callers must treat as
    "go count it yourself".
    """

    def __init__(self, free_count=UNKNOWN, next_free=UNKNOWN):
        self.free_count = free_count
        self.next_free = next_free

    def __repr__(self):
        return "FsInfo(free_count=%#x, next_free=%#x)" % (
            self.free_count, self.next_free)


def read_fsinfo(device, boot):
    """Read the FSInfo sector; degrade to unknown counts on bad signatures."""
    offset = boot.fsinfo_sector * boot.bytes_per_sector
    raw = device.read_at(offset, 512)
    lead, = struct.unpack_from("<I", raw, 0)
    struc, = struct.unpack_from("<I", raw, 484)
    trail, = struct.unpack_from("<I", raw, 508)
    if lead != FSINFO_LEAD_SIG or struc != FSINFO_STRUC_SIG or trail != FSINFO_TRAIL_SIG:
        log.warning("FSInfo signatures invalid, treating counts as unknown")
        return FsInfo()
    free, nxt = struct.unpack_from("<II", raw, 488)
    return FsInfo(free, nxt)


def write_fsinfo(device, boot, info):
    """Write the FSInfo sector, plus the backup copy when one exists."""
    sector = bytearray(boot.bytes_per_sector)
    struct.pack_into("<I", sector, 0, FSINFO_LEAD_SIG)
    struct.pack_into("<I", sector, 484, FSINFO_STRUC_SIG)
    struct.pack_into("<II", sector, 488, info.free_count, info.next_free)
    struct.pack_into("<I", sector, 508, FSINFO_TRAIL_SIG)
    device.write_at(boot.fsinfo_sector * boot.bytes_per_sector, bytes(sector))
    if boot.backup_boot_sector:
        backup = (boot.backup_boot_sector + boot.fsinfo_sector) * boot.bytes_per_sector
        device.write_at(backup, bytes(sector))
