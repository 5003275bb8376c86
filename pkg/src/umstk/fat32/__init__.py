"""FAT32: boot sector and FSInfo codecs, FAT chain management, directory
and long-name entry codecs, and the mutable file/directory tree."""

from .bootsector import (Fat32BootSector, FsInfo, parse_boot_sector,
                         read_fsinfo, write_fsinfo)
from .chain import ClusterChain, cluster_to_byte_offset
from .fat import Fat
from .format import format_volume
from .tree import DIRECTORY, FILE, MAX_FILE_SIZE, Fat32FileSystem, FatNode

__all__ = [
    "Fat32BootSector", "FsInfo", "parse_boot_sector", "read_fsinfo",
    "write_fsinfo", "ClusterChain", "cluster_to_byte_offset", "Fat",
    "format_volume", "DIRECTORY", "FILE", "MAX_FILE_SIZE",
    "Fat32FileSystem", "FatNode",
]
