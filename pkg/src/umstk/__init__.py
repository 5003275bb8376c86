"""USB mass-storage stack over raw disk images.

Layers, bottom to top: block devices, a bulk-pipe transport with an
in-memory loopback, a bulk-only-transport SCSI host driver plus a matching
target emulator, MBR partition handling, and a read/write FAT32 filesystem.
"""

__version__ = "0.1.0"

from .blockdev import BlockDevice, FileBackedDevice, MemoryDevice, open_image
from .errors import UmstkError

__all__ = [
    "BlockDevice",
    "FileBackedDevice",
    "MemoryDevice",
    "open_image",
    "UmstkError",
    "__version__",
]
