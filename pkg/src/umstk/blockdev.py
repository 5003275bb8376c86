"""Block-addressed storage abstraction.

Every layer above (SCSI target backing, partition views, FAT32) talks to one
of these. The API is byte-granular because the structures that sit on top
address fields by byte offset (partition table at 446, boot sector fields at
11 and friends); the device resolves byte ranges against block-aligned
storage internally.

A device instance is single-owner: it may be handed between threads but must
not be used concurrently.
"""

import os

from .errors import ImageSizeError, OutOfRangeError

DEFAULT_BLOCK_SIZE = 512


class BlockDevice:
    """Abstract uniform block storage.

    Subclasses set ``block_size`` and ``block_count`` and implement the two
    raw accessors. ``block_size`` is bytes per block (positive, typically
    512); the addressable byte range is exactly block_size * block_count.
    """

    block_size = DEFAULT_BLOCK_SIZE
    block_count = 0

    @property
    def size_bytes(self):
        return self.block_size * self.block_count

    def _check_range(self, offset, length):
        if offset < 0 or length < 0:
            raise OutOfRangeError(f"negative range ({offset}, {length})")
        if offset + length > self.size_bytes:
            raise OutOfRangeError(
                f"range [{offset}, {offset + length}) exceeds device size "
                f"{self.size_bytes}"
            )

    def read_at(self, offset, length):
        """Return exactly `length` bytes starting at byte `offset`."""
        raise NotImplementedError

    def write_at(self, offset, data):
        """Write `data` at byte `offset`; bytes outside the range unchanged."""
        raise NotImplementedError


class MemoryDevice(BlockDevice):
    """RAM-backed device, mainly for tests and the self-test suite."""

    def __init__(self, size_bytes=None, block_size=DEFAULT_BLOCK_SIZE, data=None):
        if block_size <= 0:
            raise ValueError("block_size must be positive")
        if data is None:
            if size_bytes is None:
                raise ValueError("size_bytes or data required")
            data = bytearray(size_bytes)
        else:
            data = bytearray(data)
        if len(data) % block_size:
            raise ImageSizeError(
                f"{len(data)} bytes is not a multiple of block size {block_size}"
            )
        self.block_size = block_size
        self.block_count = len(data) // block_size
        self._data = data

    def read_at(self, offset, length):
        self._check_range(offset, length)
        return bytes(self._data[offset:offset + length])

    def write_at(self, offset, data):
        self._check_range(offset, len(data))
        self._data[offset:offset + len(data)] = data


class FileBackedDevice(BlockDevice):
    """Raw disk-image file exposed as a block device.

    The image length must be a whole multiple of block_size; anything else
    is rejected at construction time.
    """

    def __init__(self, path, block_size=DEFAULT_BLOCK_SIZE, read_only=False):
        if block_size <= 0:
            raise ValueError("block_size must be positive")
        size = os.path.getsize(path)
        if size % block_size:
            raise ImageSizeError(
                f"{path}: {size} bytes is not a multiple of block size {block_size}"
            )
        self.path = path
        self.block_size = block_size
        self.block_count = size // block_size
        self.read_only = read_only
        self._fh = open(path, "rb" if read_only else "r+b")

    def read_at(self, offset, length):
        self._check_range(offset, length)
        self._fh.seek(offset)
        data = self._fh.read(length)
        if len(data) != length:
            raise OutOfRangeError(f"short read at {offset}: {len(data)}/{length}")
        return data

    def write_at(self, offset, data):
        if self.read_only:
            raise PermissionError(f"{self.path} opened read-only")
        self._check_range(offset, len(data))
        self._fh.seek(offset)
        self._fh.write(data)

    def flush(self):
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_image(path, block_size=DEFAULT_BLOCK_SIZE, create_size=None,
               read_only=False):
    """Open (or create) a raw image file as a FileBackedDevice.

    When `create_size` is given and the file does not exist, a zero-filled
    image of that many bytes is created first. create_size must itself be a
    multiple of block_size.
    """
    if create_size is not None and not os.path.exists(path):
        if create_size <= 0 or create_size % block_size:
            raise ImageSizeError(
                f"requested size {create_size} is not a positive multiple "
                f"of block size {block_size}"
            )
        with open(path, "wb") as fh:
            fh.truncate(create_size)
    return FileBackedDevice(path, block_size, read_only=read_only)
