"""Exception hierarchy shared by every layer of the stack.

Each layer raises its own subtree so callers (and the CLI's exit-code
mapping) can tell user-level problems apart from transport or I/O faults
without string matching.
"""


class UmstkError(Exception):
    """Base class for every error this package raises on purpose."""


# block devices

class BlockDeviceError(UmstkError):
    pass


class OutOfRangeError(BlockDeviceError):
    """A byte range falls outside the addressable device span."""


class ImageSizeError(BlockDeviceError):
    """Image length is not a whole number of blocks."""


# usb transport

class TransportError(UmstkError):
    pass


class PipeStalledError(TransportError):
    """An endpoint answered with a STALL handshake.

    Recoverable: the host clears the halt and carries on with the status
    phase. ``direction`` is ``"in"`` or ``"out"``.
    """

    def __init__(self, message="endpoint stalled", direction=None):
        super().__init__(message)
        self.direction = direction


class PipeClosedError(TransportError):
    """The pipe was closed; no further transfers are possible."""


# scsi, both host and target side

class ScsiError(UmstkError):
    pass


class FramingError(ScsiError):
    """Bytes do not form a valid CBW or CSW."""


class ScsiProtocolError(ScsiError):
    """The peer answered with something the protocol does not allow."""


class CommandFailedError(ScsiError):
    """The device reported a failed command (CSW status 1).

    Carries the sense data fetched afterwards, when available.
    """

    def __init__(self, message, sense=None):
        super().__init__(message)
        self.sense = sense


class PhaseError(ScsiError):
    """Host and device disagreed about the transfer phase (CSW status 2)."""


class UnsupportedDeviceError(ScsiError):
    """The peripheral is not a direct-access block device."""


class DeviceNotReadyError(ScsiError):
    """The unit never became ready within the retry budget."""

    def __init__(self, message, sense=None):
        super().__init__(message)
        self.sense = sense


# partition tables

class PartitionTableError(UmstkError):
    pass


class MalformedTableError(PartitionTableError):
    """The partition table or an EBR chain is structurally broken."""


class UnsupportedPartitionFormatError(PartitionTableError):
    """Recognized but unsupported partitioning scheme (GPT protective MBR)."""


# fat32

class Fat32Error(UmstkError):
    pass


class NotFat32Error(Fat32Error):
    """The volume does not carry a FAT32 boot sector."""


class CorruptChainError(Fat32Error):
    """A cluster chain links into free/reserved/bad territory or loops."""


class NoSpaceError(Fat32Error):
    """Not enough free clusters to satisfy an allocation."""


class FileTooLargeError(Fat32Error):
    """Operation would push a file past the 4 GiB - 1 size limit."""


class InvalidNameError(Fat32Error):
    """Name violates the long-file-name rules."""


class ShortNameExhaustedError(Fat32Error):
    """No free ~N short-name variant below the search bound."""


class DirectoryNotEmptyError(Fat32Error):
    """Refusing to delete a directory that still has children."""


class DuplicateNameError(Fat32Error):
    """The directory already holds an entry with that name."""


class NoSuchPathError(Fat32Error):
    """A path component does not exist in the volume."""
