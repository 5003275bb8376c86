"""Wire records for bulk-only transport and the SCSI transparent command set.

Wrapper fields (CBW/CSW) are little-endian; multi-byte fields inside a SCSI
command block are big-endian. Both encode and decode directions live here so
the host driver and the target emulator share one codec surface.
"""

import struct
from dataclasses import dataclass

from ..errors import FramingError, ScsiProtocolError

CBW_SIGNATURE = 0x43425355
CSW_SIGNATURE = 0x53425355
CBW_LENGTH = 31
CSW_LENGTH = 13

FLAG_DATA_IN = 0x80

STATUS_PASSED = 0
STATUS_FAILED = 1
STATUS_PHASE_ERROR = 2

OP_TEST_UNIT_READY = 0x00
OP_REQUEST_SENSE = 0x03
OP_INQUIRY = 0x12
OP_READ_CAPACITY_10 = 0x25
OP_READ_10 = 0x28
OP_WRITE_10 = 0x2A

SENSE_KEY_NO_SENSE = 0x0
SENSE_KEY_NOT_READY = 0x2
SENSE_KEY_MEDIUM_ERROR = 0x3
SENSE_KEY_ILLEGAL_REQUEST = 0x5
SENSE_KEY_UNIT_ATTENTION = 0x6
SENSE_KEY_ABORTED_COMMAND = 0xB

ASC_INVALID_OPCODE = 0x20
ASC_LBA_OUT_OF_RANGE = 0x21
ASC_LUN_NOT_SUPPORTED = 0x25

# default identity strings reported by the emulated target
INQUIRY_VENDOR = b"UMSTK   "
INQUIRY_PRODUCT = b"MASS STORAGE EMU"
INQUIRY_REVISION = b"1.0 "

_CBW_HEAD = struct.Struct("<IIIBBB")
_CSW = struct.Struct("<IIIB")


@dataclass(frozen=True)
class CommandBlockWrapper:
    """31-byte command frame. `command_block` holds the unpadded command."""

    tag: int
    data_transfer_length: int
    flags: int
    lun: int
    command_block: bytes

    @property
    def direction(self):
        if self.data_transfer_length == 0:
            return None
        return "in" if self.flags & FLAG_DATA_IN else "out"


@dataclass(frozen=True)
class CommandStatusWrapper:
    """13-byte status frame echoing the transaction tag."""

    tag: int
    data_residue: int
    status: int


def serialize_cbw(cbw):
    cb = bytes(cbw.command_block)
    if not 1 <= len(cb) <= 16:
        raise FramingError(f"command block length {len(cb)} outside 1..16")
    if not 0 <= cbw.lun <= 15:
        raise FramingError(f"LUN {cbw.lun} outside 0..15")
    return _CBW_HEAD.pack(CBW_SIGNATURE, cbw.tag, cbw.data_transfer_length,
                          cbw.flags, cbw.lun, len(cb)) + cb.ljust(16, b"\x00")


def parse_cbw(raw):
    if len(raw) != CBW_LENGTH:
        raise FramingError(f"CBW must be 31 bytes, got {len(raw)}")
    sig, tag, length, flags, lun, cb_length = _CBW_HEAD.unpack_from(raw)
    if sig != CBW_SIGNATURE:
        raise FramingError(f"bad CBW signature {sig:#010x}")
    if not 1 <= cb_length <= 16:
        raise FramingError(f"command block length {cb_length} outside 1..16")
    if lun > 15:
        raise FramingError(f"LUN field {lun} outside 0..15")
    return CommandBlockWrapper(tag=tag, data_transfer_length=length,
                               flags=flags, lun=lun,
                               command_block=raw[15:15 + cb_length])


def serialize_csw(tag, residue, status):
    return _CSW.pack(CSW_SIGNATURE, tag, residue, status)


def parse_csw(raw, expected_tag=None):
    if len(raw) != CSW_LENGTH:
        raise FramingError(f"CSW must be 13 bytes, got {len(raw)}")
    sig, tag, residue, status = _CSW.unpack(raw)
    if sig != CSW_SIGNATURE:
        raise FramingError(f"bad CSW signature {sig:#010x}")
    if status > STATUS_PHASE_ERROR:
        raise ScsiProtocolError(f"CSW status byte {status} outside 0..2")
    if expected_tag is not None and tag != expected_tag:
        raise ScsiProtocolError(
            f"CSW tag {tag:#x} does not echo CBW tag {expected_tag:#x}")
    return CommandStatusWrapper(tag=tag, data_residue=residue, status=status)


def _check_range(name, value, maximum):
    if not 0 <= value <= maximum:
        raise ValueError(f"{name} {value} outside 0..{maximum}")


@dataclass(frozen=True)
class Inquiry:
    allocation_length: int = 36
    evpd: int = 0
    page_code: int = 0
    control: int = 0
    direction = "in"

    def encode(self):
        _check_range("allocation_length", self.allocation_length, 0xFFFF)
        return struct.pack(">BBBHB", OP_INQUIRY, self.evpd & 1,
                           self.page_code, self.allocation_length,
                           self.control)

    def data_length(self, block_size):
        return self.allocation_length


@dataclass(frozen=True)
class TestUnitReady:
    control: int = 0
    direction = None

    def encode(self):
        return struct.pack(">BIB", OP_TEST_UNIT_READY, 0, self.control)

    def data_length(self, block_size):
        return 0


@dataclass(frozen=True)
class ReadCapacity10:
    lba: int = 0
    pmi: int = 0
    control: int = 0
    direction = "in"

    def encode(self):
        _check_range("lba", self.lba, 0xFFFFFFFF)
        return struct.pack(">BBIHBB", OP_READ_CAPACITY_10, 0, self.lba, 0,
                           self.pmi & 1, self.control)

    def data_length(self, block_size):
        return 8


@dataclass(frozen=True)
class Read10:
    lba: int
    transfer_blocks: int
    control: int = 0
    direction = "in"
    _opcode = OP_READ_10

    def encode(self):
        _check_range("lba", self.lba, 0xFFFFFFFF)
        _check_range("transfer_blocks", self.transfer_blocks, 0xFFFF)
        return struct.pack(">BBIBHB", self._opcode, 0, self.lba, 0,
                           self.transfer_blocks, self.control)

    def data_length(self, block_size):
        return self.transfer_blocks * block_size


@dataclass(frozen=True)
class Write10(Read10):
    direction = "out"
    _opcode = OP_WRITE_10


@dataclass(frozen=True)
class RequestSense:
    allocation_length: int = 252
    desc: int = 0
    control: int = 0
    direction = "in"

    def encode(self):
        _check_range("allocation_length", self.allocation_length, 0xFF)
        return struct.pack(">BBHBB", OP_REQUEST_SENSE, self.desc & 1, 0,
                           self.allocation_length, self.control)

    def data_length(self, block_size):
        return self.allocation_length


def build_scsi_command(command):
    """Encode any of the command records to its 6- or 10-byte block."""
    return command.encode()


def make_cbw(command, tag, lun=0, block_size=512):
    """Frame a command record into a CBW with derived length and flags."""
    length = command.data_length(block_size)
    flags = FLAG_DATA_IN if (length and command.direction == "in") else 0
    return CommandBlockWrapper(tag=tag, data_transfer_length=length,
                               flags=flags, lun=lun,
                               command_block=command.encode())


@dataclass(frozen=True)
class InquiryData:
    peripheral_device_type: int
    peripheral_qualifier: int
    removable: bool
    version: int
    response_data_format: int
    additional_length: int
    vendor: bytes
    product: bytes
    revision: bytes


def build_inquiry_data(vendor=INQUIRY_VENDOR, product=INQUIRY_PRODUCT,
                       revision=INQUIRY_REVISION, peripheral_device_type=0,
                       removable=True):
    """36-byte standard data block for a direct-access device.

    Version byte 4 declares SPC-2 conformance; response data format is 2
    (lower values are obsolete).
    """
    if len(vendor) != 8 or len(product) != 16 or len(revision) != 4:
        raise ValueError("identity strings must be 8/16/4 bytes")
    return (bytes([peripheral_device_type & 0x1F,
                   0x80 if removable else 0x00,
                   0x04,
                   0x02,
                   31, 0, 0, 0])
            + vendor + product + revision)


def parse_inquiry_data(raw):
    if len(raw) < 36:
        raise ScsiProtocolError(
            f"standard INQUIRY data needs 36 bytes, got {len(raw)}")
    rdf = raw[3] & 0x0F
    if rdf != 2:
        raise ScsiProtocolError(f"obsolete INQUIRY response data format {rdf}")
    return InquiryData(
        peripheral_device_type=raw[0] & 0x1F,
        peripheral_qualifier=raw[0] >> 5,
        removable=bool(raw[1] & 0x80),
        version=raw[2],
        response_data_format=rdf,
        additional_length=raw[4],
        vendor=raw[8:16],
        product=raw[16:32],
        revision=raw[32:36],
    )


@dataclass(frozen=True)
class CapacityData:
    last_lba: int
    block_length: int

    @property
    def block_count(self):
        return self.last_lba + 1


def build_capacity_data(last_lba, block_length):
    return struct.pack(">II", last_lba, block_length)


def parse_capacity_data(raw):
    if len(raw) < 8:
        raise ScsiProtocolError(f"capacity data needs 8 bytes, got {len(raw)}")
    last_lba, block_length = struct.unpack_from(">II", raw)
    return CapacityData(last_lba=last_lba, block_length=block_length)


@dataclass(frozen=True)
class SenseData:
    response_code: int
    valid: bool
    sense_key: int
    information: int
    additional_sense_length: int
    additional_sense_code: int
    additional_sense_code_qualifier: int
    sense_key_specific: bytes  # bytes 15..17, exposed raw


def build_sense_data(sense_key, asc=0, ascq=0, information=0, valid=False):
    """18-byte fixed-format sense block, current-error response code 70h."""
    block = bytearray(18)
    block[0] = 0x70 | (0x80 if valid else 0)
    block[2] = sense_key & 0x0F
    block[3:7] = struct.pack(">I", information)
    block[7] = 10  # additional length: bytes that follow byte 7
    block[12] = asc
    block[13] = ascq
    return bytes(block)


def parse_sense_data(raw):
    if len(raw) < 18:
        raise ScsiProtocolError(
            f"fixed-format sense data needs 18 bytes, got {len(raw)}")
    return SenseData(
        response_code=raw[0] & 0x7F,
        valid=bool(raw[0] & 0x80),
        sense_key=raw[2] & 0x0F,
        information=struct.unpack_from(">I", raw, 3)[0],
        additional_sense_length=raw[7],
        additional_sense_code=raw[12],
        additional_sense_code_qualifier=raw[13],
        sense_key_specific=bytes(raw[15:18]),
    )


SENSE_KEY_NAMES = {
    0x0: "NO SENSE",
    0x1: "RECOVERED ERROR",
    0x2: "NOT READY",
    0x3: "MEDIUM ERROR",
    0x4: "HARDWARE ERROR",
    0x5: "ILLEGAL REQUEST",
    0x6: "UNIT ATTENTION",
    0x7: "DATA PROTECT",
    0xB: "ABORTED COMMAND",
}


def describe_sense(sense):
    name = SENSE_KEY_NAMES.get(sense.sense_key, f"key {sense.sense_key:#x}")
    return (f"{name} (asc {sense.additional_sense_code:#04x}, "
            f"ascq {sense.additional_sense_code_qualifier:#04x})")
