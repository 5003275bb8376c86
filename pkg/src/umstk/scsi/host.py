"""Bulk-only-transport host driver.

Frames SCSI commands in CBWs, runs the CBW / data / CSW sequence over a
BulkPipe, handles stall and phase-error recovery, and exposes the device as
a byte-addressable BlockDevice.
"""

import logging
import time

from ..blockdev import BlockDevice
from ..errors import (CommandFailedError, DeviceNotReadyError, OutOfRangeError,
                      PhaseError, PipeStalledError, ScsiProtocolError,
                      TransportError, UnsupportedDeviceError)
from ..transport import ControlRequest
from . import commands as sc

log = logging.getLogger("umstk.host")

# transfer length is a 16-bit block count; longer spans need several commands
MAX_BLOCKS_PER_COMMAND = 0xFFFF

TUR_RETRIES = 20
TUR_RETRY_DELAY = 0.05


def reset_recovery(pipe):
    """Bulk-only reset, then clear both endpoint halts, in that order."""
    log.info("running reset recovery")
    try:
        pipe.control(ControlRequest.BULK_ONLY_RESET)
        pipe.control(ControlRequest.CLEAR_HALT_IN)
        pipe.control(ControlRequest.CLEAR_HALT_OUT)
    except TransportError as exc:
        raise TransportError(f"reset recovery failed: {exc}") from exc


def _read_csw(pipe, expected_tag):
    raw = bytearray(sc.CSW_LENGTH)
    try:
        n = pipe.bulk_in(raw, 0, sc.CSW_LENGTH)
    except PipeStalledError:
        # one retry after clearing the halt, per the recovery sequence
        pipe.control(ControlRequest.CLEAR_HALT_IN)
        n = pipe.bulk_in(raw, 0, sc.CSW_LENGTH)
    return sc.parse_csw(bytes(raw[:n]), expected_tag)


def transfer_command(pipe, cbw, data=None):
    """Run one three-phase transaction; returns the parsed CSW.

    `data` is the payload bytes for an OUT command or a mutable buffer of
    dCBWDataTransferLength bytes an IN command fills in place. The CSW is
    returned for status 0 and 1; status 2 triggers reset recovery and
    raises PhaseError.
    """
    pipe.bulk_out(sc.serialize_cbw(cbw), 0, sc.CBW_LENGTH)

    received = 0
    direction = cbw.direction
    if direction == "out":
        if data is None or len(data) != cbw.data_transfer_length:
            raise ValueError("OUT payload must match dCBWDataTransferLength")
        try:
            pipe.bulk_out(data, 0, len(data))
        except PipeStalledError:
            log.info("OUT data phase stalled, clearing halt")
            pipe.control(ControlRequest.CLEAR_HALT_OUT)
    elif direction == "in":
        if data is None or len(data) != cbw.data_transfer_length:
            raise ValueError("IN buffer must match dCBWDataTransferLength")
        try:
            received = pipe.bulk_in(data, 0, len(data))
        except PipeStalledError:
            log.info("IN data phase stalled, clearing halt")
            pipe.control(ControlRequest.CLEAR_HALT_IN)

    csw = _read_csw(pipe, cbw.tag)
    if csw.status == sc.STATUS_PHASE_ERROR:
        reset_recovery(pipe)
        raise PhaseError(f"device reported phase error for tag {cbw.tag:#x}")
    if csw.status == sc.STATUS_PASSED:
        if direction == "in":
            expected = cbw.data_transfer_length - csw.data_residue
            if received < expected:
                raise ScsiProtocolError(
                    f"device sent {received} bytes but the CSW accounts for "
                    f"{expected}")
        elif direction == "out" and csw.data_residue:
            raise ScsiProtocolError(
                f"device left {csw.data_residue} bytes of a passed write "
                f"unprocessed")
    return csw


def request_sense(pipe, *, tag, lun=0, alloc=252):
    """Fetch fixed-format sense data after a failed command."""
    command = sc.RequestSense(allocation_length=alloc)
    buffer = bytearray(command.data_length(0))
    csw = transfer_command(pipe, sc.make_cbw(command, tag=tag, lun=lun),
                           buffer)
    got = len(buffer) - csw.data_residue
    if csw.status != sc.STATUS_PASSED or got < 18:
        raise ScsiProtocolError(
            f"REQUEST SENSE returned status {csw.status} with {got} bytes")
    return sc.parse_sense_data(bytes(buffer[:got]))


class ScsiBlockDevice(BlockDevice):
    """A ready LUN behind a BulkPipe, addressed like local storage.

    Construct via init_device(); block_size and block_count come from READ
    CAPACITY. Tags increase by one per command for the life of the session.
    """

    def __init__(self, pipe, lun=0):
        self._pipe = pipe
        self.lun = lun
        self.identity = None
        self.max_lun = 0
        self._tag = 0

    def _next_tag(self):
        self._tag += 1
        return self._tag

    @property
    def last_tag(self):
        return self._tag

    def _run(self, command, data=None, fetch_sense_on_failure=True):
        """Issue one command; on CSW status 1 attach sense data and raise."""
        cbw = sc.make_cbw(command, tag=self._next_tag(), lun=self.lun,
                          block_size=self.block_size or 512)
        csw = transfer_command(self._pipe, cbw, data)
        if csw.status == sc.STATUS_FAILED:
            sense = None
            if fetch_sense_on_failure:
                try:
                    sense = self.request_sense()
                except ScsiProtocolError:
                    log.warning("sense fetch after failed tag %d also failed",
                                cbw.tag)
            detail = sc.describe_sense(sense) if sense else "no sense data"
            raise CommandFailedError(
                f"{type(command).__name__} failed: {detail}", sense=sense)
        return csw

    # discovery commands

    def inquiry(self, alloc=36):
        buffer = bytearray(alloc)
        csw = self._run(sc.Inquiry(allocation_length=alloc), buffer)
        got = alloc - csw.data_residue
        data = sc.parse_inquiry_data(bytes(buffer[:got]))
        self.identity = data
        return data

    def test_unit_ready(self):
        self._run(sc.TestUnitReady())

    def read_capacity(self):
        buffer = bytearray(8)
        self._run(sc.ReadCapacity10(), buffer)
        return sc.parse_capacity_data(bytes(buffer))

    def request_sense(self, alloc=252):
        return request_sense(self._pipe, tag=self._next_tag(), lun=self.lun,
                             alloc=alloc)

    # block I/O

    def read_blocks(self, lba, count):
        """Read `count` whole blocks starting at `lba`."""
        if lba < 0 or count < 0 or lba + count > self.block_count:
            raise OutOfRangeError(
                f"blocks [{lba}, {lba + count}) outside device of "
                f"{self.block_count}")
        out = bytearray()
        remaining, at = count, lba
        while remaining:
            chunk = min(remaining, MAX_BLOCKS_PER_COMMAND)
            buffer = bytearray(chunk * self.block_size)
            csw = self._run(sc.Read10(lba=at, transfer_blocks=chunk), buffer)
            if csw.data_residue:
                raise ScsiProtocolError(
                    f"short read: residue {csw.data_residue} on a passed "
                    f"READ(10)")
            out += buffer
            at += chunk
            remaining -= chunk
        return bytes(out)

    def write_blocks(self, lba, data):
        """Write whole blocks starting at `lba`."""
        if len(data) % self.block_size:
            raise ValueError(
                f"write of {len(data)} bytes is not a whole block multiple")
        count = len(data) // self.block_size
        if lba < 0 or lba + count > self.block_count:
            raise OutOfRangeError(
                f"blocks [{lba}, {lba + count}) outside device of "
                f"{self.block_count}")
        at, done = lba, 0
        while done < count:
            chunk = min(count - done, MAX_BLOCKS_PER_COMMAND)
            payload = bytes(data[done * self.block_size:
                                 (done + chunk) * self.block_size])
            self._run(sc.Write10(lba=at, transfer_blocks=chunk), payload)
            at += chunk
            done += chunk

    # byte-granular BlockDevice surface (read-modify-write at the edges)

    def read_at(self, offset, length):
        self._check_range(offset, length)
        if length == 0:
            return b""
        first = offset // self.block_size
        last = (offset + length - 1) // self.block_size
        raw = self.read_blocks(first, last - first + 1)
        skip = offset - first * self.block_size
        return raw[skip:skip + length]

    def write_at(self, offset, data):
        self._check_range(offset, len(data))
        if not data:
            return
        bs = self.block_size
        first = offset // bs
        last = (offset + len(data) - 1) // bs
        span_start = first * bs
        span_len = (last - first + 1) * bs
        head = offset - span_start
        if head == 0 and len(data) == span_len:
            self.write_blocks(first, data)
            return
        merged = bytearray(self.read_blocks(first, last - first + 1))
        merged[head:head + len(data)] = data
        self.write_blocks(first, bytes(merged))

    def close(self):
        self._pipe.close()


def init_device(pipe, *, retries=TUR_RETRIES, retry_delay=TUR_RETRY_DELAY,
                sleep=time.sleep):
    """Bring up the device: INQUIRY, wait for ready, read the capacity.

    Returns a ScsiBlockDevice for LUN 0. Non-disk peripherals are rejected;
    a unit that stays not-ready past the retry budget raises
    DeviceNotReadyError carrying the last sense data.
    """
    device = ScsiBlockDevice(pipe)
    device.block_size = 512  # provisional until READ CAPACITY answers

    identity = device.inquiry(alloc=36)
    if identity.peripheral_device_type == 5:
        raise UnsupportedDeviceError(
            "peripheral type 5 is a CD/DVD drive, not a direct-access device")
    if identity.peripheral_device_type != 0:
        raise UnsupportedDeviceError(
            f"peripheral type {identity.peripheral_device_type:#x} is not a "
            f"direct-access block device")

    last_sense = None
    for attempt in range(retries):
        try:
            device.test_unit_ready()
            break
        except CommandFailedError as exc:
            last_sense = exc.sense
            log.info("unit not ready (attempt %d/%d)", attempt + 1, retries)
            sleep(retry_delay)
    else:
        raise DeviceNotReadyError(
            f"unit still not ready after {retries} attempts",
            sense=last_sense)

    capacity = device.read_capacity()
    device.block_size = capacity.block_length
    device.block_count = capacity.block_count
    device.max_lun = pipe.control(ControlRequest.GET_MAX_LUN)
    log.info("device ready: %d blocks of %d bytes",
             device.block_count, device.block_size)
    return device
