"""Bulk-pipe abstraction between the SCSI host driver and a device.

Models the host-side USB API surface the driver needs: offset-aware bulk
IN/OUT transfers on one claimed interface (exactly one IN and one OUT bulk
endpoint) plus the class-specific control requests. The only backend here is
an in-memory loopback onto a target emulator; a hardware backend would
implement the same three methods.
"""

import enum

from .errors import PipeClosedError, PipeStalledError, TransportError
from .scsi.target import TargetStall

DEFAULT_TIMEOUT = 21.0  # seconds; loopback never waits, hardware would


class ControlRequest(enum.Enum):
    """Class-specific requests plus the two endpoint-halt clears.

    Only the symbolic level is modeled; a hardware backend would map these
    to their bRequest/bmRequestType encodings.
    """

    BULK_ONLY_RESET = "reset"
    GET_MAX_LUN = "get_max_lun"
    CLEAR_HALT_IN = "clear_halt_in"
    CLEAR_HALT_OUT = "clear_halt_out"


class BulkPipe:
    """One claimed mass-storage interface. Single-owner, lock-step:
    exactly one command transaction in flight at a time."""

    timeout = DEFAULT_TIMEOUT

    def bulk_out(self, buffer, offset, length):
        """Send buffer[offset:offset+length]; returns bytes transferred."""
        raise NotImplementedError

    def bulk_in(self, buffer, offset, length):
        """Receive up to `length` bytes into buffer[offset:]; returns the
        count actually received (short transfers are legal)."""
        raise NotImplementedError

    def control(self, request):
        """Issue a ControlRequest; GET_MAX_LUN returns an int, others None."""
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _check_span(buffer, offset, length):
    if offset < 0 or length < 0 or offset + length > len(buffer):
        raise ValueError(
            f"span [{offset}, {offset + length}) outside buffer of "
            f"{len(buffer)} bytes")


class LoopbackPipe(BulkPipe):
    """Synchronous in-process pipe onto a TargetEmulator.

    Message boundaries follow the transport phases: each bulk_in drains one
    device message (data phase or CSW), never a concatenation of both.
    """

    def __init__(self, target, timeout=DEFAULT_TIMEOUT):
        self.target = target
        self.timeout = timeout
        self._closed = False

    def _check_open(self):
        if self._closed:
            raise PipeClosedError("pipe is closed")

    def bulk_out(self, buffer, offset, length):
        self._check_open()
        _check_span(buffer, offset, length)
        chunk = bytes(memoryview(buffer)[offset:offset + length])
        try:
            # lock-step holds at the target: an OUT transfer while a CSW is
            # pending halts the endpoint, which surfaces here as a stall
            self.target.receive_out(chunk)
        except TargetStall as exc:
            raise PipeStalledError(direction=exc.direction) from None
        return len(chunk)

    def bulk_in(self, buffer, offset, length):
        self._check_open()
        _check_span(buffer, offset, length)
        try:
            chunk = self.target.send_in(length)
        except TargetStall as exc:
            raise PipeStalledError(direction=exc.direction) from None
        view = memoryview(buffer)
        view[offset:offset + len(chunk)] = chunk
        return len(chunk)

    def control(self, request):
        self._check_open()
        if not isinstance(request, ControlRequest):
            raise TransportError(f"unsupported control request {request!r}")
        return self.target.control(request.value)

    def close(self):
        self._closed = True


def loopback_pair(target):
    """Wire a pipe onto `target`; OUT bytes feed it, IN bytes drain it."""
    return LoopbackPipe(target)
