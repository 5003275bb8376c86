"""Emulated bulk-only mass-storage device.

Consumes CBWs, serves data phases from a backing block device, and emits
CSWs. Stands in for a physical USB stick so the host driver can be exercised
end to end, including its error paths via scripted fault injection.

The emulator is an endpoint-level state machine (`receive_out`, `send_in`,
`control`) so a pipe implementation can expose realistic stall behavior;
`process_transaction` wraps one whole command for tests that do not care
about endpoints.
"""

import logging
from dataclasses import dataclass

from ..errors import FramingError
from . import commands as sc

log = logging.getLogger("umstk.target")

# transaction phases
_WAIT_CBW = "wait-cbw"
_DATA_IN = "data-in"
_DATA_OUT = "data-out"
_CSW_READY = "csw-ready"

FAULT_STALL_IN = "stall_in"
FAULT_STALL_OUT = "stall_out"
FAULT_FORCE_STATUS = "force_status"
FAULT_SHORT_DATA = "short_data"


class TargetStall(Exception):
    """Raised toward the pipe when an endpoint answers STALL."""

    def __init__(self, direction):
        super().__init__(f"{direction} endpoint stalled")
        self.direction = direction


@dataclass
class FaultSpec:
    """One scripted fault, consumed by the first command it matches.

    `on_command` counts CBWs since the plan was installed, 1-based.
    kinds: stall_in / stall_out halt that endpoint during the data phase;
    force_status overrides the CSW status byte; short_data trims `drop`
    bytes off an IN data phase while the CSW still claims a full transfer.
    """

    kind: str
    on_command: int = 1
    status: int = sc.STATUS_PHASE_ERROR
    drop: int = 1


class TargetEmulator:
    """Device side of the bulk-only transport.

    `backing` is one block device (LUN 0) or a list of them (LUN = index).
    """

    def __init__(self, backing, vendor=sc.INQUIRY_VENDOR,
                 product=sc.INQUIRY_PRODUCT, peripheral_device_type=0):
        self.luns = list(backing) if isinstance(backing, (list, tuple)) \
            else [backing]
        if not self.luns:
            raise ValueError("target needs at least one backing device")
        self.max_lun = len(self.luns) - 1
        self.vendor = vendor
        self.product = product
        self.peripheral_device_type = peripheral_device_type
        self.pending_sense = {}      # lun -> 18-byte sense block
        self.fault_plan = []
        self.event_log = []
        self.halted_in = False
        self.halted_out = False
        self._state = _WAIT_CBW
        self._commands_seen = 0
        self._in_queue = b""         # data phase bytes not yet sent
        self._in_planned = 0
        self._zlp_owed = False       # empty IN data phase still to present
        self._out_expected = 0
        self._out_buffer = b""
        self._write_target = None    # (backing, lba) for the pending write
        self._cbw = None             # CBW of the transaction in flight
        self._csw = b""

    @property
    def phase(self):
        """Current transaction phase, for pipes and tests."""
        return self._state

    # fault plumbing

    def configure_faults(self, plan):
        """Install scripted faults; each entry fires exactly once."""
        self.fault_plan = list(plan)
        self._commands_seen = 0

    def _take_fault(self, kind):
        for fault in self.fault_plan:
            if fault.kind == kind and fault.on_command == self._commands_seen:
                self.fault_plan.remove(fault)
                return fault
        return None

    # endpoint surface, driven by the pipe

    def receive_out(self, data):
        """Host-to-device bulk transfer (CBW or write-phase data)."""
        if self.halted_out:
            self.event_log.append(("stall", "out"))
            raise TargetStall("out")
        if self._state == _WAIT_CBW:
            self._accept_cbw(bytes(data))
        elif self._state == _DATA_OUT:
            self._accept_write_data(bytes(data))
        else:
            # lock-step violation: data pushed while a CSW is pending
            self.halted_out = True
            self.event_log.append(("stall", "out"))
            raise TargetStall("out")

    def send_in(self, max_length):
        """Device-to-host bulk transfer; returns at most `max_length` bytes."""
        if self.halted_in:
            self.event_log.append(("stall", "in"))
            raise TargetStall("in")
        if self._state == _DATA_IN:
            if self._take_fault(FAULT_STALL_IN) is not None:
                self.halted_in = True
                self.event_log.append(("stall", "in"))
                moved = self._in_planned - len(self._in_queue)
                self._abort_command(moved)
                raise TargetStall("in")
            chunk = self._in_queue[:max_length]
            self._in_queue = self._in_queue[len(chunk):]
            if not self._in_queue:
                self._state = _CSW_READY
            self.event_log.append(("data_in", len(chunk)))
            return chunk
        if self._state == _CSW_READY:
            if self._zlp_owed:
                # the command moved no data, but the host declared an IN
                # phase: answer it with a zero-length transfer, then the CSW
                self._zlp_owed = False
                self.event_log.append(("data_in", 0))
                return b""
            csw = self._csw
            self._state = _WAIT_CBW
            self._cbw = None
            return csw
        self.halted_in = True
        self.event_log.append(("stall", "in"))
        raise TargetStall("in")

    def control(self, kind):
        """Class-specific control requests; returns Get Max LUN's byte."""
        if kind == "reset":
            self.event_log.append(("reset",))
            # a reset abandons the transaction but leaves halts in place;
            # the host must still clear each endpoint explicitly
            self._state = _WAIT_CBW
            self._in_queue = b""
            self._out_buffer = b""
            self._zlp_owed = False
            self._cbw = None
            return None
        if kind == "clear_halt_in":
            self.event_log.append(("clear_halt", "in"))
            self.halted_in = False
            return None
        if kind == "clear_halt_out":
            self.event_log.append(("clear_halt", "out"))
            self.halted_out = False
            return None
        if kind == "get_max_lun":
            return self.max_lun
        raise ValueError(f"unknown control request {kind!r}")

    # whole-transaction convenience wrapper

    def process_transaction(self, cbw_bytes, host_data=None):
        """Run one command start to finish: (device_data or None, csw)."""
        self.receive_out(cbw_bytes)
        device_data = None
        if self._state == _DATA_OUT:
            self.receive_out(host_data if host_data is not None else b"")
        elif self._state == _DATA_IN:
            device_data = self.send_in(self._in_planned)
        elif self._zlp_owed:
            device_data = self.send_in(0)
        csw = self.send_in(sc.CSW_LENGTH)
        return device_data, csw

    # command dispatch

    def _accept_cbw(self, raw):
        self._commands_seen += 1
        try:
            cbw = sc.parse_cbw(raw)
        except FramingError as exc:
            log.warning("rejecting CBW: %s", exc)
            # echo whatever sits in the tag field so the host can correlate
            tag = int.from_bytes(raw[4:8], "little") if len(raw) >= 8 else 0
            self.event_log.append(("cbw", tag, None))
            self._queue_csw(tag, 0, sc.STATUS_PHASE_ERROR, lun=None)
            if len(raw) >= 13 and raw[12] & sc.FLAG_DATA_IN \
                    and int.from_bytes(raw[8:12], "little") > 0:
                self._zlp_owed = True
            return
        self._cbw = cbw
        opcode = cbw.command_block[0]
        self.event_log.append(("cbw", cbw.tag, opcode))
        self._execute(cbw, opcode)

    def _queue_csw(self, tag, residue, status, lun):
        """Build the CSW and settle per-LUN sense state.

        Called once per command, possibly before an IN data phase drains;
        the CSW only reaches the wire after the data does.
        """
        fault = self._take_fault(FAULT_FORCE_STATUS)
        if fault is not None:
            status = fault.status
        if lun is not None:
            if status == sc.STATUS_FAILED:
                self.pending_sense.setdefault(
                    lun, sc.build_sense_data(sc.SENSE_KEY_NO_SENSE))
            elif status == sc.STATUS_PASSED:
                self.pending_sense.pop(lun, None)
        self._csw = sc.serialize_csw(tag, residue, status)
        self.event_log.append(("csw", tag, status, residue))
        if self._state != _DATA_IN:
            self._state = _CSW_READY

    def _abort_command(self, moved):
        """End the in-flight command after a data-phase stall."""
        cbw = self._cbw
        self._in_queue = b""
        self._out_buffer = b""
        self._state = _WAIT_CBW
        self.pending_sense[cbw.lun] = sc.build_sense_data(
            sc.SENSE_KEY_ABORTED_COMMAND)
        self._queue_csw(cbw.tag, cbw.data_transfer_length - moved,
                        sc.STATUS_FAILED, lun=None)

    def _fail(self, cbw, sense_key, asc=0, ascq=0):
        self.pending_sense[cbw.lun] = sc.build_sense_data(sense_key, asc,
                                                          ascq)
        self._queue_csw(cbw.tag, cbw.data_transfer_length, sc.STATUS_FAILED,
                        lun=None)

    def _phase_error(self, cbw):
        self._queue_csw(cbw.tag, cbw.data_transfer_length,
                        sc.STATUS_PHASE_ERROR, lun=None)

    def _serve(self, cbw, payload, lun_for_sense):
        """IN data phase capped at the host's declared transfer length."""
        data = payload[:cbw.data_transfer_length]
        residue = cbw.data_transfer_length - len(data)
        fault = self._take_fault(FAULT_SHORT_DATA)
        if fault is not None:
            # deliver less than the CSW will claim: the host must notice
            data = data[:max(0, len(data) - fault.drop)]
        self._in_planned = len(data)
        self._in_queue = data
        self._state = _DATA_IN if data else _WAIT_CBW
        self._queue_csw(cbw.tag, residue, sc.STATUS_PASSED, lun=lun_for_sense)

    def _execute(self, cbw, opcode):
        in_flagged = bool(cbw.flags & sc.FLAG_DATA_IN) \
            and cbw.data_transfer_length > 0
        self._dispatch(cbw, opcode, in_flagged)
        if self._state == _CSW_READY and in_flagged:
            # command ended without sending anything: the declared IN data
            # phase still has to be answered (with a zero-length transfer)
            self._zlp_owed = True

    def _dispatch(self, cbw, opcode, in_flagged):
        if opcode == sc.OP_REQUEST_SENSE:
            # must work even for an unsupported LUN, or its sense data
            # could never be observed
            if cbw.data_transfer_length and not in_flagged:
                self._phase_error(cbw)
                return
            sense = self.pending_sense.pop(
                cbw.lun, sc.build_sense_data(sc.SENSE_KEY_NO_SENSE))
            # lun None: reporting sense must not clear or set sense itself
            self._serve(cbw, sense, lun_for_sense=None)
            return

        if cbw.lun > self.max_lun:
            self._fail(cbw, sc.SENSE_KEY_ILLEGAL_REQUEST,
                       sc.ASC_LUN_NOT_SUPPORTED)
            return
        backing = self.luns[cbw.lun]

        if opcode == sc.OP_TEST_UNIT_READY:
            if cbw.data_transfer_length:
                self._phase_error(cbw)
            else:
                self._queue_csw(cbw.tag, 0, sc.STATUS_PASSED, lun=cbw.lun)
            return

        if opcode == sc.OP_INQUIRY:
            if cbw.data_transfer_length and not in_flagged:
                self._phase_error(cbw)
                return
            self._serve(cbw, sc.build_inquiry_data(
                vendor=self.vendor, product=self.product,
                peripheral_device_type=self.peripheral_device_type),
                cbw.lun)
            return

        if opcode == sc.OP_READ_CAPACITY_10:
            if cbw.data_transfer_length and not in_flagged:
                self._phase_error(cbw)
                return
            self._serve(cbw, sc.build_capacity_data(
                backing.block_count - 1, backing.block_size), cbw.lun)
            return

        if opcode in (sc.OP_READ_10, sc.OP_WRITE_10):
            self._execute_rw(cbw, opcode, backing, in_flagged)
            return

        log.info("unsupported opcode %#04x", opcode)
        self._fail(cbw, sc.SENSE_KEY_ILLEGAL_REQUEST, sc.ASC_INVALID_OPCODE)

    def _execute_rw(self, cbw, opcode, backing, in_flagged):
        cb = cbw.command_block
        if len(cb) < 10:
            self._fail(cbw, sc.SENSE_KEY_ILLEGAL_REQUEST,
                       sc.ASC_INVALID_OPCODE)
            return
        lba = int.from_bytes(cb[2:6], "big")
        blocks = int.from_bytes(cb[7:9], "big")
        nbytes = blocks * backing.block_size
        wants_in = opcode == sc.OP_READ_10
        if cbw.data_transfer_length != nbytes or \
                (nbytes and in_flagged != wants_in):
            # wrapper and command disagree about the data phase
            self._phase_error(cbw)
            return
        if lba + blocks > backing.block_count:
            self._fail(cbw, sc.SENSE_KEY_ILLEGAL_REQUEST,
                       sc.ASC_LBA_OUT_OF_RANGE)
            return
        if wants_in:
            data = backing.read_at(lba * backing.block_size, nbytes) \
                if blocks else b""
            self._serve(cbw, data, cbw.lun)
        elif nbytes == 0:
            self._queue_csw(cbw.tag, 0, sc.STATUS_PASSED, lun=cbw.lun)
        else:
            self._out_expected = nbytes
            self._out_buffer = b""
            self._write_target = (backing, lba)
            self._state = _DATA_OUT

    def _accept_write_data(self, data):
        if self._take_fault(FAULT_STALL_OUT) is not None:
            self.halted_out = True
            self.event_log.append(("stall", "out"))
            self._abort_command(moved=len(self._out_buffer))
            raise TargetStall("out")
        self._out_buffer += data
        self.event_log.append(("data_out", len(data)))
        if len(self._out_buffer) < self._out_expected:
            return
        cbw = self._cbw
        backing, lba = self._write_target
        payload = self._out_buffer[:self._out_expected]
        backing.write_at(lba * backing.block_size, payload)
        self._out_buffer = b""
        self._queue_csw(cbw.tag, cbw.data_transfer_length - len(payload),
                        sc.STATUS_PASSED, lun=cbw.lun)
