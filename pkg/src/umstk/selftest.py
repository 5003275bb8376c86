"""Loopback conformance suite: host driver against the target emulator.

Each scenario builds a fresh in-memory device pair, drives it through the
public host API, and checks both the host-visible outcome and the target's
event log. The CLI `selftest` subcommand runs the whole list and reports
one line per scenario.
"""

import os
import time

from .blockdev import MemoryDevice
from .errors import CommandFailedError, PhaseError
from .scsi import commands as sc
from .scsi.host import init_device, reset_recovery, transfer_command
from .scsi.target import (FAULT_FORCE_STATUS, FAULT_STALL_IN, FaultSpec,
                          TargetEmulator)
from .transport import ControlRequest, loopback_pair


class ScenarioFailure(AssertionError):
    pass


def _expect(condition, message):
    if not condition:
        raise ScenarioFailure(message)


def _stack(size=8 << 20):
    backing = MemoryDevice(size_bytes=size)
    target = TargetEmulator(backing)
    pipe = loopback_pair(target)
    return backing, target, pipe


def scenario_init_handshake():
    """INQUIRY, TEST UNIT READY and READ CAPACITY bring the device up."""
    _, target, pipe = _stack()
    device = init_device(pipe)
    _expect(device.block_size == 512, "block size should be 512")
    _expect(device.block_count == (8 << 20) // 512,
            "capacity should match the backing store")
    _expect(device.identity.vendor.startswith(b"UMSTK"),
            "vendor string should come from the emulator")
    opcodes = [e[2] for e in target.event_log if e[0] == "cbw"]
    _expect(opcodes[0] == sc.OP_INQUIRY, "first command must be INQUIRY")
    _expect(sc.OP_READ_CAPACITY_10 in opcodes, "READ CAPACITY never sent")


def scenario_block_roundtrip():
    """1 MiB of random data survives write_blocks/read_blocks unchanged."""
    backing, target, pipe = _stack()
    device = init_device(pipe)
    payload = os.urandom(1 << 20)
    device.write_blocks(100, payload)
    _expect(device.read_blocks(100, len(payload) // 512) == payload,
            "read-back differs from what was written")
    _expect(backing.read_at(100 * 512, len(payload)) == payload,
            "backing store does not hold the written bytes")
    tags = [e[1] for e in target.event_log if e[0] == "cbw"]
    _expect(tags == sorted(tags) and len(set(tags)) == len(tags),
            "tags must strictly increase")


def scenario_large_transfer_split():
    """Transfers above 65535 blocks split into several READ(10) commands."""
    backing, target, pipe = _stack(size=40 << 20)
    device = init_device(pipe)
    blocks = 70000
    data = device.read_blocks(0, blocks)
    _expect(len(data) == blocks * 512, "short read on split transfer")
    reads = [e for e in target.event_log if e[0] == "cbw" and e[2] == sc.OP_READ_10]
    _expect(len(reads) == 2, "expected the transfer to split into 2 commands")


def scenario_failed_command_surfaces_sense():
    """A failed command reports ILLEGAL REQUEST sense for a bad LBA."""
    _, target, pipe = _stack()
    device = init_device(pipe)
    # past the end of the unit; sent raw because the host driver's own
    # range check would refuse to emit this
    bad_read = sc.make_cbw(
        sc.Read10(lba=device.block_count + 5, transfer_blocks=1), tag=9000)
    csw = transfer_command(pipe, bad_read, bytearray(512))
    _expect(csw.status == sc.STATUS_FAILED, "out-of-range read did not fail")
    sense = device.request_sense()
    _expect(sense.sense_key == sc.SENSE_KEY_ILLEGAL_REQUEST,
            "expected ILLEGAL REQUEST for an out-of-range LBA")
    _expect(sense.additional_sense_code == sc.ASC_LBA_OUT_OF_RANGE,
            "expected the LBA-out-of-range code")


def scenario_phase_error_triggers_reset_recovery():
    """Status 2 makes the host run reset + clear-halt on both endpoints."""
    _, target, pipe = _stack()
    device = init_device(pipe)
    target.configure_faults([
        FaultSpec(FAULT_FORCE_STATUS, on_command=1, status=sc.STATUS_PHASE_ERROR)])
    try:
        device.read_blocks(0, 1)
    except PhaseError:
        pass
    else:
        raise ScenarioFailure("forced phase error never surfaced")
    tail = target.event_log[-3:]
    _expect(tail == [("reset",), ("clear_halt", "in"), ("clear_halt", "out")],
            "recovery must be reset, clear IN halt, clear OUT halt, in order")
    _expect(device.read_blocks(0, 1) is not None,
            "device unusable after recovery")


def scenario_data_stall_recovery():
    """A mid-data stall aborts the command; the retry then succeeds."""
    _, target, pipe = _stack()
    device = init_device(pipe)
    target.configure_faults([FaultSpec(FAULT_STALL_IN, on_command=1)])
    try:
        device.read_blocks(0, 4)
    except CommandFailedError as exc:
        _expect(exc.sense is not None
                and exc.sense.sense_key == sc.SENSE_KEY_ABORTED_COMMAND,
                "expected ABORTED COMMAND after a data-phase stall")
    else:
        raise ScenarioFailure("stalled read did not fail")
    _expect(len(device.read_blocks(0, 4)) == 4 * 512,
            "retry after stall recovery failed")


def scenario_unknown_opcode_rejected():
    """An unsupported opcode fails with ILLEGAL REQUEST / invalid opcode."""
    _, target, pipe = _stack()
    device = init_device(pipe)
    cbw = sc.CommandBlockWrapper(
        tag=9001, data_transfer_length=0, flags=0, lun=0,
        command_block=b"\xee\x00\x00\x00\x00\x00")
    csw = transfer_command(pipe, cbw)
    _expect(csw.status == sc.STATUS_FAILED, "unknown opcode must fail")
    sense = device.request_sense()
    _expect(sense.sense_key == sc.SENSE_KEY_ILLEGAL_REQUEST
            and sense.additional_sense_code == sc.ASC_INVALID_OPCODE,
            "expected ILLEGAL REQUEST / invalid opcode sense")


def scenario_bad_cbw_signature():
    """A corrupted CBW yields a phase error; recovery restores service."""
    _, target, pipe = _stack()
    device = init_device(pipe)
    good = sc.serialize_cbw(sc.make_cbw(sc.TestUnitReady(), tag=77))
    bad = bytearray(b"XXXX" + good[4:])
    pipe.bulk_out(bad, 0, len(bad))
    csw_buf = bytearray(sc.CSW_LENGTH)
    got = pipe.bulk_in(csw_buf, 0, len(csw_buf))
    csw = sc.parse_csw(bytes(csw_buf[:got]))
    _expect(csw.status == sc.STATUS_PHASE_ERROR,
            "corrupt CBW must answer with a phase error")
    reset_recovery(pipe)
    _expect(len(device.read_blocks(0, 1)) == 512,
            "device unusable after CBW framing recovery")


def scenario_get_max_lun():
    """GET MAX LUN reports the index of the last unit."""
    backing = [MemoryDevice(size_bytes=1 << 20), MemoryDevice(size_bytes=1 << 20)]
    target = TargetEmulator(backing)
    pipe = loopback_pair(target)
    _expect(pipe.control(ControlRequest.GET_MAX_LUN) == 1,
            "two units should report max LUN 1")


SCENARIOS = [
    scenario_init_handshake,
    scenario_block_roundtrip,
    scenario_large_transfer_split,
    scenario_failed_command_surfaces_sense,
    scenario_phase_error_triggers_reset_recovery,
    scenario_data_stall_recovery,
    scenario_unknown_opcode_rejected,
    scenario_bad_cbw_signature,
    scenario_get_max_lun,
]


def run_selftest(report=print):
    """Run every scenario; returns (passed, failed)."""
    passed = failed = 0
    started = time.monotonic()
    for scenario in SCENARIOS:
        name = scenario.__name__.replace("scenario_", "")
        try:
            scenario()
        except Exception as exc:  # report and keep going
            failed += 1
            report("FAIL %-38s %s" % (name, exc))
        else:
            passed += 1
            report("ok   %-38s %s" % (name, scenario.__doc__.splitlines()[0]))
    report("%d passed, %d failed in %.2fs"
           % (passed, failed, time.monotonic() - started))
    return passed, failed
