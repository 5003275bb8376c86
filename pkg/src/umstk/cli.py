"""Command-line tool for working with FAT32 disk images.

Every subcommand opens the image through the same stack the library
exposes: raw file -> (optional MBR partition view) -> FAT32 tree. With
--via-scsi the block layer is additionally routed through the in-memory
host-driver/target loopback, so all reads and writes travel as wrapped
SCSI commands; the resulting image bytes must be identical either way.

Exit codes: 0 success, 1 user error (bad path, duplicate name, not
FAT32), 2 I/O or protocol error. --json emits one "umstk.v1" document on
stdout. UMSTK_LOG=error|info|debug controls stderr logging.
"""

import argparse
import contextlib
import json
import logging
import os
import sys

from .blockdev import FileBackedDevice, open_image
from .errors import (BlockDeviceError, Fat32Error, PartitionTableError,
                     ScsiError, TransportError, UmstkError)
from .fat32 import entries
from .fat32.format import format_volume
from .fat32.tree import DIRECTORY, FILE, Fat32FileSystem
from .mbr import (SECTOR, TYPE_FAT32_LBA, PartitionTableEntry, PartitionView,
                  serialize_mbr)
from .scsi.host import init_device
from .scsi.target import TargetEmulator
from .selftest import run_selftest
from .transport import loopback_pair
from .volume import open_volume, usable_partitions

log = logging.getLogger("umstk.cli")

JSON_SCHEMA = "umstk.v1"
COPY_CHUNK = 1 << 20

# MBR-partitioned images put the volume at the conventional 1 MiB boundary
MBR_PARTITION_START_LBA = 2048


class UsageError(UmstkError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _setup_logging():
    wanted = os.environ.get("UMSTK_LOG", "error").lower()
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(wanted)
    if level is None:
        level = logging.ERROR
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@contextlib.contextmanager
def _open_stack(args, read_only=False):
    """Yield (filesystem, partition table or None) for args.image."""
    device = open_image(args.image, read_only=read_only)
    try:
        base = device
        if getattr(args, "via_scsi", False):
            pipe = loopback_pair(TargetEmulator(device))
            base = init_device(pipe)
            log.info("routing image access through the SCSI loopback")
        volume, table = open_volume(base, getattr(args, "partition", 0))
        yield Fat32FileSystem(volume), table
        device.flush()
    finally:
        device.close()


def _emit(args, document, human):
    """Print either the JSON document or the human lines."""
    if getattr(args, "json", False):
        document = {"schema": JSON_SCHEMA, "command": args.command, **document}
        print(json.dumps(document, indent=2))
    else:
        for line in human:
            print(line)


def _stamp(dt):
    return dt.isoformat(sep=" ") if dt else None


def _attr_letters(node):
    a = node.attributes
    return "".join([
        "d" if node.kind == DIRECTORY else "-",
        "r" if a & entries.ATTR_READ_ONLY else "-",
        "h" if a & entries.ATTR_HIDDEN else "-",
        "s" if a & entries.ATTR_SYSTEM else "-",
        "a" if a & entries.ATTR_ARCHIVE else "-",
    ])


def _parse_size(text):
    """Parse sizes like 65536, 512K, 64M, 1G."""
    text = text.strip().upper()
    factor = 1
    if text[-1:] in "KMG":
        factor = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}[text[-1]]
        text = text[:-1]
    try:
        value = int(text) * factor
    except ValueError:
        raise UsageError(f"cannot parse size {text!r}") from None
    if value <= 0 or value % SECTOR:
        raise UsageError(f"size must be a positive multiple of {SECTOR} bytes")
    return value


# subcommand bodies

def cmd_info(args):
    with _open_stack(args, read_only=True) as (fs, table):
        boot = fs.boot
        free = fs.fat.fsinfo.free_count
        geometry = {
            "bytes_per_sector": boot.bytes_per_sector,
            "sectors_per_cluster": boot.sectors_per_cluster,
            "cluster_size_bytes": boot.cluster_size_bytes,
            "reserved_sectors": boot.reserved_sector_count,
            "fat_copies": boot.num_fats,
            "fat_size_sectors": boot.fat_size_sectors,
            "total_sectors": boot.total_sectors,
            "cluster_count": boot.cluster_count,
            "root_cluster": boot.root_cluster,
        }
        rows = []
        if table is not None:
            for index, entry in enumerate(usable_partitions(table)):
                rows.append({
                    "index": index,
                    "type": entry.partition_type,
                    "bootable": entry.bootable,
                    "first_lba": entry.first_lba,
                    "sector_count": entry.sector_count,
                })
        document = {
            "partition_table": rows if table is not None else None,
            "selected_partition": args.partition if table is not None else None,
            "geometry": geometry,
            "label": fs.get_volume_label(),
            "free_clusters": free,
            "free_bytes": free * boot.cluster_size_bytes,
        }
        human = []
        if table is None:
            human.append("partition table: none (bare volume)")
        else:
            human.append("partition table:")
            for row in rows:
                human.append(
                    "  %d: type %02Xh  first LBA %-8d sectors %-10d%s"
                    % (row["index"], row["type"], row["first_lba"],
                       row["sector_count"],
                       " (bootable)" if row["bootable"] else ""))
        human += [
            "volume:",
            "  bytes per sector     %d" % boot.bytes_per_sector,
            "  sectors per cluster  %d" % boot.sectors_per_cluster,
            "  cluster size         %d bytes" % boot.cluster_size_bytes,
            "  reserved sectors     %d" % boot.reserved_sector_count,
            "  FAT copies           %d x %d sectors"
            % (boot.num_fats, boot.fat_size_sectors),
            "  total sectors        %d" % boot.total_sectors,
            "  data clusters        %d" % boot.cluster_count,
            "  root cluster         %d" % boot.root_cluster,
            "label: %s" % (fs.get_volume_label() or "(none)"),
            "free space: %d clusters, %d bytes"
            % (free, free * boot.cluster_size_bytes),
        ]
        _emit(args, document, human)
    return 0


def cmd_ls(args):
    with _open_stack(args) as (fs, _):
        node = fs.resolve(args.path)
        nodes = fs.list_children(node) if node.kind == DIRECTORY else [node]
        rows = [{
            "name": child.long_name,
            "short_name": (None if child.short_name is None else
                           child.short_name.decode("latin-1")),
            "kind": child.kind,
            "size": child.size,
            "attributes": _attr_letters(child),
            "created": _stamp(child.created),
            "written": _stamp(child.written),
            "accessed": _stamp(child.accessed),
        } for child in nodes]
        human = ["%s %10d  %-19s %s"
                 % (row["attributes"], row["size"],
                    row["written"] or "-", row["name"])
                 for row in rows]
        _emit(args, {"path": args.path, "entries": rows}, human)
    return 0


def cmd_get(args):
    to_stdout = args.destination == "-"
    if to_stdout and args.json:
        raise UsageError("--json and stdout output cannot be combined")
    with _open_stack(args) as (fs, _):
        node = fs.resolve(args.source)
        if node.kind != FILE:
            raise Fat32Error(f"{args.source} is not a file")
        destination = args.destination
        if not to_stdout and os.path.isdir(destination):
            destination = os.path.join(destination,
                                       os.path.basename(args.source))
        out = sys.stdout.buffer if to_stdout else open(destination, "wb")
        try:
            copied = 0
            while copied < node.size:
                n = min(COPY_CHUNK, node.size - copied)
                out.write(fs.file_read(node, copied, n))
                copied += n
        finally:
            if not to_stdout:
                out.close()
        _emit(args, {"source": args.source, "destination": destination,
                     "bytes_copied": copied}, [])
    return 0


def cmd_put(args):
    with _open_stack(args) as (fs, _):
        with open(args.source, "rb") as handle:
            try:
                node = fs.resolve(args.destination)
            except Fat32Error:
                parent, leaf = fs.resolve_parent(args.destination)
                node = fs.create_child(parent, leaf, FILE)
            else:
                if node.kind != FILE:
                    raise Fat32Error(f"{args.destination} is a directory")
                fs.set_file_size(node, 0)  # replace, never splice
            copied = 0
            while True:
                chunk = handle.read(COPY_CHUNK)
                if not chunk:
                    break
                fs.file_write(node, copied, chunk)
                copied += len(chunk)
        _emit(args, {"source": args.source, "destination": args.destination,
                     "bytes_copied": copied}, [])
    return 0


def cmd_mkdir(args):
    with _open_stack(args) as (fs, _):
        parent, leaf = fs.resolve_parent(args.path)
        fs.create_child(parent, leaf, DIRECTORY)
        _emit(args, {"created": args.path}, [])
    return 0


def cmd_rm(args):
    with _open_stack(args) as (fs, _):
        node = fs.resolve(args.path)
        removed = []
        if args.recursive and node.kind == DIRECTORY:
            # depth-first: children strictly before their directory
            stack = [(node, False)]
            while stack:
                current, expanded = stack.pop()
                if current.kind != DIRECTORY or expanded:
                    fs.delete_node(current)
                    removed.append(current.path)
                    continue
                stack.append((current, True))
                stack.extend((child, False)
                             for child in fs.list_children(current))
        else:
            fs.delete_node(node)
            removed.append(node.path)
        _emit(args, {"removed": removed}, [])
    return 0


def cmd_mv(args):
    with _open_stack(args) as (fs, _):
        node = fs.resolve(args.source)
        try:
            target = fs.resolve(args.destination)
        except Fat32Error:
            target = None
        if target is not None and target.kind == DIRECTORY:
            moved = fs.move_node(node, target)
        else:
            parent, leaf = fs.resolve_parent(args.destination)
            moved = fs.move_node(node, parent, leaf)
        _emit(args, {"from": args.source, "to": moved.path}, [])
    return 0


def cmd_label(args):
    with _open_stack(args) as (fs, _):
        if args.new_label is None:
            label = fs.get_volume_label()
            _emit(args, {"label": label}, [label])
        else:
            fs.set_volume_label(args.new_label)
            _emit(args, {"label": fs.get_volume_label()}, [])
    return 0


def cmd_mkimage(args):
    size = _parse_size(args.size)
    with open(args.image, "wb") as handle:
        handle.truncate(size)
    device = FileBackedDevice(args.image)
    try:
        if args.mbr:
            total = size // SECTOR
            if total <= MBR_PARTITION_START_LBA:
                raise UsageError(
                    "--mbr needs at least %d sectors"
                    % (MBR_PARTITION_START_LBA + 2048))
            entry = PartitionTableEntry(
                partition_type=TYPE_FAT32_LBA,
                first_lba=MBR_PARTITION_START_LBA,
                sector_count=total - MBR_PARTITION_START_LBA)
            device.write_at(0, serialize_mbr([entry]))
            volume = PartitionView(device, entry)
        else:
            volume = device
        format_volume(volume, label=args.label,
                      sectors_per_cluster=args.cluster_sectors)
        device.flush()
    finally:
        device.close()
    _emit(args, {"created": args.image, "size": size, "mbr": args.mbr,
                 "label": args.label},
          ["%s: %d bytes, %s" % (args.image, size,
                                 "MBR + FAT32" if args.mbr else "bare FAT32")])
    return 0


def cmd_selftest(args):
    lines = []
    passed, failed = run_selftest(report=lines.append)
    if args.json:
        _emit(args, {"passed": passed, "failed": failed,
                     "report": lines[:-1]}, [])
    else:
        for line in lines:
            print(line)
    return 0 if failed == 0 else 2


def _build_parser():
    parser = _Parser(prog="umstk",
                     description="FAT32 disk image tool over a USB "
                                 "mass-storage protocol stack")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    volume_flags = _Parser(add_help=False)
    volume_flags.add_argument("--partition", type=int, default=0,
                              metavar="N", help="partition index (default 0)")
    volume_flags.add_argument("--via-scsi", action="store_true",
                              help="route image access through the "
                                   "host-driver/target loopback")
    volume_flags.add_argument("--json", action="store_true",
                              help="machine-readable output")

    def image_command(name, func, help_text, parents=(volume_flags,)):
        sub = commands.add_parser(name, help=help_text, parents=list(parents))
        sub.add_argument("image", help="disk image file")
        sub.set_defaults(func=func)
        return sub

    image_command("info", cmd_info,
                  "partition table, geometry, label, free space")

    ls = image_command("ls", cmd_ls, "list a directory")
    ls.add_argument("path", nargs="?", default="/", help="in-image path")

    get = image_command("get", cmd_get, "copy a file out of the image")
    get.add_argument("source", help="in-image file path")
    get.add_argument("destination", help="host file path, or - for stdout")

    put = image_command("put", cmd_put, "copy a file into the image")
    put.add_argument("source", help="host file path")
    put.add_argument("destination", help="in-image file path")

    mkdir = image_command("mkdir", cmd_mkdir, "create a directory")
    mkdir.add_argument("path", help="in-image path")

    rm = image_command("rm", cmd_rm, "remove a file or directory")
    rm.add_argument("path", help="in-image path")
    rm.add_argument("-r", "--recursive", action="store_true",
                    help="delete directories depth-first")

    mv = image_command("mv", cmd_mv, "move or rename")
    mv.add_argument("source", help="in-image path")
    mv.add_argument("destination",
                    help="new in-image path, or an existing directory")

    label = image_command("label", cmd_label, "show or set the volume label")
    label.add_argument("new_label", nargs="?", default=None)

    mkimage = commands.add_parser("mkimage", help="create a fresh image")
    mkimage.add_argument("image")
    mkimage.add_argument("--size", required=True,
                         help="image size (bytes, or with K/M/G suffix)")
    mkimage.add_argument("--label", default=None)
    mkimage.add_argument("--mbr", action="store_true",
                         help="wrap the volume in an MBR partition table")
    mkimage.add_argument("--cluster-sectors", type=int, default=8,
                         metavar="N", help="sectors per cluster (default 8)")
    mkimage.add_argument("--json", action="store_true")
    mkimage.set_defaults(func=cmd_mkimage)

    selftest = commands.add_parser(
        "selftest", help="run the loopback conformance scenarios")
    selftest.add_argument("--json", action="store_true")
    selftest.set_defaults(func=cmd_selftest)

    return parser


def _layer(exc):
    if isinstance(exc, (TransportError, ScsiError)):
        return "scsi"
    if isinstance(exc, PartitionTableError):
        return "mbr"
    if isinstance(exc, Fat32Error):
        return "fat32"
    if isinstance(exc, BlockDeviceError):
        return "image"
    return "io"


def main(argv=None):
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"umstk: {exc}", file=sys.stderr)
        return 1
    except (Fat32Error, PartitionTableError) as exc:
        print(f"umstk: {_layer(exc)}: {exc}", file=sys.stderr)
        return 1
    except (TransportError, ScsiError, BlockDeviceError, OSError) as exc:
        print(f"umstk: {_layer(exc)}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
