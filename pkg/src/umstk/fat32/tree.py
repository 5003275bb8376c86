"""Mutable FAT32 directory tree: lookup, create, delete, move, file I/O.

One Fat32FileSystem instance owns a mounted volume; every operation goes
through it and is applied to the device immediately. Nodes are lightweight
handles recording where their directory records live; sibling handles stay
valid across mutations because records are never relocated, only appended
or tombstoned.
"""

import logging
import struct
from dataclasses import dataclass
from datetime import datetime

from ..errors import (DirectoryNotEmptyError, DuplicateNameError, Fat32Error,
                      FileTooLargeError, NoSuchPathError, OutOfRangeError)
from . import entries, names
from .bootsector import parse_boot_sector, read_fsinfo
from .chain import ClusterChain
from .fat import BAD_CLUSTER, ENTRY_MASK, Fat

log = logging.getLogger("umstk.fat32")

MAX_FILE_SIZE = 0xFFFFFFFF  # 4 GiB - 1, the widest value file_size can hold

FILE = "file"
DIRECTORY = "directory"


@dataclass
class FatNode:
    """Handle for one file or directory.

    slot_start/slot_count locate the node's records (long-name run plus
    short record) inside the parent directory; the root has neither records
    nor a parent.
    """

    kind: str
    long_name: str
    short_name: bytes | None
    attributes: int
    start_cluster: int
    size: int
    created: datetime | None
    accessed: datetime | None
    written: datetime | None
    parent: "FatNode | None"
    slot_start: int | None
    slot_count: int

    @property
    def is_root(self):
        return self.parent is None

    @property
    def path(self):
        if self.is_root:
            return "/"
        parts = []
        node = self
        while node is not None and not node.is_root:
            parts.append(node.long_name)
            node = node.parent
        return "/" + "/".join(reversed(parts))

    def __repr__(self):
        return f"<FatNode {self.kind} {self.path!r}>"


class Fat32FileSystem:
    """A mounted FAT32 volume on top of any block device.

    `clock` is injectable so tests get deterministic timestamps.
    """

    def __init__(self, device, clock=None):
        self.device = device
        self.boot = parse_boot_sector(device.read_at(0, 512))
        volume_bytes = self.boot.total_sectors * self.boot.bytes_per_sector
        if volume_bytes > device.size_bytes:
            log.warning(
                "boot sector claims %d bytes but the device holds %d; "
                "accesses near the end will fail", volume_bytes, device.size_bytes)
        self.fsinfo = read_fsinfo(device, self.boot)
        self.fat = Fat(device, self.boot, self.fsinfo)
        self._clock = clock or datetime.now
        self.root = FatNode(
            kind=DIRECTORY, long_name="", short_name=None, attributes=0,
            start_cluster=self.boot.root_cluster, size=0, created=None,
            accessed=None, written=None, parent=None, slot_start=None,
            slot_count=0)

    def _now(self):
        return self._clock()

    # directory plumbing

    def _dir_chain(self, node):
        if node.kind != DIRECTORY:
            raise Fat32Error(f"{node.path} is not a directory")
        return ClusterChain(self.fat, node.start_cluster)

    def _read_dir(self, node):
        chain = self._dir_chain(node)
        return chain, entries.parse_directory(chain.read(0, chain.capacity))

    def _node_from_entry(self, parent, entry):
        return FatNode(
            kind=DIRECTORY if entry.is_directory else FILE,
            long_name=entry.long_name, short_name=entry.short_name,
            attributes=entry.attributes, start_cluster=entry.start_cluster,
            size=entry.size, created=entry.created, accessed=entry.accessed,
            written=entry.written, parent=parent,
            slot_start=entry.slot_start, slot_count=entry.slot_count)

    def list_children(self, node):
        """Child nodes in directory order, without dot/dotdot or the label."""
        _, parsed = self._read_dir(node)
        return [self._node_from_entry(node, e) for e in parsed.entries
                if not (e.is_dot or e.is_dotdot)]

    def lookup(self, parent, name):
        """Case-insensitive child lookup by long or short name."""
        wanted = name.casefold()
        for child in self.list_children(parent):
            if child.long_name.casefold() == wanted:
                return child
            if names.short_display_form(child.short_name).casefold() == wanted:
                return child
        raise NoSuchPathError(f"no entry {name!r} in {parent.path}")

    def resolve(self, path):
        """Walk a '/'-rooted path down from the root directory."""
        node = self.root
        for part in path.split("/"):
            if part in ("", "."):
                continue
            if part == "..":
                node = node.parent or self.root
                continue
            node = self.lookup(node, part)
        return node

    def resolve_parent(self, path):
        """Split a path into (existing parent directory node, leaf name)."""
        trimmed = path.rstrip("/")
        if not trimmed:
            raise Fat32Error("the root directory itself was named")
        head, _, leaf = trimmed.rpartition("/")
        parent = self.resolve(head)
        if parent.kind != DIRECTORY:
            raise Fat32Error(f"{parent.path} is not a directory")
        return parent, leaf

    def _insert_records(self, dir_node, raw):
        """Place a record block at the first free span, growing if needed.

        Free space is any run of deleted records, plus everything from the
        terminator onward. Returns the starting slot index.
        """
        count = len(raw) // entries.RECORD_SIZE
        chain = self._dir_chain(dir_node)
        data = chain.read(0, chain.capacity)
        slots = len(data) // entries.RECORD_SIZE
        term = None
        place = None
        run = 0
        for slot in range(slots):
            first = data[slot * entries.RECORD_SIZE]
            if term is None and first == entries.TERMINATOR_BYTE:
                term = slot
            if first == entries.FREE_BYTE or (term is not None and slot >= term):
                run += 1
                if run == count:
                    place = slot - count + 1
                    break
            else:
                run = 0
        if place is None:
            # the free tail (possibly empty) continues into fresh clusters
            place = slots - run
            chain.set_length((place + count) * entries.RECORD_SIZE,
                             minimum_clusters=1, zero_fill=True)
        chain.write(place * entries.RECORD_SIZE, raw)
        used_end = term if term is not None else slots
        after = place + count
        if after > used_end and after * entries.RECORD_SIZE < chain.capacity:
            # re-establish the terminator behind the appended records
            chain.write(after * entries.RECORD_SIZE, bytes(entries.RECORD_SIZE))
        return place

    def _collision_check(self, parsed, name, skip_slot=None):
        wanted = name.casefold()
        for e in parsed.entries:
            if e.slot_start == skip_slot:
                continue
            if e.is_dot or e.is_dotdot:
                continue
            if (e.long_name.casefold() == wanted
                    or names.short_display_form(e.short_name).casefold() == wanted):
                raise DuplicateNameError(f"{name!r} already exists")

    def _patch_entry(self, node, *, size=None, start_cluster=None,
                     accessed=None, written=None, attributes=None):
        """Rewrite fields of the node's short record in its parent."""
        if node.is_root:
            return
        chain = self._dir_chain(node.parent)
        slot = node.slot_start + node.slot_count - 1
        offset = slot * entries.RECORD_SIZE
        record = entries.decode_entry(chain.read(offset, entries.RECORD_SIZE))
        if size is not None:
            record.size = size
            node.size = size
        if start_cluster is not None:
            record.start_cluster = start_cluster
            node.start_cluster = start_cluster
        if accessed is not None:
            record.accessed_date = entries.encode_datetime(accessed)[0]
            node.accessed = entries.decode_datetime(record.accessed_date, 0)
        if written is not None:
            date, time, _ = entries.encode_datetime(written)
            record.written_date = date
            record.written_time = time
            node.written = entries.decode_datetime(date, time)
        if attributes is not None:
            record.attributes = attributes
            node.attributes = attributes
        chain.write(offset, entries.encode_entry(record))

    # tree mutation

    def create_child(self, parent, name, kind):
        """Create a file or directory; returns the new node's handle."""
        if kind not in (FILE, DIRECTORY):
            raise ValueError(f"kind must be {FILE!r} or {DIRECTORY!r}")
        names.validate_long_name(name)
        _, parsed = self._read_dir(parent)
        self._collision_check(parsed, name)
        short = names.generate_short_name(
            name, {e.short_name for e in parsed.entries})
        now = self._now()
        start = 0
        attributes = entries.ATTR_ARCHIVE
        if kind == DIRECTORY:
            attributes = entries.ATTR_DIRECTORY
            chain = ClusterChain(self.fat, 0)
            chain.set_length(1, minimum_clusters=1, zero_fill=True)
            start = chain.start_cluster
            date, time, tenths = entries.encode_datetime(now)
            dot = entries.DirEntry(
                name=entries.DOT_NAME, attributes=entries.ATTR_DIRECTORY,
                created_tenths=tenths, created_time=time, created_date=date,
                accessed_date=date, written_time=time, written_date=date,
                start_cluster=start)
            dotdot = entries.DirEntry(
                name=entries.DOTDOT_NAME, attributes=entries.ATTR_DIRECTORY,
                created_tenths=tenths, created_time=time, created_date=date,
                accessed_date=date, written_time=time, written_date=date,
                start_cluster=0 if parent.is_root else parent.start_cluster)
            chain.write(0, entries.encode_entry(dot) + entries.encode_entry(dotdot))
        raw = entries.serialize_directory_entry(
            name, short, attributes=attributes, start_cluster=start, size=0,
            created=now, accessed=now, written=now)
        slot = self._insert_records(parent, raw)
        return FatNode(
            kind=kind, long_name=name, short_name=short, attributes=attributes,
            start_cluster=start, size=0, created=now, accessed=now, written=now,
            parent=parent, slot_start=slot,
            slot_count=len(raw) // entries.RECORD_SIZE)

    def _tombstone(self, node):
        chain = self._dir_chain(node.parent)
        for slot in range(node.slot_start, node.slot_start + node.slot_count):
            chain.write(slot * entries.RECORD_SIZE, bytes([entries.FREE_BYTE]))

    def delete_node(self, node):
        """Remove a file or an empty directory and free its clusters."""
        if node.is_root:
            raise Fat32Error("cannot delete the root directory")
        if node.kind == DIRECTORY and self.list_children(node):
            raise DirectoryNotEmptyError(f"{node.path} is not empty")
        self._tombstone(node)
        if node.start_cluster:
            self.fat.free_chain(self.fat.chain_from(node.start_cluster), 0)

    def move_node(self, node, new_parent, new_name=None):
        """Move (or rename, when the parent stays put) a file or directory.

        The start cluster and creation/access stamps travel unchanged; the
        write stamp is refreshed. Returns the node's new handle.
        """
        if node.is_root:
            raise Fat32Error("cannot move the root directory")
        if new_parent.kind != DIRECTORY:
            raise Fat32Error(f"{new_parent.path} is not a directory")
        name = new_name if new_name is not None else node.long_name
        if new_name is not None:
            names.validate_long_name(new_name)
        if node.kind == DIRECTORY:
            ancestor = new_parent
            while ancestor is not None:
                if ancestor.start_cluster == node.start_cluster:
                    raise Fat32Error(
                        f"cannot move {node.path} into itself")
                ancestor = ancestor.parent
        same_dir = new_parent.start_cluster == (
            node.parent.start_cluster if node.parent else -1)
        _, parsed = self._read_dir(new_parent)
        skip = node.slot_start if same_dir else None
        self._collision_check(parsed, name, skip_slot=skip)
        existing_shorts = {e.short_name for e in parsed.entries
                           if e.slot_start != skip}
        short = names.generate_short_name(name, existing_shorts)
        now = self._now()
        raw = entries.serialize_directory_entry(
            name, short, attributes=node.attributes,
            start_cluster=node.start_cluster, size=node.size,
            created=node.created, accessed=node.accessed, written=now)
        slot = self._insert_records(new_parent, raw)
        self._tombstone(node)
        if node.kind == DIRECTORY:
            self._rewrite_dotdot(node, new_parent)
        return FatNode(
            kind=node.kind, long_name=name, short_name=short,
            attributes=node.attributes, start_cluster=node.start_cluster,
            size=node.size, created=node.created, accessed=node.accessed,
            written=now, parent=new_parent, slot_start=slot,
            slot_count=len(raw) // entries.RECORD_SIZE)

    def _rewrite_dotdot(self, dir_node, new_parent):
        chain = ClusterChain(self.fat, dir_node.start_cluster)
        offset = entries.RECORD_SIZE  # dotdot sits in slot 1
        record = entries.decode_entry(chain.read(offset, entries.RECORD_SIZE))
        if record.name != entries.DOTDOT_NAME:
            log.warning("%s has no dotdot record where one belongs",
                        dir_node.path)
            return
        record.start_cluster = 0 if new_parent.is_root else new_parent.start_cluster
        chain.write(offset, entries.encode_entry(record))

    # file I/O

    def file_read(self, node, offset, length):
        """Read bytes from a file; refreshes the last-access date."""
        if node.kind != FILE:
            raise Fat32Error(f"{node.path} is not a file")
        if offset < 0 or length < 0 or offset + length > node.size:
            raise OutOfRangeError(
                "read [%d, %d) outside file size %d"
                % (offset, offset + length, node.size))
        if length == 0:
            return b""
        chain = ClusterChain(self.fat, node.start_cluster)
        data = chain.read(offset, length)
        self._patch_entry(node, accessed=self._now())
        return data

    def file_write(self, node, offset, data):
        """Write bytes, growing the file as needed.

        A write past the current end zero-fills the gap first, so the file
        never exposes stale cluster contents.
        """
        if node.kind != FILE:
            raise Fat32Error(f"{node.path} is not a file")
        if offset < 0:
            raise OutOfRangeError("negative write offset")
        new_size = max(node.size, offset + len(data))
        if new_size > MAX_FILE_SIZE:
            raise FileTooLargeError(
                "size %d exceeds the 4 GiB - 1 limit" % new_size)
        chain = ClusterChain(self.fat, node.start_cluster)
        if offset > node.size:
            chain.write(node.size, bytes(offset - node.size))
        chain.write(offset, data)
        self._patch_entry(
            node, size=new_size, start_cluster=chain.start_cluster,
            written=self._now(),
            attributes=node.attributes | entries.ATTR_ARCHIVE)

    def set_file_size(self, node, new_size):
        """Truncate or extend without writing data bytes.

        The size guard lives here: 4 GiB - 1 is the largest representable
        size, anything above fails before a single cluster moves. Extended
        regions get whatever the clusters already hold; regular writes are
        the path that guarantees zeroed gaps.
        """
        if node.kind != FILE:
            raise Fat32Error(f"{node.path} is not a file")
        if new_size < 0:
            raise ValueError("negative file size")
        if new_size > MAX_FILE_SIZE:
            raise FileTooLargeError(
                "size %d exceeds the 4 GiB - 1 limit" % new_size)
        chain = ClusterChain(self.fat, node.start_cluster)
        chain.set_length(new_size)
        self._patch_entry(
            node, size=new_size, start_cluster=chain.start_cluster,
            written=self._now(),
            attributes=node.attributes | entries.ATTR_ARCHIVE)

    # volume label

    def get_volume_label(self):
        """Root VOLUME_ID entry when present, else the boot-sector field."""
        _, parsed = self._read_dir(self.root)
        if parsed.label is not None:
            return parsed.label
        return self.boot.volume_label.decode("latin-1").rstrip(" ")

    def set_volume_label(self, text):
        """Write the label to the root entry and both boot sectors."""
        label = names.encode_volume_label(text)
        chain, parsed = self._read_dir(self.root)
        if parsed.label_slot is not None:
            offset = parsed.label_slot * entries.RECORD_SIZE
            record = entries.decode_entry(chain.read(offset, entries.RECORD_SIZE))
            record.name = label
            chain.write(offset, entries.encode_entry(record))
        else:
            date, time, _ = entries.encode_datetime(self._now())
            record = entries.DirEntry(
                name=label, attributes=entries.ATTR_VOLUME_ID,
                written_time=time, written_date=date)
            self._insert_records(self.root, entries.encode_entry(record))
        self.boot.set_volume_label(label)
        sector = bytes(self.boot.raw)
        self.device.write_at(0, sector)
        if self.boot.backup_boot_sector:
            self.device.write_at(
                self.boot.backup_boot_sector * self.boot.bytes_per_sector, sector)

    # whole-volume validation

    def validate(self):
        """Cross-check the volume; returns a list of problems (empty = clean).

        Covers FSInfo truth, FAT mirror equality, chain soundness including
        cross-links and leaks, and size/chain-length consistency.
        """
        problems = []
        boot = self.boot
        disk_info = read_fsinfo(self.device, boot)
        brute = self.fat.brute_free_count()
        if disk_info.free_count != 0xFFFFFFFF and disk_info.free_count != brute:
            problems.append(
                "FSInfo free count %d but the FAT holds %d free clusters"
                % (disk_info.free_count, brute))
        if boot.mirroring_enabled and boot.num_fats > 1:
            problems.extend(self._compare_fat_copies())

        referenced = {}

        def claim(cluster, owner):
            other = referenced.get(cluster)
            if other is not None:
                problems.append(
                    "cluster %d belongs to both %s and %s" % (cluster, other, owner))
                return False
            referenced[cluster] = owner
            return True

        stack = [self.root]
        seen_dirs = set()
        while stack:
            node = stack.pop()
            if node.start_cluster in seen_dirs:
                continue
            seen_dirs.add(node.start_cluster)
            try:
                chain = self.fat.chain_from(node.start_cluster)
            except Fat32Error as exc:
                problems.append("%s: %s" % (node.path, exc))
                continue
            for cluster in chain:
                claim(cluster, node.path)
            _, parsed = self._read_dir(node)
            for entry in parsed.entries:
                if entry.is_dot or entry.is_dotdot:
                    continue
                child = self._node_from_entry(node, entry)
                if child.kind == DIRECTORY:
                    if entry.size != 0:
                        problems.append(
                            "%s: directory carries size %d" % (child.path, entry.size))
                    if child.start_cluster == 0:
                        problems.append("%s: directory with start cluster 0" % child.path)
                    else:
                        stack.append(child)
                    continue
                problems.extend(self._check_file(child, claim))

        allocated = self._allocated_clusters()
        leaked = allocated - set(referenced)
        if leaked:
            sample = sorted(leaked)[:8]
            problems.append(
                "%d allocated clusters belong to no file or directory "
                "(first few: %s)" % (len(leaked), sample))
        return problems

    def _check_file(self, node, claim):
        problems = []
        cluster_size = self.boot.cluster_size_bytes
        if node.size == 0:
            if node.start_cluster != 0:
                problems.append(
                    "%s: empty file still points at cluster %d"
                    % (node.path, node.start_cluster))
            return problems
        if node.start_cluster == 0:
            problems.append(
                "%s: %d bytes but no start cluster" % (node.path, node.size))
            return problems
        try:
            chain = self.fat.chain_from(node.start_cluster)
        except Fat32Error as exc:
            problems.append("%s: %s" % (node.path, exc))
            return problems
        for cluster in chain:
            claim(cluster, node.path)
        want = -(-node.size // cluster_size)
        if len(chain) != want:
            problems.append(
                "%s: size %d needs %d clusters, chain has %d"
                % (node.path, node.size, want, len(chain)))
        return problems

    def _compare_fat_copies(self):
        problems = []
        boot = self.boot
        region = boot.fat_size_sectors * boot.bytes_per_sector
        chunk = 1 << 16
        for copy in range(1, boot.num_fats):
            for offset in range(0, region, chunk):
                n = min(chunk, region - offset)
                a = self.device.read_at(boot.fat_offset_bytes(0) + offset, n)
                b = self.device.read_at(boot.fat_offset_bytes(copy) + offset, n)
                if a != b:
                    problems.append(
                        "FAT copy %d differs from copy 0 near byte %d"
                        % (copy, offset))
                    break
        return problems

    def _allocated_clusters(self):
        allocated = set()
        base = self.boot.fat_offset_bytes(self.boot.active_fat)
        cluster = 2
        while cluster < self.fat.entry_count:
            n = min(8192, self.fat.entry_count - cluster)
            raw = self.device.read_at(base + 4 * cluster, 4 * n)
            for i, value in enumerate(struct.unpack("<%dI" % n, raw)):
                masked = value & ENTRY_MASK
                if masked != 0 and masked != BAD_CLUSTER:
                    allocated.add(cluster + i)
            cluster += n
        return allocated
