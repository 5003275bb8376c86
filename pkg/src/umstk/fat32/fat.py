"""File allocation table access: entry codec, chain walking, alloc and free.

FAT entries are 32 bits on disk but only the low 28 bits carry the cluster
number; the top nibble is reserved and must survive rewrites. Values are
classified as free (0), reserved (1), bad (FFFFFF7h), end-of-chain
(FFFFFF8h and above), or a link to the next cluster.
"""

import logging
import struct

from ..errors import CorruptChainError, NoSpaceError
from .bootsector import UNKNOWN, write_fsinfo

log = logging.getLogger("umstk.fat32")

ENTRY_MASK = 0x0FFFFFFF
BAD_CLUSTER = 0x0FFFFFF7
END_OF_CHAIN_MIN = 0x0FFFFFF8
END_OF_CHAIN = 0x0FFFFFFF

# read this many FAT entries per device round trip when scanning
_SCAN_CHUNK = 8192


class Fat:
    """One volume's allocation table, covering every mirrored copy.

    Also owns the FSInfo counters: every mutation updates free_count and
    next_free in memory and persists them, so the on-disk FSInfo sector is
    never stale. Unknown counts are resolved by a full scan at mount.
    """

    def __init__(self, device, boot, fsinfo):
        self.device = device
        self.boot = boot
        self.fsinfo = fsinfo
        self.entry_count = boot.entry_count
        if not 0 <= boot.active_fat < boot.num_fats:
            raise CorruptChainError(
                "active FAT index %d but volume has %d copies"
                % (boot.active_fat, boot.num_fats))
        if fsinfo.free_count == UNKNOWN or fsinfo.free_count > self.entry_count:
            fsinfo.free_count = self.brute_free_count()
            log.info("free count recomputed by scan: %d", fsinfo.free_count)
        if fsinfo.next_free == UNKNOWN or not 2 <= fsinfo.next_free < self.entry_count:
            fsinfo.next_free = 2

    def _entry_offset(self, cluster, copy):
        return self.boot.fat_offset_bytes(copy) + 4 * cluster

    def _check_cluster(self, cluster):
        if not 2 <= cluster < self.entry_count:
            raise CorruptChainError(
                "cluster %d outside valid range 2..%d"
                % (cluster, self.entry_count - 1))

    def read_entry(self, cluster):
        """Return the 28-bit FAT value for a cluster (active copy)."""
        self._check_cluster(cluster)
        raw = self.device.read_at(self._entry_offset(cluster, self.boot.active_fat), 4)
        return struct.unpack("<I", raw)[0] & ENTRY_MASK

    def write_entry(self, cluster, value):
        self._check_cluster(cluster)
        self._write_entries({cluster: value})

    def _target_copies(self):
        if self.boot.mirroring_enabled:
            return range(self.boot.num_fats)
        return (self.boot.active_fat,)

    def _write_entries(self, updates):
        """Apply {cluster: 28-bit value} to every live FAT copy.

        Consecutive clusters are coalesced into single device writes; the
        reserved top nibble of each touched entry is read back first and
        preserved.
        """
        clusters = sorted(updates)
        spans = []
        run = [clusters[0]]
        for c in clusters[1:]:
            if c == run[-1] + 1:
                run.append(c)
            else:
                spans.append(run)
                run = [c]
        spans.append(run)
        active = self.boot.active_fat
        for span in spans:
            offset = self._entry_offset(span[0], active)
            buf = bytearray(self.device.read_at(offset, 4 * len(span)))
            for i, cluster in enumerate(span):
                old = struct.unpack_from("<I", buf, 4 * i)[0]
                struct.pack_into("<I", buf, 4 * i,
                                 (old & ~ENTRY_MASK) | (updates[cluster] & ENTRY_MASK))
            data = bytes(buf)
            for copy in self._target_copies():
                self.device.write_at(self._entry_offset(span[0], copy), data)

    def _flush_fsinfo(self):
        write_fsinfo(self.device, self.boot, self.fsinfo)

    def chain_from(self, start_cluster):
        """Follow FAT links from start_cluster to the end-of-chain mark.

        A link to a free, reserved, bad, or out-of-range entry means the
        volume is damaged, as does revisiting a cluster.
        """
        if not 2 <= start_cluster < self.entry_count:
            raise CorruptChainError("chain start %d out of range" % start_cluster)
        chain = [start_cluster]
        seen = {start_cluster}
        cluster = start_cluster
        while True:
            value = self.read_entry(cluster)
            if value >= END_OF_CHAIN_MIN:
                return chain
            if value == 0:
                raise CorruptChainError("cluster %d links to a free entry" % cluster)
            if value == 1:
                raise CorruptChainError("cluster %d links to the reserved entry" % cluster)
            if value == BAD_CLUSTER:
                raise CorruptChainError("cluster %d links to a bad cluster" % cluster)
            if value >= self.entry_count:
                raise CorruptChainError(
                    "cluster %d links past the volume (%d)" % (cluster, value))
            if value in seen:
                raise CorruptChainError("cluster chain cycles at %d" % value)
            chain.append(value)
            seen.add(value)
            cluster = value

    def _scan_free(self, count, exclude):
        """Find `count` free clusters, scanning from the next_free hint.

        The hint is just that: every candidate is verified to actually be
        free. The scan wraps around the volume once.
        """
        found = []
        start = self.fsinfo.next_free
        if not 2 <= start < self.entry_count:
            start = 2
        fat_base = self.boot.fat_offset_bytes(self.boot.active_fat)

        def scan(lo, hi):
            cluster = lo
            while cluster < hi and len(found) < count:
                n = min(_SCAN_CHUNK, hi - cluster)
                raw = self.device.read_at(fat_base + 4 * cluster, 4 * n)
                values = struct.unpack("<%dI" % n, raw)
                for i, value in enumerate(values):
                    if value & ENTRY_MASK == 0 and cluster + i not in exclude:
                        found.append(cluster + i)
                        if len(found) == count:
                            break
                cluster += n

        scan(start, self.entry_count)
        if len(found) < count:
            scan(2, start)
        return found

    def allocate(self, chain, count):
        """Extend `chain` (possibly empty) by `count` fresh clusters.

        Returns the list of newly allocated clusters. Nothing is written
        until enough free entries have been found, so a full volume leaves
        the FAT untouched.
        """
        if count < 1:
            raise ValueError("allocation count must be at least 1")
        fresh = self._scan_free(count, exclude=set(chain))
        if len(fresh) < count:
            raise NoSpaceError(
                "need %d clusters, volume has %d free" % (count, len(fresh)))
        updates = {}
        if chain:
            updates[chain[-1]] = fresh[0]
        for here, after in zip(fresh, fresh[1:]):
            updates[here] = after
        updates[fresh[-1]] = END_OF_CHAIN
        self._write_entries(updates)
        self.fsinfo.free_count = max(0, self.fsinfo.free_count - count)
        self.fsinfo.next_free = fresh[-1]
        self._flush_fsinfo()
        return fresh

    def free_chain(self, chain, keep):
        """Release every cluster of `chain` past the first `keep`."""
        if not 0 <= keep <= len(chain):
            raise ValueError("keep %d outside 0..%d" % (keep, len(chain)))
        if keep == len(chain):
            return list(chain)
        updates = {cluster: 0 for cluster in chain[keep:]}
        if keep:
            updates[chain[keep - 1]] = END_OF_CHAIN
        self._write_entries(updates)
        self.fsinfo.free_count += len(chain) - keep
        self._flush_fsinfo()
        return list(chain[:keep])

    def brute_free_count(self):
        """Count zero entries in the active FAT for clusters 2 and up."""
        free = 0
        fat_base = self.boot.fat_offset_bytes(self.boot.active_fat)
        cluster = 2
        while cluster < self.entry_count:
            n = min(_SCAN_CHUNK, self.entry_count - cluster)
            raw = self.device.read_at(fat_base + 4 * cluster, 4 * n)
            for value in struct.unpack("<%dI" % n, raw):
                if value & ENTRY_MASK == 0:
                    free += 1
            cluster += n
        return free
