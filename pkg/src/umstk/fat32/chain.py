"""Cluster chain byte I/O: maps file offsets onto data-region clusters.

A chain is an ordered cluster list; byte ranges are split at cluster
boundaries, with runs of physically adjacent clusters coalesced into one
device transfer.
"""

from ..errors import OutOfRangeError


def cluster_to_byte_offset(boot, cluster):
    """Byte offset of a cluster's first byte from the start of the volume."""
    if cluster < 2:
        raise ValueError("cluster numbers start at 2, got %d" % cluster)
    sector = boot.data_region_start + (cluster - 2) * boot.sectors_per_cluster
    return sector * boot.bytes_per_sector


class ClusterChain:
    """A file's or directory's clusters with read/write/resize on top.

    Growing is cluster-granular; shrinking frees from the tail. A chain may
    be empty (the zero-size file convention: start cluster 0, no clusters).
    """

    def __init__(self, fat, start_cluster):
        self.fat = fat
        self.boot = fat.boot
        self.device = fat.device
        if start_cluster == 0:
            self.clusters = []
        else:
            self.clusters = fat.chain_from(start_cluster)

    @property
    def start_cluster(self):
        return self.clusters[0] if self.clusters else 0

    @property
    def cluster_size(self):
        return self.boot.cluster_size_bytes

    @property
    def capacity(self):
        return len(self.clusters) * self.cluster_size

    def _spans(self, offset, length):
        """Yield (device_offset, length) runs covering the byte range."""
        size = self.cluster_size
        pos = offset
        end = offset + length
        while pos < end:
            index, within = divmod(pos, size)
            run_len = min(end - pos, size - within)
            # absorb physically consecutive clusters into the same run
            while (pos + run_len < end
                   and index + 1 < len(self.clusters)
                   and self.clusters[index + 1] == self.clusters[index] + 1):
                index += 1
                run_len += min(end - (pos + run_len), size)
            yield cluster_to_byte_offset(self.boot, self.clusters[pos // size]) + within, run_len
            pos += run_len

    def read(self, offset, length):
        if offset < 0 or length < 0 or offset + length > self.capacity:
            raise OutOfRangeError(
                "read [%d, %d) outside chain capacity %d"
                % (offset, offset + length, self.capacity))
        parts = []
        for dev_offset, n in self._spans(offset, length):
            parts.append(self.device.read_at(dev_offset, n))
        return b"".join(parts)

    def write(self, offset, data):
        """Write bytes, growing the chain first when the range runs past it."""
        if offset < 0:
            raise OutOfRangeError("negative write offset")
        needed = offset + len(data)
        if needed > self.capacity:
            self.set_length(needed)
        pos = 0
        for dev_offset, n in self._spans(offset, len(data)):
            self.device.write_at(dev_offset, data[pos:pos + n])
            pos += n

    def set_length(self, byte_length, minimum_clusters=0, zero_fill=False):
        """Resize to ceil(byte_length / cluster_size) clusters.

        Directories pass minimum_clusters=1 (they always own storage) and
        zero_fill=True so fresh clusters read as all-terminator records.
        """
        if byte_length < 0:
            raise ValueError("negative chain length")
        size = self.cluster_size
        target = max((byte_length + size - 1) // size, minimum_clusters)
        current = len(self.clusters)
        if target > current:
            fresh = self.fat.allocate(self.clusters, target - current)
            self.clusters.extend(fresh)
            if zero_fill:
                blank = bytes(size)
                for cluster in fresh:
                    self.device.write_at(cluster_to_byte_offset(self.boot, cluster), blank)
        elif target < current:
            self.clusters = self.fat.free_chain(self.clusters, target)
