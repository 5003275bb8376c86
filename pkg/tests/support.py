"""Shared helpers for the test suite."""

from umstk.blockdev import BlockDevice


class SparseMemoryDevice(BlockDevice):
    """Dict-of-blocks device with a huge virtual size.

    Only blocks that were actually written consume memory; everything else
    reads back as zeros. Lets the size-limit guard be exercised without a
    real multi-GiB allocation.
    """

    def __init__(self, block_count, block_size=512):
        self.block_size = block_size
        self.block_count = block_count
        self._blocks = {}

    def read_at(self, offset, length):
        self._check_range(offset, length)
        out = bytearray(length)
        pos = 0
        while pos < length:
            index, within = divmod(offset + pos, self.block_size)
            n = min(self.block_size - within, length - pos)
            block = self._blocks.get(index)
            if block is not None:
                out[pos:pos + n] = block[within:within + n]
            pos += n
        return bytes(out)

    def write_at(self, offset, data):
        self._check_range(offset, len(data))
        pos = 0
        while pos < len(data):
            index, within = divmod(offset + pos, self.block_size)
            n = min(self.block_size - within, len(data) - pos)
            block = self._blocks.get(index)
            if block is None:
                block = bytearray(self.block_size)
                self._blocks[index] = block
            block[within:within + n] = data[pos:pos + n]
            pos += n
