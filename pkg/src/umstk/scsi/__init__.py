"""Bulk-only-transport SCSI: shared framing codecs, host driver, target emulator."""
