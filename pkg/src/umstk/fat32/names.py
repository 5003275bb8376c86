"""Short (8.3) name rules: validation, checksum, and collision-free generation.

Short names are stored as 11 raw bytes: 8-byte base padded with spaces, then
a 3-byte extension padded with spaces, no dot. Long names are UTF-16 strings
up to 255 code units.
"""

from ..errors import InvalidNameError, ShortNameExhaustedError

# characters legal in a long name but not in a short one get replaced by '_'
_SHORT_LEGAL = frozenset(
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    b"!#$%&'()-@^_`{}~\x80\x81\x82\x83\x84\x85\x86\x87\x88\x89\x8a\x8b\x8c"
    b"\x8d\x8e\x8f\x90\x91\x92\x93\x94\x95\x96\x97\x98\x99\x9a\x9b\x9c\x9d"
    b"\x9e\x9f\xa0\xa1\xa2\xa3\xa4\xa5\xa6\xa7\xa8\xa9\xaa\xab\xac\xad\xae"
    b"\xaf\xb0\xb1\xb2\xb3\xb4\xb5\xb6\xb7\xb8\xb9\xba\xbb\xbc\xbd\xbe\xbf"
    b"\xc0\xc1\xc2\xc3\xc4\xc5\xc6\xc7\xc8\xc9\xca\xcb\xcc\xcd\xce\xcf\xd0"
    b"\xd1\xd2\xd3\xd4\xd5\xd6\xd7\xd8\xd9\xda\xdb\xdc\xdd\xde\xdf\xe0\xe1"
    b"\xe2\xe3\xe4\xe5\xe6\xe7\xe8\xe9\xea\xeb\xec\xed\xee\xef\xf0\xf1\xf2"
    b"\xf3\xf4\xf5\xf6\xf7\xf8\xf9\xfa\xfb\xfc\xfd\xfe\xff"
)

# forbidden in long names; everything below 0x20 is forbidden too
_LONG_ILLEGAL = frozenset('"*/:<>?\\|')


def short_name_checksum(short_name):
    """One-byte checksum over the 11 raw name bytes.

    Each step rotates the accumulator right one bit, then adds the next byte
    (mod 256). Long-name records carry this value to bind them to their
    short entry.
    """
    if len(short_name) != 11:
        raise ValueError(f"short name must be 11 bytes, got {len(short_name)}")
    s = 0
    for b in short_name:
        s = (((s >> 1) | ((s & 1) << 7)) + b) & 0xFF
    return s


def validate_long_name(name):
    """Reject names the directory layer must never store.

    Length is counted in UTF-16 code units (an astral char costs two), since
    that is how the on-disk records store them.
    """
    if not name:
        raise InvalidNameError("name is empty")
    units = len(name.encode("utf-16-le")) // 2
    if units > 255:
        raise InvalidNameError(f"name is {units} UTF-16 units, limit is 255")
    for ch in name:
        if ord(ch) < 0x20 or ch in _LONG_ILLEGAL:
            raise InvalidNameError(f"character {ch!r} not allowed in a name")
    if all(c in " ." for c in name):
        raise InvalidNameError(f"name {name!r} has no usable characters")


def _fold_char(b):
    """Map one latin-1 byte to its short-name form.

    Returns (byte, altered): lowercase ASCII folds to upper without counting
    as an alteration; anything else illegal becomes '_' and does count.
    """
    if 0x61 <= b <= 0x7A:  # a..z
        return b - 0x20, False
    if b in _SHORT_LEGAL:
        return b, False
    return 0x5F, True  # '_'


def generate_short_name(long_name, existing, limit=1_000_000):
    """Derive a unique 11-byte short name for `long_name`.

    `existing` is the set of 11-byte short names already present in the
    directory. A numeric ~N tail is appended only when the plain derivation
    was truncated, had characters replaced, or collides; N is the smallest
    positive integer that avoids `existing`. Case folding alone does not
    force a tail.
    """
    validate_long_name(long_name)

    stripped = long_name.lstrip(".")
    altered = len(stripped) != len(long_name)
    if "." in stripped:
        stem, ext = stripped.rsplit(".", 1)
    else:
        stem, ext = stripped, ""
    # embedded periods (in the stem) and all spaces are dropped
    if "." in stem:
        stem = stem.replace(".", "")
        altered = True
    if " " in stem or " " in ext:
        stem = stem.replace(" ", "")
        ext = ext.replace(" ", "")
        altered = True

    def fold(text):
        nonlocal altered
        out = bytearray()
        for ch in text:
            code = ord(ch)
            if code > 0xFF:
                out.append(0x5F)
                altered = True
                continue
            folded, changed = _fold_char(code)
            out.append(folded)
            if changed:
                altered = True
        return bytes(out)

    base = fold(stem)
    ext_b = fold(ext)
    truncated = len(base) > 8 or len(ext_b) > 3
    base = base[:8]
    ext_b = ext_b[:3]
    if not base:
        # name like ".txt": stem emptied, extension becomes the base
        base, ext_b = ext_b, b""
        altered = True

    ext_field = ext_b.ljust(3, b" ")
    if not (altered or truncated):
        candidate = base.ljust(8, b" ") + ext_field
        if candidate not in existing:
            return candidate

    for n in range(1, limit):
        tail = b"~%d" % n
        head = base[:8 - len(tail)] + tail
        candidate = head.ljust(8, b" ") + ext_field
        if candidate not in existing:
            return candidate
    raise ShortNameExhaustedError(
        f"no free ~N short name for {long_name!r} within {limit} tries")


def encode_volume_label(text):
    """11 raw bytes for a volume label: uppercased, space padded."""
    if not text or len(text) > 11:
        raise InvalidNameError("volume label must be 1 to 11 characters")
    try:
        raw = text.upper().encode("latin-1")
    except UnicodeEncodeError as exc:
        raise InvalidNameError(f"label character not storable: {exc}") from None
    if len(raw) > 11:
        raise InvalidNameError("volume label must be 1 to 11 characters")
    for b in raw:
        if b not in _SHORT_LEGAL and b != 0x20:
            raise InvalidNameError(
                f"character {chr(b)!r} not allowed in a volume label")
    return raw.ljust(11, b" ")


def short_display_form(short_name):
    """Render 11 raw bytes as the dotted name a listing would show."""
    if len(short_name) != 11:
        raise ValueError(f"short name must be 11 bytes, got {len(short_name)}")
    raw = bytes(short_name)
    if raw[0] == 0x05:  # stored substitute for a leading 0xE5 byte
        raw = b"\xe5" + raw[1:]
    base = raw[:8].rstrip(b" ").decode("latin-1")
    ext = raw[8:11].rstrip(b" ").decode("latin-1")
    return f"{base}.{ext}" if ext else base
