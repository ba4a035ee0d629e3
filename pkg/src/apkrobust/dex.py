"""Dalvik executable (DEX) reader and writer.

Covers the table sections needed for static feature work: string pool, type
names, method references, and per-method bytecode. Field tables, annotations,
debug info, try blocks, and the map section are skipped on read and left
empty on write. Supported format versions: 035 through 039, little-endian.

The instruction decoder walks the official width table. Payload pseudo
instructions (packed-switch, sparse-switch, fill-array-data) are consumed
whole but contribute a single 0x00 byte to the opcode sequence; bigram
counting works on instruction opcodes, not table contents.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field

from .errors import (
    BadDexMagic,
    InvalidIndex,
    ModelTooLarge,
    TruncatedDex,
    UnknownOpcode,
    UnserializableModel,
)

NO_INDEX = 0xFFFFFFFF
ENDIAN_CONSTANT = 0x12345678
HEADER_SIZE = 0x70
SUPPORTED_VERSIONS = (b"035", b"036", b"037", b"038", b"039")

ACC_PUBLIC = 0x0001

CONST_STRING = 0x1A
CONST_STRING_JUMBO = 0x1B
NOP = 0x00
GOTO = 0x28
RETURN_VOID = 0x0E

# Instruction widths in 16-bit code units, indexed by opcode byte. None marks
# the unassigned gaps (0x3e-0x43, 0x73, 0x79-0x7a, 0xe3-0xf9).
_W: list[int | None] = [None] * 256


def _fill(rng, width):
    for op in rng:
        _W[op] = width


_W[0x00] = 1
for _base in (0x01, 0x04, 0x07):        # move / move-wide / move-object
    _W[_base], _W[_base + 1], _W[_base + 2] = 1, 2, 3
_fill(range(0x0A, 0x12), 1)             # move-result*, move-exception, return*
_W[0x12] = 1                            # const/4
_W[0x13], _W[0x14], _W[0x15] = 2, 3, 2  # const/16, const, const/high16
_W[0x16], _W[0x17], _W[0x18], _W[0x19] = 2, 3, 5, 2   # const-wide group
_W[0x1A], _W[0x1B], _W[0x1C] = 2, 3, 2  # const-string, /jumbo, const-class
_W[0x1D] = _W[0x1E] = 1                 # monitor enter/exit
_W[0x1F] = _W[0x20] = 2                 # check-cast, instance-of
_W[0x21] = 1                            # array-length
_W[0x22] = _W[0x23] = 2                 # new-instance, new-array
_W[0x24] = _W[0x25] = _W[0x26] = 3      # filled-new-array*, fill-array-data
_W[0x27] = _W[0x28] = 1                 # throw, goto
_W[0x29], _W[0x2A] = 2, 3               # goto/16, goto/32
_W[0x2B] = _W[0x2C] = 3                 # packed-switch, sparse-switch
_fill(range(0x2D, 0x32), 2)             # cmp
_fill(range(0x32, 0x38), 2)             # if-test
_fill(range(0x38, 0x3E), 2)             # if-testz
_fill(range(0x44, 0x52), 2)             # array get/put
_fill(range(0x52, 0x60), 2)             # instance field get/put
_fill(range(0x60, 0x6E), 2)             # static field get/put
_fill(range(0x6E, 0x73), 3)             # invoke-kind
_fill(range(0x74, 0x79), 3)             # invoke-kind/range
_fill(range(0x7B, 0x90), 1)             # unary ops
_fill(range(0x90, 0xB0), 2)             # binary ops
_fill(range(0xB0, 0xD0), 1)             # binop/2addr
_fill(range(0xD0, 0xD8), 2)             # binop/lit16
_fill(range(0xD8, 0xE3), 2)             # binop/lit8
_W[0xFA] = _W[0xFB] = 4                 # invoke-polymorphic(/range)
_W[0xFC] = _W[0xFD] = 3                 # invoke-custom(/range)
_W[0xFE] = _W[0xFF] = 2                 # const-method-handle/-type

OPCODE_WIDTHS: tuple[int | None, ...] = tuple(_W)
del _W, _base

# Opcodes that carry a method_ids index in their second code unit.
INVOKE_OPS = frozenset(range(0x6E, 0x73)) | frozenset(range(0x74, 0x79)) | {0xFA, 0xFB}
STRING_OPS = frozenset({CONST_STRING, CONST_STRING_JUMBO})


@dataclass(frozen=True)
class MethodRef:
    defining_class: str
    method_name: str
    prototype_shorty: str


@dataclass
class DefinedMethod:
    """One method with code: its method_ids slot plus decoded bytecode.

    const_string_uses holds string pool indices in code order (the k-th entry
    pairs with the k-th const-string opcode in the sequence); invoke_uses does
    the same for invoke-family opcodes.
    """

    method_idx: int
    opcodes: list[int] = field(default_factory=list)
    const_string_uses: list[int] = field(default_factory=list)
    invoke_uses: list[int] = field(default_factory=list)


@dataclass
class DefinedClass:
    name: str
    methods: list[DefinedMethod] = field(default_factory=list)


@dataclass
class DexModel:
    string_pool: list[str] = field(default_factory=list)
    type_names: list[str] = field(default_factory=list)
    method_refs: list[MethodRef] = field(default_factory=list)
    defined_classes: list[DefinedClass] = field(default_factory=list)

    def defined_class_names(self) -> set[str]:
        return {c.name for c in self.defined_classes}

    def iter_bodies(self):
        for cls in self.defined_classes:
            for method in cls.methods:
                yield cls, method


def code_events(method: DefinedMethod):
    """Interleave operand uses in code order.

    Yields ("str", string_index) and ("call", method_ref_index) tuples by
    walking the opcode sequence with one cursor per operand list.
    """
    si = ci = 0
    for op in method.opcodes:
        if op in STRING_OPS:
            yield "str", method.const_string_uses[si]
            si += 1
        elif op in INVOKE_OPS:
            yield "call", method.invoke_uses[ci]
            ci += 1


# ---------------------------------------------------------------------------
# low-level readers


def _read_uleb128(data: bytes, off: int) -> tuple[int, int]:
    result = 0
    shift = 0
    for _ in range(5):
        if off >= len(data):
            raise TruncatedDex("uleb128 runs past end of file")
        b = data[off]
        off += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, off
        shift += 7
    raise InvalidIndex("uleb128", off)


def _encode_uleb128(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_mutf8(data: bytes, off: int) -> tuple[str, int]:
    """Decode a NUL-terminated modified-UTF-8 run into text."""
    units = []
    while True:
        if off >= len(data):
            raise TruncatedDex("string data runs past end of file")
        b = data[off]
        if b == 0:
            off += 1
            break
        if b < 0x80:
            units.append(b)
            off += 1
        elif b >> 5 == 0b110:
            if off + 2 > len(data):
                raise TruncatedDex("string data runs past end of file")
            b2 = data[off + 1]
            if b2 >> 6 != 0b10:
                raise InvalidIndex("string_data", off)
            units.append(((b & 0x1F) << 6) | (b2 & 0x3F))
            off += 2
        elif b >> 4 == 0b1110:
            if off + 3 > len(data):
                raise TruncatedDex("string data runs past end of file")
            b2, b3 = data[off + 1], data[off + 2]
            if b2 >> 6 != 0b10 or b3 >> 6 != 0b10:
                raise InvalidIndex("string_data", off)
            units.append(((b & 0x0F) << 12) | ((b2 & 0x3F) << 6) | (b3 & 0x3F))
            off += 3
        else:
            raise InvalidIndex("string_data", off)
    raw = b"".join(struct.pack("<H", u) for u in units)
    return raw.decode("utf-16-le", "surrogatepass"), off


def _encode_mutf8(text: str) -> bytes:
    out = bytearray()
    raw = text.encode("utf-16-le", "surrogatepass")
    for i in range(0, len(raw), 2):
        u = raw[i] | (raw[i + 1] << 8)
        if 0 < u < 0x80:
            out.append(u)
        elif u < 0x800:           # includes U+0000, encoded as C0 80
            out.append(0xC0 | (u >> 6))
            out.append(0x80 | (u & 0x3F))
        else:
            out.append(0xE0 | (u >> 12))
            out.append(0x80 | ((u >> 6) & 0x3F))
            out.append(0x80 | (u & 0x3F))
    return bytes(out)


def _check_table(data: bytes, off: int, count: int, width: int, name: str):
    if count == 0:
        return
    if off + count * width > len(data):
        raise TruncatedDex(f"{name} table out of bounds")


# ---------------------------------------------------------------------------
# parsing


def parse_dex(data: bytes) -> DexModel:
    """Decode DEX bytes into a DexModel.

    Raises BadDexMagic, TruncatedDex, InvalidIndex, or UnknownOpcode on
    malformed input. Checksums and signatures are not verified.
    """
    if len(data) < HEADER_SIZE:
        raise TruncatedDex(f"file is {len(data)} bytes, header needs {HEADER_SIZE}")
    if data[:4] != b"dex\n" or data[7] != 0:
        raise BadDexMagic("missing dex magic")
    if bytes(data[4:7]) not in SUPPORTED_VERSIONS:
        raise BadDexMagic(f"unsupported format version {bytes(data[4:7])!r}")
    (endian,) = struct.unpack_from("<I", data, 40)
    if endian != ENDIAN_CONSTANT:
        raise BadDexMagic(f"endian tag 0x{endian:08x} not supported")

    (string_count, string_off, type_count, type_off, proto_count, proto_off,
     _field_count, _field_off, method_count, method_off,
     class_count, class_off) = struct.unpack_from("<12I", data, 56)

    _check_table(data, string_off, string_count, 4, "string_ids")
    strings = []
    for i in range(string_count):
        (data_off,) = struct.unpack_from("<I", data, string_off + 4 * i)
        if data_off >= len(data):
            raise InvalidIndex("string_data", data_off)
        _, p = _read_uleb128(data, data_off)   # declared utf16 length, unused
        text, _ = _read_mutf8(data, p)
        strings.append(text)

    _check_table(data, type_off, type_count, 4, "type_ids")
    types = []
    for i in range(type_count):
        (idx,) = struct.unpack_from("<I", data, type_off + 4 * i)
        if idx >= len(strings):
            raise InvalidIndex("type_ids", idx)
        types.append(strings[idx])

    _check_table(data, proto_off, proto_count, 12, "proto_ids")
    protos = []
    for i in range(proto_count):
        (shorty_idx,) = struct.unpack_from("<I", data, proto_off + 12 * i)
        if shorty_idx >= len(strings):
            raise InvalidIndex("proto_ids", shorty_idx)
        protos.append(strings[shorty_idx])

    _check_table(data, method_off, method_count, 8, "method_ids")
    method_refs = []
    for i in range(method_count):
        class_idx, proto_idx, name_idx = struct.unpack_from(
            "<HHI", data, method_off + 8 * i)
        if class_idx >= len(types):
            raise InvalidIndex("method_ids.class", class_idx)
        if proto_idx >= len(protos):
            raise InvalidIndex("method_ids.proto", proto_idx)
        if name_idx >= len(strings):
            raise InvalidIndex("method_ids.name", name_idx)
        method_refs.append(
            MethodRef(types[class_idx], strings[name_idx], protos[proto_idx]))

    _check_table(data, class_off, class_count, 32, "class_defs")
    classes = []
    for i in range(class_count):
        (class_idx, _access, _super, _ifaces, _src, _anno, data_off,
         _static) = struct.unpack_from("<8I", data, class_off + 32 * i)
        if class_idx >= len(types):
            raise InvalidIndex("class_defs", class_idx)
        methods = []
        if data_off:
            methods = _read_class_data(data, data_off, len(strings),
                                       len(method_refs))
        classes.append(DefinedClass(types[class_idx], methods))

    return DexModel(strings, types, method_refs, classes)


def _read_class_data(data, off, n_strings, n_refs) -> list[DefinedMethod]:
    p = off
    static_fields, p = _read_uleb128(data, p)
    instance_fields, p = _read_uleb128(data, p)
    direct, p = _read_uleb128(data, p)
    virtual, p = _read_uleb128(data, p)
    # every encoded field/method needs at least two bytes, so counts beyond
    # the file size cannot be honest; reject early instead of looping
    if static_fields + instance_fields + direct + virtual > len(data):
        raise TruncatedDex("class_data counts exceed file size")
    for _ in range(static_fields + instance_fields):
        _, p = _read_uleb128(data, p)
        _, p = _read_uleb128(data, p)
    out = []
    for count in (direct, virtual):
        midx = 0
        for _ in range(count):
            diff, p = _read_uleb128(data, p)
            _access, p = _read_uleb128(data, p)
            code_off, p = _read_uleb128(data, p)
            midx += diff
            if midx >= n_refs:
                raise InvalidIndex("class_data.method", midx)
            if code_off:
                opcodes, strs, calls = _read_code(data, code_off, n_strings,
                                                  n_refs)
                out.append(DefinedMethod(midx, opcodes, strs, calls))
    return out


def _read_code(data, off, n_strings, n_refs):
    if off + 16 > len(data):
        raise TruncatedDex("code item header out of bounds")
    (insns_size,) = struct.unpack_from("<I", data, off + 12)
    insns_off = off + 16
    if insns_off + insns_size * 2 > len(data):
        raise TruncatedDex("instruction stream out of bounds")
    units = struct.unpack_from(f"<{insns_size}H", data, insns_off)

    opcodes: list[int] = []
    strs: list[int] = []
    calls: list[int] = []
    i = 0
    while i < insns_size:
        unit = units[i]
        op = unit & 0xFF
        high = unit >> 8
        if op == NOP and high in (1, 2, 3):
            # switch / fill-array payload: keep one 0x00, skip the table
            if high == 1:
                if i + 2 > insns_size:
                    raise TruncatedDex("payload header out of bounds")
                consumed = units[i + 1] * 2 + 4
            elif high == 2:
                if i + 2 > insns_size:
                    raise TruncatedDex("payload header out of bounds")
                consumed = units[i + 1] * 4 + 2
            else:
                if i + 4 > insns_size:
                    raise TruncatedDex("payload header out of bounds")
                elem_width = units[i + 1]
                n_elems = units[i + 2] | (units[i + 3] << 16)
                consumed = (n_elems * elem_width + 1) // 2 + 4
            if i + consumed > insns_size:
                raise TruncatedDex("payload runs past code end")
            opcodes.append(NOP)
            i += consumed
            continue
        width = OPCODE_WIDTHS[op]
        if width is None:
            raise UnknownOpcode(op)
        if i + width > insns_size:
            raise TruncatedDex("instruction runs past code end")
        opcodes.append(op)
        if op == CONST_STRING:
            sidx = units[i + 1]
            if sidx >= n_strings:
                raise InvalidIndex("const-string", sidx)
            strs.append(sidx)
        elif op == CONST_STRING_JUMBO:
            sidx = units[i + 1] | (units[i + 2] << 16)
            if sidx >= n_strings:
                raise InvalidIndex("const-string/jumbo", sidx)
            strs.append(sidx)
        elif op in INVOKE_OPS:
            midx = units[i + 1]
            if midx >= n_refs:
                raise InvalidIndex("invoke", midx)
            calls.append(midx)
        i += width
    return opcodes, strs, calls


# ---------------------------------------------------------------------------
# writing


def write_dex(model: DexModel) -> bytes:
    """Serialize a DexModel into minimal valid DEX bytes.

    The model must be closed over its own string pool: type names, method
    names, and prototype shorties must all appear in string_pool, and each
    class must list its methods in strictly ascending method_idx order
    (the class_data encoding stores index differences). parse_dex on the
    output reproduces the model exactly.
    """
    pool = model.string_pool
    first_pool_idx: dict[str, int] = {}
    for i, s in enumerate(pool):
        first_pool_idx.setdefault(s, i)
    first_type_idx: dict[str, int] = {}
    for i, t in enumerate(model.type_names):
        first_type_idx.setdefault(t, i)

    def string_id(text, role):
        try:
            return first_pool_idx[text]
        except KeyError:
            raise UnserializableModel(f"{role} {text!r} not in string pool") from None

    def type_id(name, role):
        try:
            return first_type_idx[name]
        except KeyError:
            raise UnserializableModel(f"{role} {name!r} not in type table") from None

    shorty_order: list[str] = []
    proto_idx: dict[str, int] = {}
    for ref in model.method_refs:
        if ref.prototype_shorty not in proto_idx:
            proto_idx[ref.prototype_shorty] = len(shorty_order)
            shorty_order.append(ref.prototype_shorty)

    n_s, n_t, n_p, n_m, n_c = (len(pool), len(model.type_names),
                               len(shorty_order), len(model.method_refs),
                               len(model.defined_classes))
    fixed_end = HEADER_SIZE + 4 * n_s + 4 * n_t + 12 * n_p + 8 * n_m + 32 * n_c

    data = bytearray()

    string_data_offs = []
    for s in pool:
        string_data_offs.append(fixed_end + len(data))
        encoded = _encode_mutf8(s)
        utf16_len = len(s.encode("utf-16-le", "surrogatepass")) // 2
        data += _encode_uleb128(utf16_len) + encoded + b"\x00"

    code_offs: dict[tuple[int, int], int] = {}
    for ci, cls in enumerate(model.defined_classes):
        prev = -1
        for mi, m in enumerate(cls.methods):
            if not 0 <= m.method_idx < n_m:
                raise UnserializableModel(
                    f"method index {m.method_idx} outside method_ids")
            if m.method_idx <= prev:
                raise UnserializableModel(
                    "class methods must be strictly ascending by method_idx")
            prev = m.method_idx
            units = _assemble_units(m, n_s, n_m)
            while (fixed_end + len(data)) % 4:
                data += b"\x00"
            code_offs[(ci, mi)] = fixed_end + len(data)
            data += struct.pack("<HHHHII", 8, 0, 4, 0, 0, len(units))
            data += struct.pack(f"<{len(units)}H", *units)

    class_data_offs = []
    for ci, cls in enumerate(model.defined_classes):
        if not cls.methods:
            class_data_offs.append(0)
            continue
        blob = (_encode_uleb128(0) + _encode_uleb128(0)
                + _encode_uleb128(len(cls.methods)) + _encode_uleb128(0))
        prev = 0
        for mi, m in enumerate(cls.methods):
            diff = m.method_idx - prev if mi else m.method_idx
            prev = m.method_idx
            blob += (_encode_uleb128(diff) + _encode_uleb128(ACC_PUBLIC)
                     + _encode_uleb128(code_offs[(ci, mi)]))
        class_data_offs.append(fixed_end + len(data))
        data += blob

    string_ids = b"".join(struct.pack("<I", o) for o in string_data_offs)
    type_ids = b"".join(
        struct.pack("<I", string_id(t, "type name")) for t in model.type_names)
    proto_ids = b"".join(
        struct.pack("<III", string_id(s, "shorty"), 0, 0) for s in shorty_order)

    method_ids = bytearray()
    for ref in model.method_refs:
        cid = type_id(ref.defining_class, "method class")
        if cid > 0xFFFF:
            raise ModelTooLarge("type table exceeds the 16-bit class index")
        pid = proto_idx[ref.prototype_shorty]
        if pid > 0xFFFF:
            raise ModelTooLarge("proto table exceeds the 16-bit proto index")
        method_ids += struct.pack(
            "<HHI", cid, pid, string_id(ref.method_name, "method name"))

    class_defs = bytearray()
    for ci, cls in enumerate(model.defined_classes):
        class_defs += struct.pack(
            "<8I", type_id(cls.name, "class name"), ACC_PUBLIC, NO_INDEX, 0,
            NO_INDEX, 0, class_data_offs[ci], 0)

    total = fixed_end + len(data)
    out = bytearray()
    out += b"dex\n035\x00"
    out += b"\x00" * 4      # adler32, patched below
    out += b"\x00" * 20     # sha1, patched below
    out += struct.pack("<I", total)
    out += struct.pack("<IIII", HEADER_SIZE, ENDIAN_CONSTANT, 0, 0)
    out += struct.pack("<I", 0)                       # map_off
    out += struct.pack(
        "<12I",
        n_s, HEADER_SIZE if n_s else 0,
        n_t, (HEADER_SIZE + 4 * n_s) if n_t else 0,
        n_p, (HEADER_SIZE + 4 * n_s + 4 * n_t) if n_p else 0,
        0, 0,                                         # field_ids
        n_m, (HEADER_SIZE + 4 * n_s + 4 * n_t + 12 * n_p) if n_m else 0,
        n_c, (HEADER_SIZE + 4 * n_s + 4 * n_t + 12 * n_p + 8 * n_m) if n_c else 0,
    )
    out += struct.pack("<II", len(data), fixed_end)   # data_size, data_off
    assert len(out) == HEADER_SIZE
    out += string_ids + type_ids + proto_ids + method_ids + class_defs + data
    assert len(out) == total

    out[12:32] = hashlib.sha1(out[32:]).digest()
    out[8:12] = struct.pack("<I", zlib.adler32(bytes(out[12:])) & 0xFFFFFFFF)
    return bytes(out)


def _assemble_units(m: DefinedMethod, n_strings: int, n_refs: int) -> list[int]:
    units: list[int] = []
    si = ci = 0
    for op in m.opcodes:
        if not isinstance(op, int) or not 0 <= op <= 255 or OPCODE_WIDTHS[op] is None:
            raise UnserializableModel(f"opcode {op!r} is not a defined instruction")
        width = OPCODE_WIDTHS[op]
        chunk = [op] + [0] * (width - 1)
        if op == CONST_STRING:
            if si >= len(m.const_string_uses):
                raise UnserializableModel("missing const-string operand")
            idx = m.const_string_uses[si]
            si += 1
            if not 0 <= idx < n_strings:
                raise UnserializableModel(f"const-string index {idx} out of range")
            if idx > 0xFFFF:
                raise ModelTooLarge("string pool needs the jumbo form")
            chunk[1] = idx
        elif op == CONST_STRING_JUMBO:
            if si >= len(m.const_string_uses):
                raise UnserializableModel("missing const-string operand")
            idx = m.const_string_uses[si]
            si += 1
            if not 0 <= idx < n_strings:
                raise UnserializableModel(f"const-string index {idx} out of range")
            chunk[1] = idx & 0xFFFF
            chunk[2] = idx >> 16
        elif op in INVOKE_OPS:
            if ci >= len(m.invoke_uses):
                raise UnserializableModel("missing invoke operand")
            idx = m.invoke_uses[ci]
            ci += 1
            if not 0 <= idx < n_refs:
                raise UnserializableModel(f"invoke index {idx} out of range")
            if idx > 0xFFFF:
                raise ModelTooLarge("method table exceeds the 16-bit invoke index")
            chunk[1] = idx
        units += chunk
    if si != len(m.const_string_uses) or ci != len(m.invoke_uses):
        raise UnserializableModel("operand lists do not match the opcode sequence")
    return units
