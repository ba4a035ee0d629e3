"""AndroidManifest readers and the plain-XML writer used by fixtures.

Two input forms are accepted: the binary chunk format that ships inside real
packages, and plain XML text so fixtures can be authored (and emitted) by
hand. Both feed the same element-event builder, so they populate the model
identically. The writer only emits the plain form.
"""

from __future__ import annotations

import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import MalformedAxml, MalformedXml

ANDROID_NS = "http://schemas.android.com/apk/res/android"

RES_XML_TYPE = 0x0003
RES_STRING_POOL_TYPE = 0x0001
RES_XML_START_NAMESPACE = 0x0100
RES_XML_END_NAMESPACE = 0x0101
RES_XML_START_ELEMENT = 0x0102
RES_XML_END_ELEMENT = 0x0103
RES_XML_CDATA = 0x0104
RES_XML_RESOURCE_MAP = 0x0180

UTF8_FLAG = 1 << 8
TYPE_STRING = 0x03

COMPONENT_KINDS = ("activity", "service", "receiver", "provider")

# manifest tag -> model component kind
_KIND_BY_TAG = {
    "activity": "activity",
    "activity-alias": "activity",
    "service": "service",
    "receiver": "receiver",
    "provider": "provider",
}


def feature_is_hardware(name: str) -> bool:
    """Classify a uses-feature name; the android.hardware. prefix marks it."""
    return name.startswith("android.hardware.")


@dataclass
class ManifestModel:
    package_name: str = ""
    used_permissions: set[str] = field(default_factory=set)
    declared_permissions: set[str] = field(default_factory=set)
    components: list[tuple[str, str]] = field(default_factory=list)
    intent_filters: list[tuple[str, frozenset[str], frozenset[str]]] = \
        field(default_factory=list)
    uses_features: set[tuple[str, bool]] = field(default_factory=set)


class _ManifestBuilder:
    """Collects manifest facts from start/end element events."""

    def __init__(self):
        self.model = ManifestModel()
        self._component_stack: list[str] = []
        self._filter: tuple[set[str], set[str]] | None = None

    def start(self, tag: str, attrs: dict[str, str]):
        name = attrs.get("name", "")
        if tag == "manifest":
            self.model.package_name = attrs.get("package", "")
        elif tag == "uses-permission":
            if name:
                self.model.used_permissions.add(name)
        elif tag == "permission":
            if name:
                self.model.declared_permissions.add(name)
        elif tag == "uses-feature":
            if name:
                self.model.uses_features.add((name, feature_is_hardware(name)))
        elif tag in _KIND_BY_TAG:
            if name:
                self.model.components.append((_KIND_BY_TAG[tag], name))
                self._component_stack.append(name)
            else:
                self._component_stack.append("")
        elif tag == "intent-filter":
            self._filter = (set(), set())
        elif tag == "action":
            if self._filter is not None and name:
                self._filter[0].add(name)
        elif tag == "category":
            if self._filter is not None and name:
                self._filter[1].add(name)

    def end(self, tag: str):
        if tag in _KIND_BY_TAG and self._component_stack:
            self._component_stack.pop()
        elif tag == "intent-filter" and self._filter is not None:
            owner = self._component_stack[-1] if self._component_stack else ""
            if owner:
                actions, categories = self._filter
                self.model.intent_filters.append(
                    (owner, frozenset(actions), frozenset(categories)))
            self._filter = None


def parse_manifest(data: bytes) -> ManifestModel:
    """Decode manifest bytes, binary or plain, into a ManifestModel."""
    if data[:4] == b"\x03\x00\x08\x00":
        return _parse_axml(data)
    return _parse_plain(data)


# ---------------------------------------------------------------------------
# plain XML


def _attr(elem, key):
    value = elem.attrib.get("{%s}%s" % (ANDROID_NS, key))
    if value is None:
        value = elem.attrib.get(key)
    return value


def _parse_plain(data: bytes) -> ManifestModel:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from None
    except ValueError as exc:
        raise MalformedXml(str(exc)) from None
    tag = root.tag.rsplit("}", 1)[-1]
    if tag != "manifest":
        raise MalformedXml(f"root element is <{tag}>, expected <manifest>")

    builder = _ManifestBuilder()

    def walk(elem):
        etag = elem.tag.rsplit("}", 1)[-1]
        attrs = {"name": _attr(elem, "name") or ""}
        if etag == "manifest":
            attrs["package"] = elem.attrib.get("package", "")
        builder.start(etag, attrs)
        for child in elem:
            walk(child)
        builder.end(etag)

    walk(root)
    return builder.model


# ---------------------------------------------------------------------------
# binary XML


def _need(data, off, n, what):
    if off + n > len(data):
        raise MalformedAxml(f"{what} out of bounds at offset {off}")


def _u16(data, off):
    return struct.unpack_from("<H", data, off)[0]


def _u32(data, off):
    return struct.unpack_from("<I", data, off)[0]


class _StringPool:
    def __init__(self, data: bytes, off: int):
        _need(data, off, 28, "string pool header")
        header_size = _u16(data, off + 2)
        chunk_size = _u32(data, off + 4)
        count = _u32(data, off + 8)
        flags = _u32(data, off + 16)
        strings_start = _u32(data, off + 20)
        if header_size < 28 or off + chunk_size > len(data):
            raise MalformedAxml("string pool chunk truncated")
        _need(data, off + header_size, 4 * count, "string offset table")
        self._utf8 = bool(flags & UTF8_FLAG)
        self._base = off + strings_start
        self._end = off + chunk_size
        if self._base > self._end:
            raise MalformedAxml("string data starts past the chunk end")
        self._offsets = [
            _u32(data, off + header_size + 4 * i) for i in range(count)
        ]
        self._data = data
        self.size = off + chunk_size

    def __len__(self):
        return len(self._offsets)

    def __getitem__(self, idx: int) -> str:
        if not 0 <= idx < len(self._offsets):
            raise MalformedAxml(f"string index {idx} outside pool of "
                                f"{len(self._offsets)}")
        p = self._base + self._offsets[idx]
        if self._utf8:
            return self._read_utf8(p)
        return self._read_utf16(p)

    def _varlen8(self, p):
        _need(self._data, p, 1, "utf8 length")
        v = self._data[p]
        if v & 0x80:
            _need(self._data, p + 1, 1, "utf8 length")
            return ((v & 0x7F) << 8) | self._data[p + 1], p + 2
        return v, p + 1

    def _read_utf8(self, p):
        _, p = self._varlen8(p)          # length in characters, unused
        nbytes, p = self._varlen8(p)
        _need(self._data, p, nbytes, "utf8 string body")
        try:
            return self._data[p:p + nbytes].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedAxml(f"bad utf8 string: {exc}") from None

    def _read_utf16(self, p):
        _need(self._data, p, 2, "utf16 length")
        n = _u16(self._data, p)
        p += 2
        if n & 0x8000:
            _need(self._data, p, 2, "utf16 length")
            n = ((n & 0x7FFF) << 16) | _u16(self._data, p)
            p += 2
        _need(self._data, p, 2 * n, "utf16 string body")
        return self._data[p:p + 2 * n].decode("utf-16-le", "surrogatepass")


def _parse_axml(data: bytes) -> ManifestModel:
    _need(data, 0, 8, "file header")
    if _u16(data, 0) != RES_XML_TYPE:
        raise MalformedAxml("not a binary XML chunk")
    file_size = _u32(data, 4)
    end = min(file_size, len(data))

    off = 8
    _need(data, off, 8, "first chunk header")
    if _u16(data, off) != RES_STRING_POOL_TYPE:
        raise MalformedAxml("string pool chunk must come first")
    pool = _StringPool(data, off)
    off = pool.size

    builder = _ManifestBuilder()
    while off + 8 <= end:
        ctype = _u16(data, off)
        header_size = _u16(data, off + 2)
        chunk_size = _u32(data, off + 4)
        if chunk_size < 8 or off + chunk_size > end:
            raise MalformedAxml(f"chunk at {off} overruns the file")
        if ctype == RES_XML_START_ELEMENT:
            _need(data, off + 16, 20, "element header")
            name_idx = _u32(data, off + 20)
            attr_start = _u16(data, off + 24)
            attr_count = _u16(data, off + 28)
            attrs_off = off + 16 + attr_start
            attrs = {}
            for i in range(attr_count):
                p = attrs_off + 20 * i
                _need(data, p, 20, "attribute")
                attr_name = pool[_u32(data, p + 4)]
                raw_idx = _u32(data, p + 8)
                data_type = data[p + 15]
                value_data = _u32(data, p + 16)
                if data_type == TYPE_STRING:
                    attrs[attr_name] = pool[value_data]
                elif raw_idx != 0xFFFFFFFF:
                    attrs[attr_name] = pool[raw_idx]
                else:
                    attrs[attr_name] = str(value_data)
            builder.start(pool[name_idx], attrs)
        elif ctype == RES_XML_END_ELEMENT:
            _need(data, off + 16, 8, "element header")
            name_idx = _u32(data, off + 20)
            builder.end(pool[name_idx])
        # namespace, cdata, and resource-map chunks carry nothing we keep
        off += chunk_size
    return builder.model


# ---------------------------------------------------------------------------
# writer


def manifest_to_xml(model: ManifestModel) -> bytes:
    """Emit the plain-XML fixture form. parse_manifest round-trips it."""
    root = ET.Element("manifest")
    root.set("xmlns:android", ANDROID_NS)
    if model.package_name:
        root.set("package", model.package_name)

    def sub(parent, tag, name=None):
        e = ET.SubElement(parent, tag)
        if name is not None:
            e.set("android:name", name)
        return e

    for perm in sorted(model.used_permissions):
        sub(root, "uses-permission", perm)
    for perm in sorted(model.declared_permissions):
        sub(root, "permission", perm)
    for feat_name, _hw in sorted(model.uses_features):
        sub(root, "uses-feature", feat_name)

    app = ET.SubElement(root, "application")
    filters_by_owner: dict[str, list] = {}
    for owner, actions, categories in model.intent_filters:
        filters_by_owner.setdefault(owner, []).append((actions, categories))
    tag_by_kind = {"activity": "activity", "service": "service",
                   "receiver": "receiver", "provider": "provider"}
    for kind, name in model.components:
        elem = sub(app, tag_by_kind[kind], name)
        for actions, categories in filters_by_owner.get(name, []):
            filt = ET.SubElement(elem, "intent-filter")
            for action in sorted(actions):
                sub(filt, "action", action)
            for category in sorted(categories):
                sub(filt, "category", category)

    return ET.tostring(root, encoding="utf-8", xml_declaration=True)
