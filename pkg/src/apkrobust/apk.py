"""APK container decoding: ZIP catalog, manifest, DEX files, certificate.

open_apk is the single entry point. It is total over arbitrary bytes: the
result is either a populated ApkModel or one of the declared errors. The
stdlib zipfile module raises a wide assortment of exceptions on hostile
input, so the calls into it are wrapped and translated.
"""

from __future__ import annotations

import hashlib
import io
import re
import zipfile
from dataclasses import dataclass, field
from datetime import datetime

from .axml import ManifestModel, parse_manifest
from .dex import DexModel, parse_dex
from .errors import (
    EntryDecompressionFailure,
    MissingDex,
    MissingManifest,
    NotAZip,
    ToolkitError,
)

MANIFEST_PATH = "AndroidManifest.xml"

_DEX_NAME = re.compile(r"^classes([0-9]*)\.dex$")
_CERT_SUFFIXES = (".rsa", ".dsa", ".ec")

# first-bytes signature table; longest match wins
_MAGIC_TABLE = (
    (b"dex\n", "dex"),
    (b"PK\x03\x04", "zip"),
    (b"PK\x05\x06", "zip"),
    (b"PK\x07\x08", "zip"),
    (b"\x89PNG\r\n\x1a\n", "png"),
    (b"\xff\xd8\xff", "jpeg"),
    (b"GIF87a", "gif"),
    (b"GIF89a", "gif"),
    (b"<?xml", "xml_plain"),
    (b"\xef\xbb\xbf<?xml", "xml_plain"),
    (b"\x03\x00\x08\x00", "axml"),
    (b"\x02\x00\x0c\x00", "arsc"),
    (b"\x7fELF", "elf"),
    (b"%PDF", "pdf"),
    (b"OggS", "ogg"),
    (b"\x00\x01\x00\x00", "ttf"),
    (b"OTTO", "ttf"),
)

TEXT_MAGIC_TYPES = frozenset({"xml_plain", "unknown"})


def sniff_magic(head: bytes) -> str:
    """Map the first bytes of an entry to a content tag.

    Unknown content is a value ("unknown"), not an error; short inputs are
    allowed and simply match fewer signatures.
    """
    for signature, tag in _MAGIC_TABLE:
        if head[:len(signature)] == signature:
            return tag
    return "unknown"


def entry_extension(path: str) -> str:
    """Lowercased suffix after the last dot, or the whole name when dotless."""
    name = path.rsplit("/", 1)[-1]
    if "." in name[1:]:
        return name.rsplit(".", 1)[1].lower()
    return name.lower()


@dataclass(frozen=True)
class ApkEntry:
    path: str
    uncompressed_size: int
    extension: str
    magic_type: str
    content_hash: bytes  # sha-256 of the uncompressed bytes


@dataclass(frozen=True)
class CertSummary:
    subject: str
    issuer: str
    not_before: datetime
    not_after: datetime
    algorithm: str


@dataclass
class ApkModel:
    entries: list[ApkEntry]
    manifest: ManifestModel
    dex_models: list[DexModel]
    cert: CertSummary | None
    apk_size: int
    # raw bytes of res/ and assets/ entries with a text-like magic type,
    # kept so string extraction can scan them without re-reading the archive
    text_blobs: dict[str, bytes] = field(default_factory=dict)

    def defined_class_names(self) -> set[str]:
        names: set[str] = set()
        for dex in self.dex_models:
            names |= dex.defined_class_names()
        return names


def _read_entry(zf: zipfile.ZipFile, path: str) -> bytes:
    try:
        return zf.read(path)
    except ToolkitError:
        raise
    except Exception as exc:  # zipfile's failure surface is unbounded
        raise EntryDecompressionFailure(path, str(exc)) from None


def open_apk(data: bytes) -> ApkModel:
    """Decode raw package bytes into a fully populated ApkModel.

    Raises NotAZip, MissingManifest, MissingDex, EntryDecompressionFailure,
    or any declared manifest/DEX parse error.
    """
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
        infos = zf.infolist()
    except ToolkitError:
        raise
    except Exception as exc:
        raise NotAZip(str(exc)) from None

    entries: list[ApkEntry] = []
    manifest_bytes = None
    dex_bytes: list[tuple[int, str, bytes]] = []
    cert_blob = None
    text_blobs: dict[str, bytes] = {}
    seen: set[str] = set()

    with zf:
        for info in infos:
            path = info.filename
            if path.endswith("/"):
                continue
            if path in seen:
                raise NotAZip(f"duplicate entry path {path!r}")
            seen.add(path)
            blob = _read_entry(zf, path)
            magic = sniff_magic(blob[:16])
            entries.append(ApkEntry(
                path=path,
                uncompressed_size=len(blob),
                extension=entry_extension(path),
                magic_type=magic,
                content_hash=hashlib.sha256(blob).digest(),
            ))
            if path == MANIFEST_PATH:
                manifest_bytes = blob
            m = _DEX_NAME.match(path)
            if m:
                dex_bytes.append((int(m.group(1) or 0), path, blob))
            lower = path.lower()
            if (lower.startswith("meta-inf/") and lower.endswith(_CERT_SUFFIXES)
                    and cert_blob is None):
                cert_blob = blob
            if ((path.startswith("res/") or path.startswith("assets/"))
                    and magic in TEXT_MAGIC_TYPES):
                text_blobs[path] = blob

    if manifest_bytes is None:
        raise MissingManifest("archive has no AndroidManifest.xml")
    if not dex_bytes:
        raise MissingDex("archive has no classes.dex")

    manifest = parse_manifest(manifest_bytes)
    dex_models = [parse_dex(blob) for _, _, blob in sorted(dex_bytes)]
    cert = _summarize_cert(cert_blob) if cert_blob is not None else None

    return ApkModel(
        entries=entries,
        manifest=manifest,
        dex_models=dex_models,
        cert=cert,
        apk_size=len(data),
        text_blobs=text_blobs,
    )


def _summarize_cert(blob: bytes) -> CertSummary | None:
    """Extract subject/issuer/validity/algorithm, or None when unreadable.

    Full X.509 validation is out of scope; the summary only feeds features.
    """
    from cryptography import x509
    from cryptography.hazmat.primitives.serialization import pkcs7

    cert = None
    try:
        cert = x509.load_der_x509_certificate(blob)
    except Exception:
        try:
            certs = pkcs7.load_der_pkcs7_certificates(blob)
            cert = certs[0] if certs else None
        except Exception:
            cert = None
    if cert is None:
        return None
    try:
        algorithm = cert.signature_algorithm_oid._name
        if algorithm == "unknownOID":
            algorithm = cert.signature_algorithm_oid.dotted_string
    except Exception:
        algorithm = cert.signature_algorithm_oid.dotted_string
    return CertSummary(
        subject=cert.subject.rfc4514_string(),
        issuer=cert.issuer.rfc4514_string(),
        not_before=cert.not_valid_before_utc,
        not_after=cert.not_valid_after_utc,
        algorithm=algorithm,
    )
