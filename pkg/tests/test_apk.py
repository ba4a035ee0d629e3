"""Package container decoding: totality over hostile bytes, entry catalog,
certificate summary."""

import io
import zipfile

import pytest

from apkrobust import (
    MissingDex,
    MissingManifest,
    NotAZip,
    entry_extension,
    open_apk,
    sniff_magic,
)
from conftest import build_demo_package, make_ec_cert


def test_catalog_and_models(demo_apk, demo_apk_bytes):
    paths = [e.path for e in demo_apk.entries]
    assert paths == ["AndroidManifest.xml", "classes.dex",
                     "assets/config.txt", "META-INF/CERT.RSA"]
    assert demo_apk.apk_size == len(demo_apk_bytes)
    assert demo_apk.manifest.package_name == "com.demo.app"
    assert len(demo_apk.dex_models) == 1
    assert demo_apk.defined_class_names() == {"Lcom/demo/app/Main;",
                                              "Lcom/demo/app/Util;"}


def test_entry_classification(demo_apk):
    by_path = {e.path: e for e in demo_apk.entries}
    dex = by_path["classes.dex"]
    assert (dex.extension, dex.magic_type) == ("dex", "dex")
    man = by_path["AndroidManifest.xml"]
    assert (man.extension, man.magic_type) == ("xml", "xml_plain")
    txt = by_path["assets/config.txt"]
    assert (txt.extension, txt.magic_type) == ("txt", "unknown")
    assert dex.uncompressed_size > 0
    assert len(dex.content_hash) == 32


def test_text_blobs_only_cover_resources(demo_apk):
    # the manifest is text too, but lives outside res/ and assets/
    assert set(demo_apk.text_blobs) == {"assets/config.txt"}


def test_cert_summary(demo_apk):
    cert = demo_apk.cert
    assert cert is not None
    assert cert.subject == cert.issuer == "CN=demo"
    assert (cert.not_after - cert.not_before).days == 730
    assert "ecdsa" in cert.algorithm.lower()


def test_unreadable_cert_becomes_none():
    blob = build_demo_package(cert_der=b"\x30\x03\x02\x01\x01")
    assert open_apk(blob).cert is None


def test_not_a_zip():
    with pytest.raises(NotAZip):
        open_apk(b"")
    with pytest.raises(NotAZip):
        open_apk(b"this is not an archive")


@pytest.mark.filterwarnings("ignore:Duplicate name")
def test_duplicate_entry_rejected():
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("a.txt", b"one")
        zf.writestr("a.txt", b"two")
    with pytest.raises(NotAZip):
        open_apk(buf.getvalue())


def test_missing_manifest():
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("classes.dex", b"dex\n035\x00")
    with pytest.raises(MissingManifest):
        open_apk(buf.getvalue())


def test_missing_dex():
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("AndroidManifest.xml", b'<manifest package="x"/>')
    with pytest.raises(MissingDex):
        open_apk(buf.getvalue())


def test_multidex_ordering(demo_apk_bytes):
    # clone classes.dex under higher slots out of order; the model list
    # must come back sorted by slot number
    src = zipfile.ZipFile(io.BytesIO(demo_apk_bytes))
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        dex = src.read("classes.dex")
        zf.writestr("classes3.dex", dex)
        zf.writestr("AndroidManifest.xml", src.read("AndroidManifest.xml"))
        zf.writestr("classes.dex", dex)
        zf.writestr("classes2.dex", dex)
    model = open_apk(buf.getvalue())
    assert len(model.dex_models) == 3


def test_dirs_are_skipped(demo_apk_bytes):
    src = zipfile.ZipFile(io.BytesIO(demo_apk_bytes))
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("assets/", b"")
        for name in src.namelist():
            zf.writestr(name, src.read(name))
    model = open_apk(buf.getvalue())
    assert all(not e.path.endswith("/") for e in model.entries)


def test_sniff_magic_table():
    assert sniff_magic(b"dex\n035\x00") == "dex"
    assert sniff_magic(b"PK\x03\x04rest") == "zip"
    assert sniff_magic(b"\x89PNG\r\n\x1a\nxx") == "png"
    assert sniff_magic(b"<?xml version") == "xml_plain"
    assert sniff_magic(b"\x03\x00\x08\x00") == "axml"
    assert sniff_magic(b"\x7fELF") == "elf"
    assert sniff_magic(b"") == "unknown"
    assert sniff_magic(b"\x00") == "unknown"


def test_entry_extension_rules():
    assert entry_extension("a/b/c.PNG") == "png"
    assert entry_extension("classes.dex") == "dex"
    assert entry_extension("README") == "readme"
    assert entry_extension(".hidden") == ".hidden"
    assert entry_extension("a/archive.tar.gz") == "gz"
