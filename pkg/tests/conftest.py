"""Shared fixtures: a hand-built package with known contents, and a small
generated corpus reused by the slower integration tests."""

import datetime

import pytest

from apkrobust import (
    DexBuilder,
    build_manifest,
    generate_corpus,
    open_apk,
    serialize_min_apk,
)

RETURN_VOID = 0x0E
CONST4 = 0x12


def make_ec_cert(days_valid=730, cn="demo"):
    """Self-signed EC certificate, DER bytes. Generated fresh per call, so
    only field relationships (subject == issuer etc.) are stable."""
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import NameOID

    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])
    now = datetime.datetime(2024, 1, 1, tzinfo=datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(1)
        .not_valid_before(now)
        .not_valid_after(now + datetime.timedelta(days=days_valid))
        .sign(key, hashes.SHA256())
    )
    from cryptography.hazmat.primitives.serialization import Encoding

    return cert.public_bytes(Encoding.DER)


def build_demo_package(cert_der=None):
    """One activity calling a logger, a system shell, and an internal helper
    that resolves a class reflectively. Every feature the extractors should
    find is written down next to the code that plants it."""
    builder = DexBuilder()
    builder.add_class("Lcom/demo/app/Main;", [
        ("onCreate", [
            ("str", "hello world"),
            ("call", "Landroid/util/Log;", "i", "ILL"),
            CONST4,
            ("call", "Ljava/lang/Runtime;", "exec", "LL"),
            ("call", "Lcom/demo/app/Util;", "helper", "V"),
            RETURN_VOID,
        ]),
    ])
    builder.add_class("Lcom/demo/app/Util;", [
        ("helper", [
            ("str", "com.demo.Plugin"),
            ("call", "Ljava/lang/Class;", "forName", "LL"),
            RETURN_VOID,
        ]),
    ])
    manifest = build_manifest(
        package="com.demo.app",
        activities=["com.demo.app.Main", "com.demo.app.Second"],
        services=["com.demo.app.Sync"],
        receivers=["com.demo.app.Boot"],
        used_permissions=[
            "android.permission.INTERNET",
            "android.permission.SEND_SMS",
            "com.demo.app.CUSTOM",      # neither official nor declared
            "com.demo.app.SHARED",      # declared below
        ],
        declared_permissions=["com.demo.app.SHARED", "com.demo.app.LOCAL"],
        intent_filters=[
            ("com.demo.app.Main",
             {"android.intent.action.MAIN"},
             {"android.intent.category.LAUNCHER"}),
            ("com.demo.app.Boot",
             {"android.intent.action.BOOT_COMPLETED"},
             set()),
        ],
        uses_features=["android.hardware.camera", "android.software.midi"],
    )
    extras = {"assets/config.txt": b"endpoint=https://x.example/api\n\x00ab"}
    return serialize_min_apk(manifest, [builder.build()],
                             extra_entries=extras, cert_der=cert_der)


@pytest.fixture(scope="session")
def demo_apk_bytes():
    return build_demo_package(cert_der=make_ec_cert())


@pytest.fixture(scope="session")
def demo_apk(demo_apk_bytes):
    return open_apk(demo_apk_bytes)


@pytest.fixture(scope="session")
def small_corpus():
    """20 synthetic apps, alternating goodware/malware."""
    return generate_corpus(20, seed=7)
