"""
Opening a package and reading its tables
========================================

Builds a tiny app in memory, serializes it into a real archive, and walks
everything the parser recovers: entry catalog, manifest, dex string/method
tables, and bytecode.
"""

from apkrobust import DexBuilder, build_manifest, open_apk, serialize_min_apk

# Assemble one activity that logs a greeting and shells out.
builder = DexBuilder()
builder.add_class("Ldemo/Main;", [
    ("onCreate", [
        ("str", "hello from the demo"),
        ("call", "Landroid/util/Log;", "i", "ILL"),
        ("call", "Ljava/lang/Runtime;", "exec", "LL"),
        0x0E,  # return-void
    ]),
])

manifest = build_manifest(
    package="demo.app",
    activities=("demo.app.Main",),
    used_permissions=("android.permission.INTERNET",),
    intent_filters=(("demo.app.Main",
                     ("android.intent.action.MAIN",),
                     ("android.intent.category.LAUNCHER",)),),
)

blob = serialize_min_apk(manifest, [builder.build()],
                         {"assets/greeting.txt": b"hello file\n"})
print(f"serialized package: {len(blob)} bytes")

# Parse it back. open_apk validates the container, the manifest chunk
# layout, and every dex checksum before returning a model.
model = open_apk(blob)

print("\nentries:")
for entry in model.entries:
    print(f"  {entry.path:24s} {entry.uncompressed_size:6d} bytes  "
          f"{entry.extension}/{entry.magic_type}")

print(f"\npackage: {model.manifest.package_name}")
print(f"used permissions: {sorted(model.manifest.used_permissions)}")
print(f"components: {model.manifest.components}")

dex = model.dex_models[0]
print(f"\nstring pool ({len(dex.string_pool)} entries):")
for s in dex.string_pool[:8]:
    print(f"  {s!r}")

print("\nmethod references:")
for ref in dex.method_refs:
    print(f"  {ref.defining_class}->{ref.method_name} [{ref.prototype_shorty}]")

for cls in dex.defined_classes:
    for method in cls.methods:
        name = dex.method_refs[method.method_idx].method_name
        ops = " ".join(f"{op:02x}" for op in method.opcodes)
        print(f"\n{cls.name} {name}: {ops}")
