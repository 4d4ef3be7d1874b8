use std::env;
use std::path::PathBuf;

/// Regenerates include/spm.h from the public extern "C" surface. The header
/// is committed so downstream C users don't need cbindgen installed; this
/// build step keeps it in sync.
fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("manifest dir"));
    let header = crate_dir.join("include").join("spm.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        Err(e) => {
            // Keep the committed header authoritative if generation breaks
            // (e.g. offline tooling changes); fail loudly only when no
            // header exists at all.
            if header.exists() {
                println!("cargo:warning=cbindgen failed, using committed header: {e}");
            } else {
                panic!("cbindgen failed and no committed header exists: {e}");
            }
        }
    }
}
