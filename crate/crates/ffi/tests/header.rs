//! The generated header must compile as C and as C++.

use std::path::Path;
use std::process::Command;

fn compiles(compiler: &str, lang: &str) {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/priorgrad.h");
    assert!(header.exists(), "header not generated");
    let status = match Command::new(compiler)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
        .arg(&header)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("{compiler} not available, skipping");
            return;
        }
    };
    assert!(status.success(), "{compiler} rejected the header");
}

#[test]
fn header_is_valid_c() {
    compiles("cc", "c");
}

#[test]
fn header_is_valid_cpp() {
    compiles("c++", "c++");
}
