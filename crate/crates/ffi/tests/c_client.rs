//! Compiles a C client against the generated header and the static
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

const CLIENT: &str = r#"
#include <stdio.h>
#include <string.h>
#include "nfisac.h"

int main(void) {
    NfisacConfig *cfg = NULL;
    if (nfisac_config_parse("[array]\nelements = oops\n", &cfg) != NFISAC_STATUS_CONFIG) return 1;
    if (strstr(nfisac_last_error_message(), "line 2") == NULL) return 2;

    const char *text = "[array]\nelements = 4\n[scene]\nusers = 10@112.5\ntargets = 5@90\nsymbols = 2\n";
    if (nfisac_config_parse(text, &cfg) != NFISAC_STATUS_OK) return 3;
    NfisacDesign *d = NULL;
    if (nfisac_design_compute(cfg, NFISAC_PRECODER_SLP, 0.5, &d) != NFISAC_STATUS_OK) return 4;
    size_t n = 0, s = 0;
    if (nfisac_design_shape(d, &n, &s) != NFISAC_STATUS_OK || n != 4 || s != 2) return 5;
    double re[8], im[8], sinr = 0.0;
    if (nfisac_design_symbols(d, re, im, 8) != NFISAC_STATUS_OK) return 6;
    if (nfisac_design_sinr(d, &sinr) != NFISAC_STATUS_OK || !(sinr > 0.0)) return 7;
    char *json = NULL;
    if (nfisac_design_metrics_json(d, &json) != NFISAC_STATUS_OK || json[0] != '{') return 8;
    printf("sinr %.6g\n", sinr);
    nfisac_string_free(json);
    nfisac_design_free(d);
    nfisac_config_free(cfg);
    return 0;
}
"#;

fn static_library() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    profile_dir.join("libnfisac_ffi.a")
}

#[test]
fn c_client_links_and_runs() {
    let lib = static_library();
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(&src, CLIENT).unwrap();
    let bin = dir.path().join("client");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .expect("a C compiler on PATH");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&bin).output().unwrap();
    assert!(
        run.status.success(),
        "client exited with {:?}",
        run.status.code()
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("sinr "));
}

#[test]
fn header_compiles_as_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.cpp");
    std::fs::write(
        &src,
        "#include \"nfisac.h\"\nint main() { return nfisac_version() == nullptr; }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("c++")
        .args(["-std=c++11", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .expect("a C++ compiler on PATH");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
