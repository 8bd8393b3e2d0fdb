use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "tlsbath.h"

int main(void) {
    TlsbTrialParams p;
    TlsbField *field = NULL;
    TlsbTrial *trial = NULL;
    double t1 = 0.0;
    uint32_t censored = 0;
    if (tlsb_trial_params_default(&p) != TLSB_STATUS_OK) return 10;
    p.seed = 11;
    p.retain_k = 3;
    p.output_points = 100;
    p.compute_t2 = 0;
    if (tlsb_field_synthetic(&field) != TLSB_STATUS_OK) return 11;
    if (tlsb_trial_run(field, &p, &trial) != TLSB_STATUS_OK) {
        fprintf(stderr, "%s\n", tlsb_last_error());
        return 12;
    }
    if (tlsb_trial_t1(trial, &t1, &censored) != TLSB_STATUS_OK) return 13;
    if (tlsb_trial_t2(trial, &t1) != TLSB_STATUS_UNRESOLVED) return 14;
    if (tlsb_trial_run(NULL, &p, &trial) != TLSB_STATUS_NULL_POINTER) return 15;
    printf("%s %g %u\n", tlsb_version(), t1, censored);
    tlsb_trial_free(trial);
    tlsb_field_free(field);
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    let deps = std::env::current_exe().ok()?.parent()?.to_path_buf();
    [deps.join("libtlsbath_ffi.a"), deps.parent()?.join("libtlsbath_ffi.a")]
        .into_iter()
        .find(|p| p.is_file())
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib() else {
        panic!("libtlsbath_ffi.a not found next to the test binary");
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "compiling the C program failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
