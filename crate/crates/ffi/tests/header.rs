use std::path::Path;
use std::process::Command;

#[test]
fn header_is_current_and_compiles() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/salnet.h")).unwrap();
    for f in [
        "salnet_last_error_message",
        "salnet_compose_affine",
        "salnet_bilinear_sample",
        "salnet_layer_new",
        "salnet_layer_backward",
        "salnet_dataset_read",
        "salnet_dataset_segment",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
    assert!(header.contains("typedef struct SalnetLayer SalnetLayer;"));

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"salnet.h\"\nint main(void) {\n  double p[7] = {0, 0, 0, 1, 1, 0, 0}, out[6];\n  \
         SalnetLayer *l = NULL;\n  (void)l;\n  return salnet_compose_affine(p, out) == SALNET_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(root.join("include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("skipping C compile check, {cc} unavailable: {e}"),
    }
}
