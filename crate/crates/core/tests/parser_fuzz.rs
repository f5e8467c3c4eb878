#[path = "support/oracles.rs"]
mod oracles;

#[test]
fn random_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let r = oracles::parser_fuzz_suite(1000, 31, dir.path());
    assert_eq!(r.files, 1000);
    assert_eq!(r.format_errors, 3000, "{r:?}");
}
