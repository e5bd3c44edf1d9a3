use std::fs;

use hdsr::corpus::{
    load_glyph_bank, load_string_corpus, read_manifest, scan_string_corpus, write_glyph_tree, write_manifest,
    write_string_tree,
};
use hdsr::fixture;
use hdsr::synthesis::{build_training_set, load_synthetic, plan_synthesis, write_synthetic};
use hdsr::*;

fn two_class_manifest() -> CorpusManifest {
    CorpusManifest::reference().restrict(&[YearLabel::new(1895).unwrap(), YearLabel::new(1918).unwrap()])
}

#[test]
fn glyph_loader_skips_bad_files_and_folders() {
    let dir = tempfile::tempdir().unwrap();
    write_glyph_tree(dir.path(), &fixture::glyph_bank(2, 1)).unwrap();
    fs::write(dir.path().join("3/broken.png"), b"not an image").unwrap();
    fs::create_dir(dir.path().join("x")).unwrap();
    fs::write(dir.path().join("4/notes.txt"), b"ignored").unwrap();
    let (bank, report) = load_glyph_bank(dir.path()).unwrap();
    assert_eq!(bank.len(), 20);
    assert_eq!(report.skipped.len(), 2);
}

#[test]
fn glyph_loader_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_glyph_bank(&dir.path().join("absent")), Err(Error::MissingPath(_))));
    assert!(matches!(load_glyph_bank(dir.path()), Err(Error::NoGlyphs(_))));
    write_glyph_tree(dir.path(), &fixture::glyph_bank(1, 1)).unwrap();
    fs::remove_dir_all(dir.path().join("7")).unwrap();
    assert!(matches!(load_glyph_bank(dir.path()), Err(Error::MissingDigit(7))));
}

#[test]
fn string_corpus_is_checked_against_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_class_manifest();
    let samples = fixture::real_corpus(&manifest, 2).unwrap();
    write_string_tree(dir.path(), &samples).unwrap();
    fs::create_dir_all(dir.path().join("train/1950")).unwrap();
    let (loaded, report) = load_string_corpus(dir.path(), &manifest).unwrap();
    assert_eq!(loaded.len(), samples.len());
    assert_eq!(report.skipped.len(), 1, "1950 is outside the year range");

    // A class the manifest does not list is dropped.
    let only_1895 = manifest.restrict(&[YearLabel::new(1895).unwrap()]);
    let (loaded, _) = load_string_corpus(dir.path(), &only_1895).unwrap();
    assert!(loaded.iter().all(|s| s.label.year() == 1895));

    fs::remove_file(dir.path().join("test/1918/00000.png")).unwrap();
    match load_string_corpus(dir.path(), &manifest) {
        Err(Error::ManifestMismatch(diff)) => assert!(diff.contains("1918"), "{diff}"),
        other => panic!("expected a mismatch, got {other:?}"),
    }
}

#[test]
fn manifest_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    write_manifest(&CorpusManifest::reference(), &path).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), CorpusManifest::reference());
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("label,synthetic,real,test\n1890,1000,0,15\n"));
    assert!(text.trim_end().ends_with("TOTAL,27526,3474,2651"));
}

#[test]
fn synthesis_is_seeded_and_fills_every_class() {
    let manifest = two_class_manifest();
    let real = fixture::real_corpus(&manifest, 3).unwrap();
    let bank = fixture::glyph_bank(4, 3);
    let config = SynthesisConfig { per_class_target: 250, rng_seed: 7, ..SynthesisConfig::default() };
    let (set_a, sum_a) = build_training_set(&bank, &real, &manifest, &config).unwrap();
    let (set_b, sum_b) = build_training_set(&bank, &real, &manifest, &config).unwrap();
    assert_eq!(sum_a, sum_b);
    assert_eq!(set_a.len(), set_b.len());
    for label in manifest.labels() {
        assert_eq!(set_a.iter().filter(|s| s.label == label).count(), 250);
    }
    let rows = &sum_a.manifest.rows;
    assert_eq!((rows[0].synthetic, rows[0].real), (125, 125));
    assert_eq!((rows[1].synthetic, rows[1].real), (233, 17));

    let other = SynthesisConfig { rng_seed: 8, ..config.clone() };
    assert_ne!(build_training_set(&bank, &real, &manifest, &other).unwrap().1.corpus_hash, sum_a.corpus_hash);
}

#[test]
fn target_below_real_count_is_rejected() {
    let manifest = two_class_manifest();
    let real = fixture::real_corpus(&manifest, 3).unwrap();
    let config = SynthesisConfig { per_class_target: 100, ..SynthesisConfig::default() };
    assert!(matches!(plan_synthesis(&real, &manifest, &config), Err(Error::Config(_))));
}

#[test]
fn synthetic_tree_round_trips_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_class_manifest();
    let real = fixture::real_corpus(&manifest, 4).unwrap();
    let config = SynthesisConfig { per_class_target: 240, ..SynthesisConfig::default() };
    let plan = plan_synthesis(&real, &manifest, &config).unwrap();
    let summary = write_synthetic(&fixture::glyph_bank(3, 4), &plan, &config, dir.path()).unwrap();
    let (loaded, report) = load_synthetic(&dir.path().join("synthetic")).unwrap();
    assert!(report.skipped.is_empty());
    assert_eq!(loaded.len(), summary.manifest.totals().0);
    assert!(loaded.iter().all(|s| s.origin == Origin::Synthetic && s.image.dimensions() == (175, 95)));
    let (rescanned, _) = scan_string_corpus(&dir.path().join("synthetic")).unwrap();
    assert!(rescanned.is_empty(), "synthetic tree has no split folders");
}
