use couple_sed::dataio::{load_dataset_dir, save_dataset_dir, synth_dataset, Split, SynthConfig};
use tempfile::TempDir;

#[test]
fn dataset_directory_round_trip() {
    let cfg = SynthConfig { n_strong: 3, n_weak: 4, n_unlabeled: 5, n_validation: 2, seed: 21, ..SynthConfig::default() };
    let ds = synth_dataset(&cfg).unwrap().dataset;
    let dir = TempDir::new().unwrap();
    save_dataset_dir(dir.path(), &ds).unwrap();
    let back = load_dataset_dir(dir.path()).unwrap();

    assert_eq!(back.classes, ds.classes);
    assert_eq!(back.strong, ds.strong);
    assert_eq!(back.weak, ds.weak);
    assert_eq!(back.validation, ds.validation);
    assert_eq!(back.clips.len(), ds.clips.len());
    for (a, b) in ds.clips.iter().zip(&back.clips) {
        assert_eq!((&a.id, a.split, a.sample_rate), (&b.id, b.split, b.sample_rate));
        assert_eq!(a.samples.len(), b.samples.len());
        // 16-bit PCM quantization.
        let worst = a.samples.iter().zip(&b.samples).map(|(x, y)| (x.clamp(-1.0, 1.0) - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 1.0 / 32767.0, "{}: {worst}", a.id);
    }
    assert_eq!(back.count(Split::Unlabeled), 5);
}

#[test]
fn missing_files_are_reported_with_their_path() {
    let dir = TempDir::new().unwrap();
    let err = load_dataset_dir(dir.path()).unwrap_err().to_string();
    assert!(err.contains(dir.path().to_str().unwrap()), "{err}");
}
