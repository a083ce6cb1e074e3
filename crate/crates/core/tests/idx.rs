use channel_pac::data::{load_idx, load_mnist, make_blobs, mnist_paths, write_idx, Dataset, MnistSplit};
use ndarray::Array2;

#[test]
fn idx_round_trip_quantizes_to_bytes() {
    let features = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 6 + j) * 8) as f64 / 255.0);
    let data = Dataset::new(features, vec![0, 3, 1, 2, 3], 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = mnist_paths(dir.path(), MnistSplit::Test);
    write_idx(&data, 2, 3, &img, &lab).unwrap();
    let back = load_idx(&img, &lab).unwrap();
    assert_eq!(back.labels(), data.labels());
    assert_eq!(back.classes(), 4);
    for (a, b) in back.features().iter().zip(data.features().iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(load_mnist(dir.path(), MnistSplit::Test).unwrap(), back);
    assert!(load_mnist(dir.path(), MnistSplit::Train).is_err());
}

#[test]
fn corrupt_idx_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_blobs(4, 4, 2, 0.1, 1).unwrap();
    let (img, lab) = mnist_paths(dir.path(), MnistSplit::Train);
    write_idx(&data, 2, 2, &img, &lab).unwrap();
    let mut bytes = std::fs::read(&img).unwrap();
    bytes.truncate(bytes.len() - 1);
    std::fs::write(&img, bytes).unwrap();
    assert!(load_idx(&img, &lab).is_err());
}
