use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use spectra::matrix_file;
use spectra::model::WeightMatrix;
use spectra::Error;

#[test]
fn byte_layout() {
    let w = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
    let plain = matrix_file::encode(&w, None).unwrap();
    assert_eq!(plain.len(), 15 + 8 * 6);
    assert_eq!(&plain[..4], b"SPWM");
    assert_eq!(plain[14], 0);
    assert_eq!(f64::from_le_bytes(plain[15..23].try_into().unwrap()), 1.0);
    assert_eq!(f64::from_le_bytes(plain[23..31].try_into().unwrap()), 2.0);
    let biased = matrix_file::encode(&w, Some(&array![0.1, 0.2, 0.3])).unwrap();
    assert_eq!(biased.len(), 15 + 8 * 9);
    assert_eq!(biased[14], 1);
}

#[test]
fn format_errors() {
    let w = array![[1.0, 2.0]];
    let good = matrix_file::encode(&w, None).unwrap();
    let is_format = |bytes: &[u8]| matches!(matrix_file::decode(bytes, "x"), Err(Error::Format { .. }));
    assert!(is_format(b"NOPE"));
    assert!(is_format(&good[..good.len() - 1]));
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(is_format(&bad_magic));
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(is_format(&bad_version));
    let mut bad_flag = good.clone();
    bad_flag[14] = 2;
    assert!(is_format(&bad_flag));
    assert!(matrix_file::encode(&w, Some(&array![1.0])).is_err());
}

#[test]
fn file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/w.spwm");
    let model = WeightMatrix::new(array![[0.5, -1.5], [f64::MIN_POSITIVE, 1e300]], array![-0.1, 0.0]).unwrap();
    matrix_file::write_weights(&path, &model).unwrap();
    assert_eq!(matrix_file::read_weights(&path).unwrap(), model);

    let plain = dir.path().join("plain.spwm");
    matrix_file::write(&plain, &model.w, None).unwrap();
    assert_eq!(matrix_file::read_weights(&plain).unwrap().b, Array1::<f64>::zeros(2));

    let missing = matrix_file::read(&dir.path().join("absent.spwm")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
    assert_eq!(missing.exit_code(), 3);
    assert_eq!(Error::Format { path: "p".into(), reason: "r".into() }.exit_code(), 3);
}

proptest! {
    #[test]
    fn encoding_round_trips_bitwise(
        (rows, cols, vals) in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(any::<f64>(), r * c + c))
        }),
        with_bias in any::<bool>(),
    ) {
        let w = Array2::from_shape_vec((rows, cols), vals[..rows * cols].to_vec()).unwrap();
        let b = Array1::from(vals[rows * cols..].to_vec());
        let bytes = matrix_file::encode(&w, with_bias.then_some(&b)).unwrap();
        let (w2, b2) = matrix_file::decode(&bytes, "mem").unwrap();
        let bits = |a: &Array2<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&w), bits(&w2));
        prop_assert_eq!(b2.is_some(), with_bias);
        if let Some(b2) = b2 {
            prop_assert_eq!(
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
