//! Round trips and corruption handling of the on-disk formats.

use proptest::prelude::*;
use pseudograph::graph::{GridShape, PartialLabelGrid};
use pseudograph::image::RgbImage;
use pseudograph::io::{
    decode_complete_labels, decode_partial_labels, decode_ppm, decode_sparse, decode_tensor, encode_complete_labels,
    encode_partial_labels, encode_ppm, encode_sparse, encode_tensor, load_checkpoint, save_checkpoint, Tensor,
};
use pseudograph::gcn::GcnParams;
use pseudograph::numeric::SparseMatrix;
use pseudograph::refine::CompleteLabelGrid;

fn triplets() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, f64)>)> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), proptest::collection::vec((0..r, 0..c, -5.0..5.0f64), 0..30))
    })
}

proptest! {
    #[test]
    fn sparse_roundtrip((r, c, t) in triplets()) {
        let s = SparseMatrix::from_triplets(r, c, t).unwrap();
        prop_assert_eq!(decode_sparse(&encode_sparse(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn canonical_form_ignores_triplet_order((r, c, t) in triplets(), rot in 0usize..30) {
        let a = SparseMatrix::from_triplets(r, c, t.clone()).unwrap();
        let mut shuffled = t;
        let k = if shuffled.is_empty() { 0 } else { rot % shuffled.len() };
        shuffled.rotate_left(k);
        shuffled.reverse();
        let b = SparseMatrix::from_triplets(r, c, shuffled).unwrap();
        prop_assert_eq!(encode_sparse(&a).unwrap(), encode_sparse(&b).unwrap());
    }

    #[test]
    fn partial_labels_roundtrip(h in 1usize..6, w in 1usize..6, classes in 1usize..5, seed in proptest::collection::vec(0u16..8, 36)) {
        let labels = (0..h * w).map(|i| {
            let v = seed[i];
            (v as usize <= classes).then_some(v)
        }).collect();
        let p = PartialLabelGrid::new(GridShape::new(h, w), classes, labels).unwrap();
        prop_assert_eq!(decode_partial_labels(&encode_partial_labels(&p).unwrap()).unwrap(), p);
    }

    #[test]
    fn complete_labels_roundtrip(h in 1usize..6, w in 1usize..6, raw in proptest::collection::vec(0u16..4, 36)) {
        let g = CompleteLabelGrid::new(GridShape::new(h, w), 3, raw[..h * w].to_vec()).unwrap();
        prop_assert_eq!(decode_complete_labels(&encode_complete_labels(&g).unwrap()).unwrap(), g);
    }

    #[test]
    fn ppm_roundtrip_of_byte_values(h in 1usize..5, w in 1usize..5, raw in proptest::collection::vec(0u8..=255, 48)) {
        let px = (0..h * w).map(|i| {
            let b = &raw[i * 3..i * 3 + 3];
            [b[0] as f64 / 255.0, b[1] as f64 / 255.0, b[2] as f64 / 255.0]
        }).collect();
        let img = RgbImage::new(h, w, px).unwrap();
        let bytes = encode_ppm(&img);
        prop_assert_eq!(encode_ppm(&decode_ppm(&bytes).unwrap()), bytes);
    }
}

#[test]
fn truncated_and_foreign_buffers_are_format_errors() {
    let t = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
    let bytes = encode_tensor(&t).unwrap();
    for cut in [0, 3, 8, bytes.len() - 1] {
        assert!(decode_tensor(&bytes[..cut]).unwrap_err().is_input_error());
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_tensor(&extra).is_err());
    assert!(decode_sparse(&bytes).is_err());
    assert!(decode_partial_labels(b"PGL1").is_err());
    assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let params = GcnParams::init(5, 16, 4, 77);
    save_checkpoint(&dir.path().join("nested/ckpt"), &params, 77).unwrap();
    let (back, meta) = load_checkpoint(&dir.path().join("nested/ckpt")).unwrap();
    assert_eq!(back, params);
    assert_eq!((meta.hidden, meta.classes, meta.seed), (16, 4, 77));
    assert!(load_checkpoint(dir.path()).unwrap_err().is_input_error());
}
