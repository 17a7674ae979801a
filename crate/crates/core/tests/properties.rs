//! Randomized property suites for the tensor-train core and the text
//! serialization formats.

use committor_tt::dense::DenseTensor;
use committor_tt::io;
use committor_tt::tt::TensorTrain;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Strategy: dimensions, mode sizes, ranks, and a seed for a random TT.
fn tt_strategy() -> impl Strategy<Value = TensorTrain> {
    (1usize..5, 1usize..4, 1usize..4, any::<u64>()).prop_map(|(d, n, r, seed)| {
        let modes = vec![n; d];
        let mut ranks = vec![r; d + 1];
        ranks[0] = 1;
        ranks[d] = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TensorTrain::random(&modes, &ranks, &mut rng).unwrap()
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn eval_matches_dense(tt in tt_strategy()) {
        let dense = tt.to_dense().unwrap();
        for idx in dense.indices() {
            prop_assert!(close(tt.eval(&idx).unwrap(), dense.get(&idx), 1e-12));
        }
    }

    #[test]
    fn inner_matches_dense_dot(a in tt_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = a.mode_sizes();
        let d = modes.len();
        let mut ranks = vec![2; d + 1];
        ranks[0] = 1;
        ranks[d] = 1;
        let b = TensorTrain::random(&modes, &ranks, &mut rng).unwrap();
        let da = a.to_dense().unwrap();
        let db = b.to_dense().unwrap();
        prop_assert!(close(a.inner(&b).unwrap(), da.dot(&db).unwrap(), 1e-11));
    }

    #[test]
    fn scale_add_matches_dense(a in tt_strategy(), ca in -2.0f64..2.0, cb in -2.0f64..2.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = a.mode_sizes();
        let d = modes.len();
        let mut ranks = vec![2; d + 1];
        ranks[0] = 1;
        ranks[d] = 1;
        let b = TensorTrain::random(&modes, &ranks, &mut rng).unwrap();
        let sum = TensorTrain::scale_add(&a, &b, ca, cb).unwrap();
        let da = a.to_dense().unwrap();
        let db = b.to_dense().unwrap();
        let ds = sum.to_dense().unwrap();
        for idx in ds.indices() {
            prop_assert!(close(ds.get(&idx), ca * da.get(&idx) + cb * db.get(&idx), 1e-11));
        }
    }

    #[test]
    fn norm_matches_dense(tt in tt_strategy()) {
        let dense = tt.to_dense().unwrap();
        prop_assert!(close(tt.norm(), dense.frobenius_norm(), 1e-11));
    }

    #[test]
    fn right_orthogonalization_preserves_tensor(tt in tt_strategy()) {
        let ortho = tt.right_orthogonalized();
        let a = tt.to_dense().unwrap();
        let b = ortho.to_dense().unwrap();
        prop_assert!(a.rel_distance(&b).unwrap() <= 1e-12);
    }

    #[test]
    fn rounding_within_tolerance(tt in tt_strategy()) {
        let rounded = tt.round(1e-10, 64).unwrap();
        let a = tt.to_dense().unwrap();
        let b = rounded.to_dense().unwrap();
        prop_assert!(a.rel_distance(&b).unwrap() <= 1e-9);
        // ranks never grow
        for (ra, rb) in rounded.ranks().iter().zip(tt.ranks()) {
            prop_assert!(*ra <= rb);
        }
    }

    #[test]
    fn from_dense_roundtrip(tt in tt_strategy()) {
        let dense = tt.to_dense().unwrap();
        let back = TensorTrain::from_dense(&dense, 1e-12, 64).unwrap();
        prop_assert!(dense.rel_distance(&back.to_dense().unwrap()).unwrap() <= 1e-10);
    }

    #[test]
    fn tt_text_roundtrip_is_bitwise(tt in tt_strategy()) {
        let mut buf = Vec::new();
        io::write_tt(&mut buf, &tt).unwrap();
        let back = io::read_tt(&buf[..]).unwrap();
        prop_assert_eq!(tt.num_dims(), back.num_dims());
        let a = tt.to_dense().unwrap();
        let b = back.to_dense().unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn dense_tensor_linear_index_bijective(d in 1usize..4, n in 1usize..5) {
        let t = DenseTensor::zeros(&vec![n; d]);
        let mut seen = std::collections::HashSet::new();
        for idx in t.indices() {
            prop_assert!(seen.insert(t.linear_index(&idx)));
        }
        prop_assert_eq!(seen.len(), n.pow(d as u32));
    }
}
