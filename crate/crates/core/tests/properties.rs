use blpcs::bases::{f1_scale, f2_permute, Basis, BasisShape, OrthoBasis};
use blpcs::cipher::{blp_encode, keygen, read_packets, write_packets, BlpKey, KeyParams, MeasurementPacket};
use blpcs::ensembles::{Permutation, ScalingDiag};
use blpcs::imaging::{read_pgm, write_pgm, GrayImage};
use blpcs::keyrand::{derive_stream, random_permutation, KeySeed};
use blpcs::solvers::SparseRep;
use proptest::prelude::*;
use std::sync::OnceLock;

const M: usize = 32;

fn toy_key() -> &'static BlpKey {
    static KEY: OnceLock<BlpKey> = OnceLock::new();
    KEY.get_or_init(|| keygen(KeyParams { mix_count: 4, ..KeyParams::new(9, M, 0.5) }).unwrap())
}

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, M)
}

fn sparse_signal(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![3 => Just(0.0), 1 => (0.5..10.0f64).prop_map(|v| v), 1 => (-10.0..-0.5f64).prop_map(|v| v)], n)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoding_is_linear(x1 in signal(), x2 in signal(), c in -5.0..5.0f64) {
        let key = toy_key();
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| c * a + b).collect();
        let lhs = blp_encode(key, &sum).unwrap().y;
        let y1 = blp_encode(key, &x1).unwrap().y;
        let y2 = blp_encode(key, &x2).unwrap().y;
        let rhs: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| c * a + b).collect();
        prop_assert!(close(&lhs, &rhs, 1e-10));
    }

    #[test]
    fn secret_basis_round_trips(x in signal()) {
        let basis = toy_key().secret_basis(BasisShape::OneD).unwrap();
        let back = basis.synthesize(&basis.analyze(&x).unwrap()).unwrap();
        prop_assert!(close(&back, &x, 1e-9));
    }

    #[test]
    fn permutation_round_trips(seed in any::<u64>(), n in 1usize..200) {
        let p = random_permutation(&mut derive_stream(KeySeed(seed), "perm"), n);
        let v: Vec<usize> = (0..n).map(|i| i * 7 + 1).collect();
        prop_assert_eq!(p.apply_transpose(&p.apply(&v)), v.clone());
        prop_assert!(p.compose(&p.inverse()).is_identity());
        let again = Permutation::new(p.map().to_vec()).unwrap();
        prop_assert_eq!(again, p);
    }

    #[test]
    fn scaling_and_permuting_keep_sparsity(s in sparse_signal(40), seed in any::<u64>()) {
        let mut st = derive_stream(KeySeed(seed), "ops");
        let perm = random_permutation(&mut st, 40);
        let d = ScalingDiag::random_integers(&mut st, 40, 60).unwrap();
        let x = OrthoBasis::identity(40).synthesize(&s).unwrap();
        let scaled = f1_scale(Box::new(OrthoBasis::identity(40)), &d).unwrap().analyze(&x).unwrap();
        let permuted = f2_permute(Box::new(OrthoBasis::identity(40)), perm).unwrap().analyze(&x).unwrap();
        let nnz = |v: &[f64]| v.iter().filter(|e| **e != 0.0).count();
        prop_assert_eq!(nnz(&scaled), nnz(&s));
        prop_assert_eq!(nnz(&permuted), nnz(&s));
    }

    #[test]
    fn sparse_rep_round_trips(s in sparse_signal(30)) {
        let rep = SparseRep::from_dense(&s, 0.0);
        prop_assert_eq!(rep.to_dense(), s.clone());
        prop_assert_eq!(rep.l0(), s.iter().filter(|v| **v != 0.0).count());
    }

    #[test]
    fn key_text_round_trips(seed in any::<u64>(), m in 4usize..600, sr in 0.05..=1.0f64) {
        let m = m & !1;
        let params = KeyParams { mix_count: 0, ..KeyParams::new(seed, m, sr) };
        prop_assume!(params.validate().is_ok());
        prop_assert_eq!(KeyParams::from_text(&params.to_text()).unwrap(), params);
    }

    #[test]
    fn packets_round_trip(values in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 5), 1..6)) {
        let packets: Vec<MeasurementPacket> = values.into_iter().map(MeasurementPacket::full).collect();
        let mut buf = Vec::new();
        write_packets(&packets, &mut buf).unwrap();
        prop_assert_eq!(read_packets(buf.as_slice()).unwrap(), packets);
    }

    #[test]
    fn pgm_round_trips(pixels in prop::collection::vec(0u8..=255, 64)) {
        let img = GrayImage::new(8, pixels.iter().map(|p| *p as f64).collect()).unwrap();
        let mut buf = Vec::new();
        write_pgm(&img, &mut buf).unwrap();
        let back = read_pgm(buf.as_slice()).unwrap();
        prop_assert_eq!(back.pixels(), img.pixels());
    }
}
