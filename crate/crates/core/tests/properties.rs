use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Array4};
use pargrappa::analyze::{entropy, fdr_threshold, mse, wrap_angle};
use pargrappa::bgrappa::{icm_map_traced, Hyperparameters, IcmConfig};
use pargrappa::grappa::{
    bgrappa_groups, interpolate_missing, interpolate_missing_iso, KernelSpec, WeightSet,
    WeightSharing,
};
use pargrappa::tensor::iso::weights_to_d;
use pargrappa::{ft2, ift2, subsample, CoilKSpaceSeries, Complex64, ComplexImage, IsoMatrix, IsoVector, SamplingMask};
use proptest::prelude::*;

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| Complex64::new(a, b))
}

fn image(n_y: usize, n_x: usize) -> impl Strategy<Value = Array2<Complex64>> {
    prop::collection::vec(complex(), n_y * n_x)
        .prop_map(move |v| Array2::from_shape_vec((n_y, n_x), v).unwrap())
}

fn series(n_t: usize, n_c: usize, n_y: usize, n_x: usize) -> impl Strategy<Value = CoilKSpaceSeries> {
    prop::collection::vec(complex(), n_t * n_c * n_y * n_x).prop_map(move |v| {
        CoilKSpaceSeries::new(Array4::from_shape_vec((n_t, n_c, n_y, n_x), v).unwrap()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_round_trip_and_energy(data in image(6, 10)) {
        let img = ComplexImage::new(data).unwrap();
        let k = ft2(&img);
        prop_assert!((k.energy() - img.energy()).abs() < 1e-10 * img.energy().max(1.0));
        let back = ift2(&k);
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn subsampling_is_idempotent(s in series(2, 2, 9, 4), accel in 1usize..4, offset in 0usize..3) {
        prop_assume!(offset < accel);
        let mask = SamplingMask::new(9, 4, accel, offset).unwrap();
        let once = subsample(&s, &mask).unwrap();
        prop_assert_eq!(&subsample(&once, &mask).unwrap(), &once);
        for row in 0..9 {
            let kept = (row >= offset) && (row - offset) % accel == 0;
            prop_assert_eq!(mask.is_acquired(row), kept);
            let v = once.data()[[1, 1, row, 2]];
            prop_assert_eq!(v, if kept { s.data()[[1, 1, row, 2]] } else { Complex64::new(0.0, 0.0) });
        }
    }

    #[test]
    fn isomorphism_matches_complex_product(w in prop::collection::vec(complex(), 12), f in prop::collection::vec(complex(), 4)) {
        let wm = DMatrix::from_row_slice(3, 4, &w);
        let iso = IsoMatrix::from_complex(&wm);
        prop_assert!(iso.has_block_structure());
        let out = iso.mul_vector(&IsoVector::from_complex(&f)).unwrap().to_complex();
        let direct = &wm * nalgebra::DVector::from_vec(f.clone());
        for (a, b) in out.iter().zip(direct.iter()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn grappa_paths_agree_and_keep_acquired(calib in series(6, 2, 9, 3), frame in series(1, 2, 9, 3)) {
        let mask = SamplingMask::new(9, 3, 2, 0).unwrap();
        let weights = WeightSet::estimate(&calib, &mask, &KernelSpec::default(), WeightSharing::PerLocation).unwrap();
        let sub = subsample(&frame, &mask).unwrap();
        let a = interpolate_missing(sub.frame(0), &mask, &weights).unwrap();
        let b = interpolate_missing_iso(sub.frame(0), &mask, &weights).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).norm() < 1e-12 * (1.0 + x.norm()));
        }
        for row in mask.acquired_rows() {
            for c in 0..2 {
                for col in 0..3 {
                    prop_assert_eq!(a[[c, row, col]], sub.data()[[0, c, row, col]]);
                }
            }
        }
    }

    #[test]
    fn bgrappa_groups_tile_missing_points(n_y in 6usize..30, n_x in 1usize..6, accel in 2usize..5, k_cols in 1usize..4) {
        let mask = SamplingMask::new(n_y, n_x, accel, 0).unwrap();
        let kernel = KernelSpec::new(accel - 1, k_cols).unwrap();
        let groups = bgrappa_groups(&mask, &kernel);
        let mut hits = Array2::<u32>::zeros((n_y, n_x));
        for g in &groups {
            prop_assert!(mask.is_acquired(g.targets[0].0));
            for &(r, c) in &g.sources {
                prop_assert!(!mask.is_acquired(r));
                hits[[r, c]] += 1;
            }
        }
        for r in mask.missing_rows() {
            for c in 0..n_x {
                prop_assert_eq!(hits[[r, c]], 1);
            }
        }
    }

    #[test]
    fn icm_log_posterior_never_decreases(
        fe in prop::collection::vec(complex(), 2),
        f0 in prop::collection::vec(complex(), 3),
        w0 in prop::collection::vec(complex(), 6),
        n_k in 0.5f64..20.0,
        n_w in 0.5f64..20.0,
        alpha in 2.0f64..30.0,
        tau0 in 0.01f64..1.0,
    ) {
        let hyper = Hyperparameters {
            n_k,
            f_k0: IsoVector::from_complex(&f0),
            n_w,
            d0: weights_to_d(&DMatrix::from_row_slice(2, 3, &w0)),
            alpha,
            delta: alpha * tau0,
            tau0_sq: tau0,
        };
        let cfg = IcmConfig { max_iter: 50, ..IcmConfig::default() };
        let (_, trace) = icm_map_traced(&IsoVector::from_complex(&fe), &hyper, &cfg).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", trace);
        }
    }

    #[test]
    fn fdr_lowering_a_p_value_keeps_selections(p in prop::collection::vec(0.0f64..1.0, 1..200), idx in any::<prop::sample::Index>(), factor in 0.0f64..1.0) {
        let before = fdr_threshold(&p, 0.05).unwrap();
        let mut lowered = p.clone();
        let i = idx.index(p.len());
        lowered[i] *= factor;
        let after = fdr_threshold(&lowered, 0.05).unwrap();
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(!b || *a);
        }
    }

    #[test]
    fn entropy_is_scale_invariant(v in prop::collection::vec(0.0f64..5.0, 16), c in 0.01f64..100.0) {
        let img = Array2::from_shape_vec((4, 4), v).unwrap();
        let a = entropy(img.view()).unwrap();
        let b = entropy(img.mapv(|x| x * c).view()).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn mse_is_symmetric_and_zero_on_self(a in prop::collection::vec(-3.0f64..3.0, 9), b in prop::collection::vec(-3.0f64..3.0, 9), m in prop::collection::vec(any::<bool>(), 9)) {
        prop_assume!(m.iter().any(|&x| x));
        let a = Array2::from_shape_vec((3, 3), a).unwrap();
        let b = Array2::from_shape_vec((3, 3), b).unwrap();
        let m = Array2::from_shape_vec((3, 3), m).unwrap();
        prop_assert_eq!(mse(a.view(), a.view(), &m).unwrap(), 0.0);
        prop_assert_eq!(mse(a.view(), b.view(), &m).unwrap(), mse(b.view(), a.view(), &m).unwrap());
    }

    #[test]
    fn wrapped_angles_stay_in_half_open_interval(d in -50.0f64..50.0) {
        let w = wrap_angle(d);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        prop_assert!(((d - w) / (2.0 * std::f64::consts::PI)).fract().abs() < 1e-9
            || (1.0 - ((d - w) / (2.0 * std::f64::consts::PI)).fract().abs()) < 1e-9);
    }
}

#[test]
fn noiseless_single_coil_weights_are_exact() {
    // k-space rows that are a fixed linear combination of their neighbours
    let (n_y, n_x) = (9, 2);
    let frame = |t: usize| {
        Array3::from_shape_fn((1, n_y, n_x), |(_, r, c)| {
            Complex64::new(1.0 + t as f64 + r as f64 * 0.5, c as f64 - 0.3 * t as f64)
        })
    };
    let calib = CoilKSpaceSeries::from_frames(&(0..5).map(frame).collect::<Vec<_>>()).unwrap();
    let mask = SamplingMask::new(n_y, n_x, 2, 0).unwrap();
    let weights = WeightSet::estimate(&calib, &mask, &KernelSpec::default(), WeightSharing::PerLocation).unwrap();
    let truth = frame(7);
    let sub = subsample(&CoilKSpaceSeries::from_frames(std::slice::from_ref(&truth)).unwrap(), &mask).unwrap();
    let filled = interpolate_missing(sub.frame(0), &mask, &weights).unwrap();
    for (a, b) in filled.iter().zip(truth.iter()) {
        assert!((a - b).norm() < 1e-8, "{a} vs {b}");
    }
}
