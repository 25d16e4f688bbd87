use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use falp::analysis::marcum_q1;
use falp::beamform::{optimal_phase_bf, quantize_phases, waterfill, zfb_beamformer, Beamformer};
use falp::channel::complex_normal;
use falp::grid::{ComplexGrid, C64};
use falp::perfect_arrays::{construct_pba, random_base, spectral_mask, verify_perfect};
use falp::recovery::{adjoint_op, forward_op, omp, psf, zero_fill_estimate, ConvOperator, DenseOperator, PartialFourier, RecoveryConfig, SensingOperator};
use falp::sounding::{acquire, acquire_conv, sample_omega, MeasurementVector};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_grid(n: usize, r: &mut ChaCha8Rng) -> ComplexGrid {
    ComplexGrid::from_fn(n, |_, _| complex_normal(r, 1.0))
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn small_n() -> impl Strategy<Value = usize> {
    prop_oneof![Just(2usize), Just(4), Just(6), Just(8), Just(12)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transform_round_trip_and_parseval(n in 1usize..20, seed in any::<u64>()) {
        let g = random_grid(n, &mut rng(seed));
        let back = g.dft2().idft2();
        prop_assert!(back.sub(&g).unwrap().max_abs() < 1e-10);
        prop_assert!((g.dft2().frob_norm() - g.frob_norm()).abs() < 1e-9 * g.frob_norm().max(1.0));
    }

    #[test]
    fn convolution_theorem(n in 1usize..16, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_grid(n, &mut r);
        let b = random_grid(n, &mut r);
        let lhs = a.circ_conv2(&b).unwrap().dft2();
        let rhs = a.dft2().hadamard(&b.dft2()).unwrap().scale_re(n as f64);
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-9 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn pba_sizes_are_perfect_and_unimodular(n in small_n()) {
        let p = construct_pba(n).unwrap();
        prop_assert!(verify_perfect(&p));
        let z = spectral_mask(&p);
        prop_assert!(z.as_slice().iter().all(|v| (v.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn acquisition_paths_agree(n in 2usize..12, frac in 0.05f64..1.0, q in 1u32..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = ((frac * (n * n) as f64) as usize).max(1);
        let p = random_base(n, q, &mut r);
        let h = random_grid(n, &mut r);
        let o = sample_omega(n, m, &mut r).unwrap();
        let a = acquire(&h, &p, &o, 0.0, &mut r).unwrap();
        let b = acquire_conv(&h, &p, &o, 0.0, &mut r).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn fast_operators_match_dense(n in 1usize..9, frac in 0.05f64..1.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = ((frac * (n * n) as f64) as usize).max(1);
        let o = sample_omega(n, m, &mut r).unwrap();
        let dense = DenseOperator::partial_fourier(&o);
        let w = random_grid(n, &mut r);
        let v: Vec<C64> = (0..m).map(|_| complex_normal(&mut r, 1.0)).collect();
        let fw = forward_op(&w, &o).unwrap();
        for (x, y) in fw.iter().zip(dense.apply(&w)) {
            prop_assert!((x - y).norm() < 1e-10);
        }
        prop_assert!(adjoint_op(&v, &o).unwrap().sub(&dense.adjoint(&v)).unwrap().max_abs() < 1e-10);
        // ⟨A w, v⟩ = ⟨w, Aᴴ v⟩
        let lhs = dot(&fw, &v);
        let rhs = w.inner(&adjoint_op(&v, &o).unwrap()).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
    }

    #[test]
    fn conv_operator_adjoint(n in 2usize..9, os in 1usize..3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let o = sample_omega(n, (n * n / 2).max(1), &mut r).unwrap();
        let op = ConvOperator::new(&random_base(n, 2, &mut r), o, os).unwrap();
        let w = random_grid(op.dim(), &mut r);
        let v: Vec<C64> = (0..op.m()).map(|_| complex_normal(&mut r, 1.0)).collect();
        let lhs = dot(&op.apply(&w), &v);
        let rhs = w.inner(&op.adjoint(&v)).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
    }

    #[test]
    fn zero_fill_identity_for_any_s(n in 2usize..17, frac in 0.02f64..1.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = ((frac * (n * n) as f64) as usize).max(1);
        let s = random_grid(n, &mut r);
        let o = sample_omega(n, m, &mut r).unwrap();
        let y = MeasurementVector { values: forward_op(&s, &o).unwrap(), sigma: 0.0, ns: 1 };
        let z = ComplexGrid::from_fn(n, |_, _| C64::from_polar(1.0, r.random_range(0.0..2.0 * PI)));
        let (s_bl, _) = zero_fill_estimate(&y, &o, &z).unwrap();
        let want = s.circ_conv2(&psf(&o)).unwrap().scale_re(m as f64 / (n * n) as f64);
        prop_assert!(s_bl.sub(&want).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn omp_residual_non_increasing(n in 4usize..13, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = ((frac * (n * n) as f64) as usize).max(2);
        let o = sample_omega(n, m, &mut r).unwrap();
        let y: Vec<C64> = (0..m).map(|_| complex_normal(&mut r, 1.0)).collect();
        let est = omp(&PartialFourier::new(o), &y, &RecoveryConfig { max_iters: 30, ..Default::default() });
        for w in est.residuals.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        // grid zero off the support, coefficients on it
        let mut nz = 0;
        for (i, v) in est.grid.as_slice().iter().enumerate() {
            if v.norm() > 0.0 {
                nz += 1;
                prop_assert!(est.support.contains(&(i / n, i % n)));
            }
        }
        prop_assert!(nz <= est.support.len());
    }

    #[test]
    fn quantized_beamformers_are_feasible(n in 1usize..10, q in 1u32..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let h = random_grid(n, &mut r);
        let f = optimal_phase_bf(&h, r.random_range(-PI..PI));
        let fq = quantize_phases(&f, q);
        prop_assert!(Beamformer::new(fq.grid().clone(), q).is_ok());
        prop_assert_eq!(&quantize_phases(&fq, q), &fq);
        for (a, b) in f.grid().as_slice().iter().zip(fq.grid().as_slice()) {
            let d = (a.arg() - b.arg()).rem_euclid(2.0 * PI);
            prop_assert!(d.min(2.0 * PI - d) <= PI / (1u64 << q) as f64 + 1e-12);
        }
    }

    #[test]
    fn dual_norm_bound(n in 1usize..10, q in 1u32..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let h = random_grid(n, &mut r);
        let bound = h.l1_norm() / n as f64;
        prop_assert!((optimal_phase_bf(&h, 0.7).gain(&h).unwrap().norm() - bound).abs() < 1e-10);
        let fq = quantize_phases(&optimal_phase_bf(&h, 0.0), q);
        prop_assert!(fq.gain(&h).unwrap().norm() <= bound + 1e-10);
    }

    #[test]
    fn zfb_selection_is_scale_invariant(n in 1usize..12, re in -5.0f64..5.0, im in -5.0f64..5.0, seed in any::<u64>()) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let s = random_grid(n, &mut rng(seed));
        prop_assert_eq!(zfb_beamformer(&s, 1), zfb_beamformer(&s.scale(C64::new(re, im)), 1));
    }

    #[test]
    fn waterfill_kkt(gains in proptest::collection::vec(0.0f64..20.0, 1..40), total in 0.1f64..50.0) {
        let (mu, p) = waterfill(&gains, total);
        if gains.iter().any(|&g| g > 0.0) {
            prop_assert!((p.iter().sum::<f64>() - total).abs() < 1e-8 * total.max(1.0));
        }
        for (&g, &pk) in gains.iter().zip(&p) {
            prop_assert!(pk >= 0.0);
            if pk > 0.0 {
                prop_assert!((pk + 1.0 / g - mu).abs() < 1e-8 * mu.max(1.0));
            } else if g > 0.0 {
                prop_assert!(1.0 / g >= mu - 1e-8 * mu.max(1.0));
            }
        }
    }

    #[test]
    fn marcum_monotone(a in 0.0f64..6.0, b in 0.0f64..8.0, da in 0.0f64..1.0, db in 0.0f64..1.0) {
        prop_assert!(marcum_q1(a, b + db) <= marcum_q1(a, b) + 1e-13);
        prop_assert!(marcum_q1(a + da, b) >= marcum_q1(a, b) - 1e-13);
        let v = marcum_q1(a, b);
        prop_assert!((0.0..=1.0).contains(&v));
    }
}
