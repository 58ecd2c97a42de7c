use msgp::dataset::{map_to_lattice, Dataset, LatticeData, MappingOptions};
use msgp::kernels::{KernelParams, SeParams, SpectralDensityTable};
use msgp::mixture::{Assignments, MixtureWeights};
use msgp::sampler::{
    augmented_log_likelihood, run_chain, MixtureState, NoiseShape, Sampler, SamplerConfig, Trend,
};
use msgp::simdata::{simulate_two_region_1d, TwoRegionConfig};
use msgp::spectral::{assemble_covariance, SpectralCoefficients};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn line_data(y: &[f64], size: usize) -> LatticeData {
    let coords = (0..y.len()).map(|i| vec![i as f64]).collect();
    let options = MappingOptions {
        sizes: Some(vec![size]),
        ..Default::default()
    };
    map_to_lattice(&Dataset::new(coords, y.to_vec()).unwrap(), &options).unwrap()
}

fn se(phi: f64, rho: f64) -> KernelParams {
    KernelParams::SquaredExponential(SeParams::isotropic(phi, rho, 1).unwrap())
}

fn small_config(k0: usize, iters: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        k0,
        iters,
        seed,
        ..Default::default()
    }
}

fn two_region(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_two_region_1d(&TwoRegionConfig::default(), &mut rng).unwrap()
}

#[test]
fn marginalizing_coefficients_gives_the_gaussian_density() {
    // k0 = 1 on a fully observed 4-site lattice. The augmented likelihood is
    // quadratic in (a, b); integrating it out analytically must give the
    // multivariate normal density of y under the assembled covariance.
    let y = [0.7, -0.4, 1.3, 0.2];
    let data = line_data(&y, 4);
    let theta = se(1.3, 0.9);
    let sigma2 = 0.35;
    let tables = vec![SpectralDensityTable::for_kernel(&theta, &data.lattice).unwrap()];
    let mut ytilde = vec![0.0; 4];
    for (i, &s) in data.sites.iter().enumerate() {
        ytilde[s] = y[i];
    }
    let half = data.lattice.canonical_indices().len();
    let dim = 2 * half;
    let eval = |x: &[f64]| {
        let state = MixtureState {
            z: Assignments::new(vec![0; 4], 1).unwrap(),
            thetas: vec![theta.clone()],
            weights: MixtureWeights::uniform(1.0, 1).unwrap(),
            coeffs: vec![SpectralCoefficients {
                a: x[..half].to_vec(),
                b: x[half..].to_vec(),
            }],
            sigma2,
            ytilde: vec![ytilde.clone()],
        };
        augmented_log_likelihood(&state, &data, &tables)
    };
    let unit = |i: usize, s: f64| {
        let mut v = vec![0.0; dim];
        v[i] = s;
        v
    };
    let l0 = eval(&vec![0.0; dim]);
    let mut h = DVector::zeros(dim);
    let mut p = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let (lp, lm) = (eval(&unit(i, 1.0)), eval(&unit(i, -1.0)));
        h[i] = (lp - lm) / 2.0;
        p[(i, i)] = -(lp + lm - 2.0 * l0);
    }
    for i in 0..dim {
        for j in 0..i {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v[j] = 1.0;
            let lij = eval(&v);
            // L(ei + ej) = l0 + hi + hj - (Pii + Pjj)/2 - Pij
            let pij = l0 + h[i] + h[j] - 0.5 * (p[(i, i)] + p[(j, j)]) - lij;
            p[(i, j)] = pij;
            p[(j, i)] = pij;
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let pinv = p.clone().try_inverse().unwrap();
    // The augmented expression omits the 2 pi normalizers of the noise and
    // of the standard-normal coefficient prior.
    let log_marginal = l0 + 0.5 * h.dot(&(&pinv * &h)) + 0.5 * dim as f64 * two_pi.ln()
        - 0.5 * p.determinant().ln()
        - 0.5 * 4.0 * two_pi.ln()
        - 0.5 * dim as f64 * two_pi.ln();

    let k = assemble_covariance(&data.lattice, &data.sites, &[theta.clone(), theta.clone(), theta.clone(), theta], sigma2)
        .unwrap();
    let yv = DVector::from_column_slice(&y);
    let exact = -0.5 * yv.dot(&(k.clone().try_inverse().unwrap() * &yv))
        - 0.5 * k.determinant().ln()
        - 0.5 * 4.0 * two_pi.ln();
    assert!((log_marginal - exact).abs() < 1e-9, "{log_marginal} vs {exact}");
}

#[test]
fn doubling_sigma_with_zero_residuals() {
    let data = line_data(&[0.0, 0.0], 4);
    let tables = vec![SpectralDensityTable::for_kernel(&se(1.0, 1.0), &data.lattice).unwrap(); 2];
    let state = |sigma2: f64| MixtureState {
        z: Assignments::new(vec![0, 1], 2).unwrap(),
        thetas: vec![se(1.0, 1.0); 2],
        weights: MixtureWeights::uniform(1.0, 2).unwrap(),
        coeffs: vec![SpectralCoefficients::zeros(&data.lattice)],
        sigma2,
        ytilde: vec![vec![0.0; 4]; 2],
    };
    let l1 = augmented_log_likelihood(&state(1.0), &data, &tables);
    assert!((l1 - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    let l2 = augmented_log_likelihood(&state(4.0), &data, &tables);
    assert!((l1 - l2 - 4.0 * 2.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn two_iterations_keep_one_draw() {
    let fit = run_chain(&two_region(1), &small_config(3, 2, 5), &MappingOptions::default(), 0).unwrap();
    assert_eq!(fit.chain.draws.len(), 1);
    assert_eq!(fit.chain.log_likelihood.len(), 2);
}

#[test]
fn chains_are_deterministic() {
    let data = two_region(2);
    let a = run_chain(&data, &small_config(4, 60, 9), &MappingOptions::default(), 1).unwrap();
    let b = run_chain(&data, &small_config(4, 60, 9), &MappingOptions::default(), 1).unwrap();
    assert_eq!(a.chain, b.chain);
    let c = run_chain(&data, &small_config(4, 60, 10), &MappingOptions::default(), 1).unwrap();
    assert_ne!(a.chain, c.chain);
}

#[test]
fn checkpoint_resume_is_bit_exact() {
    let data = map_to_lattice(&two_region(3), &MappingOptions::default()).unwrap();
    let config = small_config(3, 80, 4);
    let straight = Sampler::new(data.clone(), Trend::zero(), config.clone()).unwrap().run().unwrap();

    let mut first = Sampler::new(data, Trend::zero(), config).unwrap();
    first.run_until(37).unwrap();
    let dir = std::env::temp_dir().join(format!("msgp-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("chain.ckpt");
    let sidecar = first.save_checkpoint(&path).unwrap();
    assert_eq!(sidecar.iteration, 37);
    let resumed = Sampler::load_checkpoint(&path).unwrap().run().unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(straight, resumed);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let data = map_to_lattice(&two_region(3), &MappingOptions::default()).unwrap();
    let sampler = Sampler::new(data, Trend::zero(), small_config(2, 4, 1)).unwrap();
    let (mut bytes, _) = sampler.to_checkpoint_bytes().unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    assert!(Sampler::from_checkpoint_bytes(&bytes).is_err());
}

fn sampler_on(y: &[f64], size: usize, k0: usize) -> Sampler {
    Sampler::new(line_data(y, size), Trend::zero(), small_config(k0, 10, 3)).unwrap()
}

#[test]
fn zero_weight_components_are_never_chosen() {
    let mut s = sampler_on(&[0.3, -1.0, 2.0, 0.5, 0.1, -0.2], 12, 4);
    let mut state = s.state().clone();
    state.weights = MixtureWeights::from_probabilities(vec![1.0, 0.0, 0.0, 0.0], 0.5).unwrap();
    s.set_state(state).unwrap();
    s.step1_update_assignments();
    assert!(s.state().z.z.iter().all(|&k| k == 0));
}

#[test]
fn assignment_follows_the_closer_field() {
    let mut s = sampler_on(&[0.0, 0.0, 0.0, 0.0], 8, 2);
    let mut state = s.state().clone();
    state.sigma2 = 1e-4;
    s.set_state(state).unwrap();
    let fields = s.fields().to_vec();
    let sites = s.data().sites.clone();
    let i = (0..4)
        .max_by(|&a, &b| {
            let g = |i: usize| (fields[0][sites[i]] - fields[1][sites[i]]).abs();
            g(a).total_cmp(&g(b))
        })
        .unwrap();
    // observations sit on the first component's field, at least 10 sd from the second
    assert!((fields[0][sites[i]] - fields[1][sites[i]]).abs() >= 0.1);
    s.set_observations(sites.iter().map(|&x| fields[0][x]).collect()).unwrap();
    for _ in 0..20 {
        s.step1_update_assignments();
        assert_eq!(s.state().z.z[i], 0);
    }
}

#[test]
fn latent_draws_collapse_to_field_without_noise() {
    let mut s = sampler_on(&[0.4, 0.1], 8, 2);
    let mut state = s.state().clone();
    state.sigma2 = 1e-12;
    s.set_state(state).unwrap();
    s.step2_update_latent();
    let fields = s.fields().to_vec();
    let owner = s.data().site_owner();
    for k in 0..2 {
        for site in 0..8 {
            let pinned = matches!(owner[site], Some(i) if s.state().z.z[i] == k);
            if !pinned {
                assert!((s.state().ytilde[k][site] - fields[k][site]).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn pinned_observations_survive_sweeps() {
    let y = [0.4, 0.1, -0.7, 1.2];
    let mut s = sampler_on(&y, 8, 3);
    for _ in 0..25 {
        s.sweep_once().unwrap();
        let st = s.state();
        for (i, &site) in s.data().sites.iter().enumerate() {
            assert_eq!(st.ytilde[st.z.z[i]][site], y[i]);
        }
        assert!((st.weights.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(st.sigma2 > 0.0);
    }
}

#[test]
fn noise_update_bookkeeping() {
    let s = sampler_on(&[0.4, 0.1, 0.3], 8, 2);
    assert_eq!(s.noise_posterior(0.0), (2.0 * 8.0 / 2.0 + 2.0, 1.0));
    assert_eq!(s.noise_posterior(3.0).1, 2.5);
    let mut config = small_config(2, 10, 3);
    config.noise_shape = NoiseShape::Observed;
    let s = Sampler::new(line_data(&[0.4, 0.1, 0.3], 8), Trend::zero(), config).unwrap();
    assert_eq!(s.noise_posterior(0.0).0, 3.0 / 2.0 + 2.0);
}

#[test]
fn single_component_sigma_update_matches_inverse_gamma_mean() {
    // With the coefficients pinned at the latent spectrum the residual is
    // zero and sigma^2 ~ IG(k0 |W| / 2 + 2, 1).
    let mut s = sampler_on(&[0.0, 0.0], 4, 1);
    let mut state = s.state().clone();
    state.ytilde = vec![vec![0.0; 4]];
    state.coeffs = vec![SpectralCoefficients::zeros(&s.data().lattice)];
    let draws = 20_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..draws {
        s.set_state(state.clone()).unwrap();
        s.step4_update_sigma2();
        let v = s.state().sigma2;
        sum += v;
        sq += v * v;
    }
    let mean = sum / draws as f64;
    let sd = (sq / draws as f64 - mean * mean).sqrt();
    let expected = 1.0 / (4.0 / 2.0 + 1.0);
    assert!((mean - expected).abs() < 3.0 * sd / (draws as f64).sqrt());
}
