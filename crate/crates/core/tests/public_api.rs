use converse_core::kernel_file::{gaussian_psf, read_kernel_file, write_kernel_file};
use converse_core::oracle::solve_tensor;
use converse_core::testing::{gaussian_vec, max_abs_diff, random_tensor, rel_err_inf};
use converse_core::{
    checkpoint, converse_solve, forward_model, net_forward, normalize_kernel, Converse2d, ConverseConfig, KernelBank,
    LambdaParam, PadMode, ToyConverseNet, X0Strategy,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn padded_solve_matches_the_oracle_for_every_mode_and_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mode in PadMode::ALL {
        for scale in [1, 2, 3] {
            let y = random_tensor(&mut rng, [2, 2, 5, 4]);
            let k = KernelBank::from_logits(2, 3, 3, gaussian_vec(&mut rng, 18)).unwrap();
            let lam = LambdaParam::from_bias(vec![0.5, -1.0]).unwrap();
            let cfg = ConverseConfig { scale, pad_mode: mode, pad_size: 2, x0: X0Strategy::InterpNearest };
            let fast = converse_solve(&y, &k, &lam, &cfg).unwrap();
            let dense = solve_tensor(&y, &k, &lam, &cfg).unwrap();
            assert_eq!(fast.shape(), [2, 2, 5 * scale, 4 * scale]);
            assert!(rel_err_inf(fast.data(), dense.data()) < 1e-8, "{mode} s={scale}");
        }
    }
}

#[test]
fn operator_inverts_its_own_forward_model_when_well_posed() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&mut rng, [1, 1, 24, 24]);
    let mut weights = vec![0.02; 9];
    weights[4] = 0.84;
    let k = KernelBank::from_weights(1, 3, 3, weights).unwrap();
    let y = forward_model(&x, &normalize_kernel(&k), 1).unwrap();
    let op = Converse2d::new(k, LambdaParam::fixed(vec![1e-9]).unwrap(), ConverseConfig::unpadded(1, X0Strategy::Zero))
        .unwrap();
    let recovered = op.forward(&y).unwrap();
    assert!(max_abs_diff(recovered.data(), x.data()) < 1e-6);
}

#[test]
fn kernel_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("psf.txt");
    let psf = gaussian_psf(9, 2.0).unwrap();
    write_kernel_file(&path, &psf).unwrap();
    assert_eq!(read_kernel_file(&path).unwrap(), psf);
}

#[test]
fn checkpoints_reproduce_network_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (bin, json) = (dir.path().join("net.bin"), dir.path().join("net.json"));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = ToyConverseNet::random(&mut rng, 3, 4, 2).unwrap();
    checkpoint::save(&net, &bin, &json).unwrap();
    let loaded = checkpoint::load(&bin, &json).unwrap();
    let x = random_tensor(&mut rng, [1, 3, 16, 16]);
    assert_eq!(net_forward(&x, &loaded).unwrap(), net_forward(&x, &net).unwrap());
}
