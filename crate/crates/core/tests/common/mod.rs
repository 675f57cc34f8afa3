use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spac_core::nn::{ModelWeights, ParamStore, Tensor};

/// Parameters for finite-difference checks of the loss. Biases start at zero,
/// which puts ReLU kinks exactly on the base point, so they are drawn small
/// and nonzero. The output head is damped and centered on mid-grey: an
/// untrained head lands far from the targets and a distortion near 1e6 buries
/// small gradient entries in round-off.
pub fn gradcheck_params(w: &ModelWeights, seed: u64) -> ParamStore {
    let mut store = w.params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let t = store.get(id).clone();
        let data: Vec<f64> = if name == "recon.head.b" {
            (0..t.len()).map(|_| 0.5 + rng.gen_range(-0.05..0.05)).collect()
        } else if name == "recon.head.w" {
            t.data().iter().map(|x| 0.1 * x).collect()
        } else if name.ends_with(".b") {
            (0..t.len()).map(|_| rng.gen_range(-0.1..0.1)).collect()
        } else {
            continue;
        };
        *store.get_mut(id) = Tensor::from_vec(t.rows(), t.cols(), data).unwrap();
    }
    store
}
