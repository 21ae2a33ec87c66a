//! Forward simulation two ways: direct Gillespie draws and thinning of a
//! dominating Poisson grid. Stripping the virtual jumps from the thinned
//! paths gives the same law, which the summary below makes visible.

use mjp_pgas::rates::{AugmentationPolicy, DenseRates};
use mjp_pgas::simulate::{simulate_gillespie, thinning_sample, Categorical};
use mjp_pgas::trajectory::strip_virtual;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mjp_pgas::Result<()> {
    let q = DenseRates::new(vec![vec![0.0, 2.0, 1.0], vec![1.0, 0.0, 0.5], vec![3.0, 0.0, 0.0]])?;
    let init = Categorical::uniform(3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;

    let direct: f64 = (0..n)
        .map(|_| simulate_gillespie(&q, &init, 2.0, &mut rng).map(|t| t.num_jumps() as f64))
        .sum::<mjp_pgas::Result<f64>>()?;
    println!("gillespie: {:.3} jumps on average", direct / n as f64);

    for policy in [
        AugmentationPolicy::Uniformization { lambda: 6.0 },
        AugmentationPolicy::Homogeneous { theta: 2.0 },
    ] {
        let (mut jumps, mut virtuals) = (0usize, 0usize);
        for _ in 0..n {
            let aug = thinning_sample(&q, policy, &init, 2.0, &mut rng)?;
            virtuals += aug.num_virtual();
            jumps += strip_virtual(&aug).num_jumps();
        }
        println!(
            "{policy:?}: {:.3} jumps, {:.3} virtual jumps on average",
            jumps as f64 / n as f64,
            virtuals as f64 / n as f64
        );
    }
    Ok(())
}
