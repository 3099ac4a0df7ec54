//! Synthetic stand-in for a large school-based observational sample.
//!
//! 778 schools of 2 to 30 children, every school mixed. Each school has a
//! latent treatment propensity `eta_h` that also shifts the distribution of
//! two categorical school covariates, `region` (4 levels) and `locale`
//! (3 levels), so their mix changes across prevalence deciles. Children
//! carry `female`, `ses` and `pretest`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::data::{validate_dataset, MultilevelDataset, RawRow};
use crate::model::logistic::logistic;
use crate::rng::SeedStream;

pub const FIXTURE_CLUSTERS: usize = 778;
pub const REGION_LEVELS: usize = 4;
pub const LOCALE_LEVELS: usize = 3;

const REGION_SLOPE: [f64; REGION_LEVELS] = [-1.2, -0.4, 0.4, 1.2];
const LOCALE_SLOPE: [f64; LOCALE_LEVELS] = [-1.0, 0.0, 1.0];
const REGION_EFFECT: [f64; REGION_LEVELS] = [-0.4, -0.1, 0.1, 0.4];
const LOCALE_EFFECT: [f64; LOCALE_LEVELS] = [-0.3, 0.0, 0.3];

pub fn individual_covariates() -> Vec<String> {
    vec!["female".into(), "ses".into(), "pretest".into()]
}

pub fn cluster_covariates() -> Vec<String> {
    vec!["region".into(), "locale".into()]
}

fn softmax_draw<R: rand::Rng>(rng: &mut R, slopes: &[f64], eta: f64) -> usize {
    let w: Vec<f64> = slopes.iter().map(|s| (s * eta).exp()).collect();
    let mut t = rng.random::<f64>() * w.iter().sum::<f64>();
    for (k, wk) in w.iter().enumerate() {
        if t < *wk {
            return k;
        }
        t -= wk;
    }
    w.len() - 1
}

/// Deterministic per seed. Treatment is redrawn within a school until both
/// arms appear.
pub fn make_ecls_fixture(seed: u64) -> MultilevelDataset {
    let mut rng = SeedStream::new(seed).rng("fixture", 0);
    let size = Uniform::new(2.0f64, 31.0).expect("valid size range");
    let mut raw = Vec::new();
    for h in 0..FIXTURE_CLUSTERS {
        let n = size.sample(&mut rng).floor() as usize;
        let eta: f64 = StandardNormal.sample(&mut rng);
        let region = softmax_draw(&mut rng, &REGION_SLOPE, eta);
        let locale = softmax_draw(&mut rng, &LOCALE_SLOPE, eta);
        let school: f64 = StandardNormal.sample(&mut rng);
        let kids: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let female = (rng.random::<f64>() < 0.5) as u8 as f64;
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let ses = 0.4 * eta + z1;
                (female, ses, 0.5 * ses + z2)
            })
            .collect();
        let e: Vec<f64> = kids
            .iter()
            .map(|&(female, ses, pretest)| {
                let lin = 0.9 * eta
                    + REGION_EFFECT[region]
                    + LOCALE_EFFECT[locale]
                    + 0.3 * ses
                    + 0.2 * pretest
                    - 0.1 * female;
                logistic(lin).clamp(0.05, 0.95)
            })
            .collect();
        let z = loop {
            let z: Vec<bool> = e.iter().map(|&p| rng.random::<f64>() < p).collect();
            if z.iter().any(|&t| t) && z.iter().any(|&t| !t) {
                break z;
            }
        };
        for (i, &(female, ses, pretest)) in kids.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let y = 0.5 * z[i] as u8 as f64
                + 0.6 * pretest
                + 0.3 * ses
                + 0.1 * female
                + 0.3 * eta
                + 0.2 * REGION_EFFECT[region]
                + 0.5 * school
                + eps;
            raw.push(RawRow {
                cluster_id: format!("s{h:03}"),
                treatment: z[i] as u8 as f64,
                outcome: y,
                x: vec![female, ses, pretest],
                v: vec![region as f64, locale as f64],
            });
        }
    }
    validate_dataset(raw, individual_covariates(), cluster_covariates()).expect("fixture rows are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::summarize_clusters;

    #[test]
    fn shape_and_mixing() {
        let ds = make_ecls_fixture(11);
        assert_eq!(ds.n_clusters(), FIXTURE_CLUSTERS);
        let s = summarize_clusters(&ds);
        assert!(s.iter().all(|c| c.is_mixed()));
        assert!(s.iter().all(|c| (2..=30).contains(&c.n)));
        assert_eq!(ds, make_ecls_fixture(11));
        assert_ne!(ds, make_ecls_fixture(12));
    }

    #[test]
    fn levels_in_range() {
        let ds = make_ecls_fixture(3);
        let r = ds.column("region").unwrap();
        let l = ds.column("locale").unwrap();
        for i in 0..ds.n() {
            let rv = ds.value(i, r);
            let lv = ds.value(i, l);
            assert!(rv.fract() == 0.0 && (0.0..4.0).contains(&rv));
            assert!(lv.fract() == 0.0 && (0.0..3.0).contains(&lv));
        }
    }
}
