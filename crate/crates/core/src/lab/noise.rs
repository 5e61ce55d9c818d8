//! Band-limited data noise calibrated in the data norms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::LabError;
use crate::fdgrid::{norm, Norm, SemiDiscreteField};
use crate::forward::TransformedData;

/// Highest mode index per coordinate.
const MODES: usize = 3;

/// Noise level relative to `δ`; keeps the data error strictly below `δ`.
pub const NOISE_FRACTION: f64 = 0.9;

/// Sum of products of cosines with Gaussian amplitudes decaying like
/// `1 / (1 + |k|)` and uniform phases, sampled where `keep(i, j)` holds and
/// zero elsewhere.
fn smooth_noise(
    template: &SemiDiscreteField<f64>,
    rng: &mut ChaCha8Rng,
    keep: impl Fn(usize, usize) -> bool,
) -> SemiDiscreteField<f64> {
    let g = &template.grid;
    let shape = template.data.shape().to_vec();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let span = 2.0 * g.half_width;
    // Unit coordinates per axis; collapsed axes sit at zero.
    let coords: [Vec<f64>; 4] = [
        (0..shape[0]).map(|i| (g.x(i) + g.half_width) / span).collect(),
        (0..shape[1]).map(|j| (g.x(j) + g.half_width) / span).collect(),
        (0..shape[2]).map(|k| if shape[2] == 1 { 0.0 } else { g.z(k) }).collect(),
        (0..shape[3]).map(|m| if shape[3] == 1 { 0.0 } else { g.t(m) / g.t_horizon }).collect(),
    ];
    let mut out = template.map(|_| 0.0);
    for a in 0..=MODES {
        for b in 0..=MODES {
            for c in 0..=MODES {
                for d in 0..=MODES {
                    let amp = normal.sample(rng) / (1.0 + (a + b + c + d) as f64);
                    let ks = [a, b, c, d];
                    let table: Vec<Vec<f64>> = (0..4)
                        .map(|q| {
                            let phase = 2.0 * PI * rng.gen::<f64>();
                            coords[q].iter().map(|u| (PI * ks[q] as f64 * u + phase).cos()).collect()
                        })
                        .collect();
                    for ((i, j, k, m), v) in out.data.indexed_iter_mut() {
                        *v += amp * table[0][i] * table[1][j] * table[2][k] * table[3][m];
                    }
                }
            }
        }
    }
    for ((i, j, _, _), v) in out.data.indexed_iter_mut() {
        if !keep(i, j) {
            *v = 0.0;
        }
    }
    out
}

fn rescale(mut f: SemiDiscreteField<f64>, which: Norm, target: f64) -> Result<SemiDiscreteField<f64>, LabError> {
    let current = norm(&f, which)?;
    f.data.mapv_inplace(|v| v * target / current);
    Ok(f)
}

/// The three perturbations for `(δ, seed)`: `g̃0` with `H1h(Γ)` norm,
/// `g̃1` with `L2h(Γ)` norm and `g̃2` with `L2h(Θ)` norm all equal to
/// `0.9 δ`. Each field has its own ChaCha stream.
pub fn noise_fields(
    data: &TransformedData<f64>,
    delta: f64,
    seed: u64,
) -> Result<[SemiDiscreteField<f64>; 3], LabError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LabError::InvalidKey {
            key: "sweep.deltas".into(),
            reason: format!("delta = {delta} is outside (0, 1)"),
        });
    }
    let g = data.g0.grid;
    let target = NOISE_FRACTION * delta;
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        rng
    };
    let interior = |i, j| g.is_interior(i, j);
    let lateral = |i, j| !g.is_interior(i, j);
    Ok([
        rescale(smooth_noise(&data.g0, &mut stream(0), interior), Norm::H1hGamma, target)?,
        rescale(smooth_noise(&data.g1, &mut stream(1), interior), Norm::L2hGamma, target)?,
        rescale(smooth_noise(&data.g2, &mut stream(2), lateral), Norm::L2hTheta, target)?,
    ])
}

/// Adds the calibrated perturbations to `g0`, `g1`, `g2`. `w` is left as is.
pub fn inject_noise(data: &TransformedData<f64>, delta: f64, seed: u64) -> Result<TransformedData<f64>, LabError> {
    let [n0, n1, n2] = noise_fields(data, delta, seed)?;
    let mut out = data.clone();
    out.g0.data += &n0.data;
    out.g1.data += &n1.data;
    out.g2.data += &n2.data;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdgrid::{Domain, GridSpec};

    fn synthetic() -> TransformedData<f64> {
        let g = GridSpec::<f64>::desk(5.4, 1.8);
        let w = SemiDiscreteField::from_fn(&g, Domain::Q, |_, _, z, t| 0.5 + 0.01 * z * t);
        TransformedData {
            g0: w.gamma_trace().unwrap(),
            g1: SemiDiscreteField::zeros(&g, Domain::Gamma),
            g2: w.theta_trace().unwrap(),
            w,
            t1: 5.4,
        }
    }

    fn diff(a: &TransformedData<f64>, b: &TransformedData<f64>) -> [SemiDiscreteField<f64>; 3] {
        let d = |x: &SemiDiscreteField<f64>, y: &SemiDiscreteField<f64>| {
            let mut o = x.clone();
            o.data -= &y.data;
            o
        };
        [d(&a.g0, &b.g0), d(&a.g1, &b.g1), d(&a.g2, &b.g2)]
    }

    #[test]
    fn norms_hit_the_target() {
        let data = synthetic();
        for &delta in &[0.1, 1e-4] {
            let noisy = inject_noise(&data, delta, 11).unwrap();
            let [a, b, c] = diff(&noisy, &data);
            let t = 0.9 * delta;
            assert!((norm(&a, Norm::H1hGamma).unwrap() - t).abs() < 1e-10);
            assert!((norm(&b, Norm::L2hGamma).unwrap() - t).abs() < 1e-10);
            assert!((norm(&c, Norm::L2hTheta).unwrap() - t).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_stable_and_seeds_differ() {
        let data = synthetic();
        let a = noise_fields(&data, 0.01, 5).unwrap();
        let b = noise_fields(&data, 0.01, 5).unwrap();
        let c = noise_fields(&data, 0.01, 6).unwrap();
        for q in 0..3 {
            assert!(a[q].data.iter().zip(b[q].data.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            let gap = (&a[q].data - &c[q].data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(gap > 1e-6);
        }
    }

    #[test]
    fn perturbation_lives_on_the_measured_nodes() {
        let data = synthetic();
        let [a, _, c] = noise_fields(&data, 0.5, 2).unwrap();
        let g = data.g0.grid;
        for ((i, j, _, _), &v) in a.data.indexed_iter() {
            if !g.is_interior(i, j) {
                assert_eq!(v, 0.0);
            }
        }
        for ((i, j, _, _), &v) in c.data.indexed_iter() {
            if g.is_interior(i, j) {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn delta_outside_unit_interval_is_rejected() {
        assert!(inject_noise(&synthetic(), 1.0, 1).is_err());
        assert!(inject_noise(&synthetic(), 0.0, 1).is_err());
    }
}
