//! Hand-computed and brute-force reference values for the loss functions and
//! the source weight rule.

use rand::Rng;
use ssas::autograd::{Tape, Tensor};
use ssas::losses::{cross_entropy, mdc_loss, mmd_loss};
use ssas::pipeline::{count_weights, SourceWeightVector, MAX_WEIGHT, MIN_WEIGHT};

pub const EXACT: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct OracleCheck {
    pub name: &'static str,
    pub got: Vec<f64>,
    pub want: Vec<f64>,
}

impl OracleCheck {
    fn new(name: &'static str, got: Vec<f64>, want: Vec<f64>) -> Self {
        OracleCheck { name, got, want }
    }

    pub fn deviation(&self) -> f64 {
        if self.got.len() != self.want.len() {
            return f64::INFINITY;
        }
        self.got.iter().zip(&self.want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.deviation() <= EXACT
    }
}

fn mmd(source: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::from_rows(source).unwrap());
    let t = tape.constant(Tensor::from_rows(target).unwrap());
    let v = mmd_loss(&mut tape, s, t).unwrap();
    tape.value(v).item()
}

fn mdc(p_d: &[Vec<f64>], p_f: &[Vec<f64>]) -> f64 {
    let mut tape = Tape::new();
    let d = tape.leaf(Tensor::from_rows(p_d).unwrap());
    let f = tape.constant(Tensor::from_rows(p_f).unwrap());
    let v = mdc_loss(&mut tape, d, f).unwrap();
    tape.value(v).item()
}

fn ce(probs: &[Vec<f64>], labels: &[usize], weights: Option<&[f64]>) -> f64 {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_rows(probs).unwrap());
    let v = cross_entropy(&mut tape, p, labels, weights).unwrap();
    tape.value(v).item()
}

fn simplex(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| -rng.random_range(f64::MIN_POSITIVE..1.0).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

/// Largest mdc value over `pairs` random single-row probability pairs. Half
/// the pairs are near-vertex rows, where the maximum is approached.
pub fn mdc_random_max(pairs: usize, width: usize, seed: u64) -> f64 {
    let mut rng = super::rng(seed);
    let mut worst = 0.0f64;
    for i in 0..pairs {
        let (a, b) = if i % 2 == 0 {
            (simplex(&mut rng, width), simplex(&mut rng, width))
        } else {
            let mut a = vec![0.0; width];
            let mut b = vec![0.0; width];
            a[rng.random_range(0..width)] = 1.0;
            b[rng.random_range(0..width)] = 1.0;
            (a, b)
        };
        worst = worst.max(mdc(&[a], &[b]));
    }
    worst
}

fn weights_of(counts: &[usize]) -> Vec<f64> {
    let ids = (0..counts.len()).collect();
    SourceWeightVector::from_counts(ids, counts.to_vec()).unwrap().weights
}

pub fn loss_oracles() -> Vec<OracleCheck> {
    let (pa, pb) = (0.7f64, 0.2f64);
    let (a, b) = (-pa.ln(), -pb.ln());
    vec![
        OracleCheck::new(
            "mmd of two-point source and target",
            vec![mmd(&[vec![0.0, 0.0], vec![2.0, 0.0]], &[vec![0.0, 0.0], vec![0.0, 2.0]])],
            vec![2.0],
        ),
        OracleCheck::new(
            "mmd of identical batches",
            vec![mmd(&[vec![0.3, -1.0], vec![1.5, 2.0]], &[vec![1.5, 2.0], vec![0.3, -1.0]])],
            vec![0.0],
        ),
        OracleCheck::new("mdc of opposite vertices", vec![mdc(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]])], vec![1.0]),
        OracleCheck::new(
            "mdc averages rows and entries",
            vec![mdc(&[vec![0.5, 0.5], vec![1.0, 0.0]], &[vec![0.25, 0.75], vec![1.0, 0.0]])],
            vec![0.125],
        ),
        OracleCheck::new(
            "cross-entropy of uniform three-class rows",
            vec![ce(&[vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]], &[0, 2], None)],
            vec![3f64.ln()],
        ),
        OracleCheck::new(
            "cross-entropy with sample weights 2 and 1",
            vec![ce(&[vec![pa, 1.0 - pa], vec![1.0 - pb, pb]], &[0, 1], Some(&[2.0, 1.0]))],
            vec![(2.0 * a + b) / 3.0],
        ),
        OracleCheck::new("weights of counts 10, 20, 30", weights_of(&[10, 20, 30]), vec![0.5, 1.25, 2.0]),
        OracleCheck::new("weights of equal counts", weights_of(&[7, 7, 7, 7]), vec![1.0; 4]),
        OracleCheck::new("weights of counts 0, 100", weights_of(&[0, 100]), vec![MIN_WEIGHT, MAX_WEIGHT]),
        OracleCheck::new("weight endpoints", vec![MIN_WEIGHT, MAX_WEIGHT], vec![0.5, 2.0]),
        OracleCheck::new("weight rule on arbitrary bounds", count_weights(&[3, 1, 5], 1.0, 3.0), vec![2.0, 1.0, 3.0]),
    ]
}
