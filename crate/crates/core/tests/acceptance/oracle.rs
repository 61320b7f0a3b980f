//! Reference evaluations in 256-bit floating point.

use std::cell::RefCell;

use astro_float::{BigFloat, Consts, RoundingMode};

const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CC: RefCell<Consts> = RefCell::new(Consts::new().expect("constants cache"));
}

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, P)
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal rendering parses")
}

/// `ln Σ exp(x)` without any shifting.
fn lse(xs: &[f64]) -> BigFloat {
    CC.with(|cc| {
        let cc = &mut cc.borrow_mut();
        let sum = xs
            .iter()
            .fold(BigFloat::from_f64(0.0, P), |acc, &x| acc.add(&big(x).exp(P, RM, cc), P, RM));
        sum.ln(P, RM, cc)
    })
}

pub fn ln(x: f64) -> f64 {
    CC.with(|cc| to_f64(&big(x).ln(P, RM, &mut cc.borrow_mut())))
}

pub fn contrastive(sim_pos: f64, negs: &[f64]) -> f64 {
    let mut all = vec![sim_pos];
    all.extend_from_slice(negs);
    to_f64(&lse(&all).sub(&big(sim_pos), P, RM))
}

pub fn ranking(logits: &[f64], positives: &[usize]) -> f64 {
    let z = lse(logits);
    let total = positives
        .iter()
        .fold(BigFloat::from_f64(0.0, P), |acc, &i| acc.add(&z.sub(&big(logits[i]), P, RM), P, RM));
    to_f64(&total)
}

/// Sequence negative log-likelihood from per-step vocabulary logits.
pub fn generation(steps: &[(Vec<f64>, usize)]) -> f64 {
    let total = steps.iter().fold(BigFloat::from_f64(0.0, P), |acc, (logits, gold)| {
        acc.add(&lse(logits).sub(&big(logits[*gold]), P, RM), P, RM)
    });
    to_f64(&total)
}
