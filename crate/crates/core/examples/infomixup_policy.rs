//! Learning τ for one pair on a two-class toy network whose mixed logit gap
//! is linear in λ. The learned τ should sit near the best point of a grid
//! search over the exact objective.

use lada::policy::{train_policy, PolicyGenerator, PolicyTraining};
use lada::rng::{stream, Purpose};
use lada::verify::{toy_classifier, toy_grid_max, toy_objective, toy_pair};

fn main() -> lada::Result<()> {
    let clf = toy_classifier();
    let (h_i, h_j) = toy_pair();
    let mut policy = PolicyGenerator::new(1, 16, &mut stream(0, 0, Purpose::Init, 0))?;
    let tau0 = policy.infer_tau(h_i.data(), h_j.data())?;
    println!("initial τ = {tau0:.4}, E[H] = {:.5}", toy_objective(tau0));

    let settings = PolicyTraining {
        steps: 200,
        lr: 0.05,
        samples: 512,
        ..PolicyTraining::default()
    };
    let out = train_policy(&mut policy, &clf, &h_i, &h_j, 1, &settings, &mut stream(0, 0, Purpose::Policy, 0))?;
    for (s, l) in out.loss_trace.iter().enumerate().step_by(40) {
        println!("step {s:>3}: loss {l:+.5}");
    }
    let tau = out.tau_star[0];
    let (grid_tau, grid_best) = toy_grid_max();
    println!("learned τ* = {tau:.4}, E[H] = {:.5}", toy_objective(tau));
    println!("grid best τ = {grid_tau:.4}, E[H] = {grid_best:.5}");
    Ok(())
}
