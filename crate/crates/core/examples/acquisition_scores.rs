//! Entropy, variation ratio and BALD on an untrained dropout network.

use lada::acquisition::{bald_score, entropy_score, var_ratio_score};
use lada::autodiff::Tensor;
use lada::classifier::MlpClassifier;
use lada::data::gen_two_moons;
use lada::rng::{stream, Purpose};

fn main() -> lada::Result<()> {
    let ds = gen_two_moons(8, 0.1, 0)?;
    let mut rng = stream(0, 0, Purpose::Init, 0);
    let clf = MlpClassifier::new(&[2, 32, 2], 0.5, &mut rng)?;
    let p = clf.forward(&ds.features)?;
    println!("{:>3} {:>9} {:>9} {:>9}", "id", "entropy", "varratio", "bald");
    for i in 0..ds.len() {
        let x = Tensor::from_rows(&[ds.features.row_slice(i)])?;
        let draws: Vec<Vec<f64>> = clf
            .mc_dropout_predict(&x, 50, &mut rng)?
            .into_iter()
            .map(|t| t.data().to_vec())
            .collect();
        println!(
            "{i:>3} {:>9.4} {:>9.4} {:>9.4}",
            entropy_score(p.row_slice(i))?,
            var_ratio_score(p.row_slice(i))?,
            bald_score(&draws)?
        );
    }
    Ok(())
}
