//! Bundled 8×8 digits: parse, split, and train a classifier on the full
//! pool to see the accuracy ceiling.

use std::path::Path;

use lada::classifier::{LabeledBatch, MlpClassifier};
use lada::data::{load_idx, split};
use lada::engine::evaluate;
use lada::rng::{stream, Purpose};

fn main() -> lada::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let ds = load_idx(
        &data.join("digits-2000-images.idx3-ubyte"),
        &data.join("digits-2000-labels.idx1-ubyte"),
        None,
    )?;
    println!("{} images of {:?}, class counts {:?}", ds.len(), ds.image_shape(), ds.class_counts());

    let pool = split(ds, 20, 500, true, 0)?;
    let everything: Vec<usize> = pool.labeled().iter().chain(pool.unlabeled()).copied().collect();
    let train = LabeledBatch {
        x: pool.rows(&everything),
        y: everything.iter().map(|&i| pool.hidden_label(i).or(pool.revealed_label(i)).unwrap()).collect(),
    };
    let test = pool.test_batch();
    let mut clf = MlpClassifier::new(&[64, 128, 64, 10], 0.0, &mut stream(0, 0, Purpose::Init, 0))?;
    let mut rng = stream(0, 0, Purpose::Train, 0);
    for epoch in 1..=20 {
        let l = clf.train_epoch(&train, &[], 0.05, &mut rng)?;
        if epoch % 5 == 0 {
            println!("epoch {epoch:>2}: loss {l:.4}, test acc {:.3}", evaluate(&clf, &test)?);
        }
    }
    Ok(())
}
