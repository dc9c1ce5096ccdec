//! Entropy-maximizing affine warp of one bundled digit under a quickly
//! trained classifier.

use std::path::Path;

use lada::classifier::MlpClassifier;
use lada::data::load_idx;
use lada::rng::{stream, Purpose};
use lada::stn::{stn_acquisition_score, train_stn_policy, AffineParams, StnTraining};

fn show(img: &[f64], w: usize) {
    for row in img.chunks(w) {
        let line: String = row
            .iter()
            .map(|v| match (v * 4.0) as usize {
                0 => ' ',
                1 => '.',
                2 => ':',
                3 => '+',
                _ => '#',
            })
            .collect();
        println!("  |{line}|");
    }
}

fn main() -> lada::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let ds = load_idx(
        &data.join("digits-2000-images.idx3-ubyte"),
        &data.join("digits-2000-labels.idx1-ubyte"),
        Some(600),
    )?;
    let shape = ds.image_shape().expect("idx images have a shape");
    let mut rng = stream(0, 0, Purpose::Train, 0);
    let mut clf = MlpClassifier::new(&[64, 64, 10], 0.0, &mut stream(0, 0, Purpose::Init, 0))?;
    let batch = lada::classifier::LabeledBatch {
        x: ds.features.clone(),
        y: ds.labels.clone(),
    };
    for _ in 0..15 {
        clf.train_epoch(&batch, &[], 0.05, &mut rng)?;
    }

    let img = lada::autodiff::Tensor::from_rows(&[ds.features.row_slice(0)])?;
    let out = train_stn_policy(&clf, &img, shape, &StnTraining::default())?;
    let theta = out.theta[0];
    println!("label {}, θ = {:?}", ds.labels[0], theta.0);
    println!(
        "score identity {:.4}, learned {:.4}",
        stn_acquisition_score(&clf, img.data(), shape, &AffineParams::identity())?,
        stn_acquisition_score(&clf, img.data(), shape, &theta)?
    );
    println!("original:");
    show(img.data(), shape.width);
    println!("warped:");
    show(out.warped.row_slice(0), shape.width);
    Ok(())
}
