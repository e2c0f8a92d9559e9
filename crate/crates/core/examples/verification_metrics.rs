//! Equal error rate, thresholded accuracy, the FAR/FRR curve and the overlap
//! of per-modality errors, computed on hand-made distance scores. Lower
//! scores mean "same person"; a trial is accepted when its score is at most
//! the threshold.
//!
//! ```text
//! cargo run --release --example verification_metrics
//! ```

use trimodal_verify::evaluation::{
    compute_accuracy, compute_eer, decision_errors, error_overlap, far_frr_curve, Decisions,
};
use trimodal_verify::types::{GenderPair, Modality};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let is_target = [true, true, true, true, false, false, false, false];
    let pairs = [
        GenderPair::Same,
        GenderPair::Opposite,
        GenderPair::Same,
        GenderPair::Same,
        GenderPair::Same,
        GenderPair::Opposite,
        GenderPair::Same,
        GenderPair::Opposite,
    ];
    let audio = [0.20, 0.35, 0.90, 0.40, 1.10, 1.30, 0.30, 1.25];
    let visual = [0.10, 0.95, 0.25, 0.30, 1.20, 0.40, 1.05, 1.40];
    let thermal = [0.50, 0.45, 0.85, 0.60, 0.55, 1.20, 1.10, 0.95];

    let labelled = |s: &[f64]| s.iter().copied().zip(is_target).collect::<Vec<_>>();
    let eer = compute_eer(&labelled(&audio))?;
    println!("audio EER {:.1}% at threshold {:.3}", 100.0 * eer.eer, eer.threshold);
    println!("audio FAR/FRR curve:");
    for p in far_frr_curve(&labelled(&audio))? {
        println!("  threshold {:>6.3}  FAR {:.2}  FRR {:.2}", p.threshold, p.far, p.frr);
    }
    let acc = compute_accuracy(&audio, &is_target, eer.threshold, &pairs)?;
    println!(
        "audio accuracy {:.1}% (same group {:.1}%, opposite group {:.1}%)",
        100.0 * acc.overall,
        100.0 * acc.same_gender.unwrap_or(f64::NAN),
        100.0 * acc.opposite_gender.unwrap_or(f64::NAN)
    );

    // Each modality errs on a different subset of trials.
    let trials: Vec<(String, String)> = (0..is_target.len()).map(|k| (format!("e{k}"), format!("t{k}"))).collect();
    let decisions = |modality: Modality, scores: &[f64]| -> Result<Decisions, Box<dyn std::error::Error>> {
        let threshold = compute_eer(&labelled(scores))?.threshold;
        Ok(Decisions {
            modality,
            threshold,
            trials: trials.clone(),
            errors: decision_errors(scores, &is_target, threshold)?,
        })
    };
    let a = decisions(Modality::Audio, &audio)?;
    let v = decisions(Modality::Visual, &visual)?;
    let t = decisions(Modality::Thermal, &thermal)?;
    let overlap = error_overlap(&a, &v, &t)?;
    println!("errors: audio {}, visual {}, thermal {}", overlap.a, overlap.v, overlap.t);
    println!("shared: A∩V {}, A∩T {}, V∩T {}, all three {}", overlap.av, overlap.at, overlap.vt, overlap.avt);
    println!("{} of {} trials are wrong in at least one modality", overlap.union(), is_target.len());
    println!("{:?}", overlap.regions());
    Ok(())
}
