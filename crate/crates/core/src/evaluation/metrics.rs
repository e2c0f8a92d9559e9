//! Equal error rate, thresholded accuracy and cross-modality error overlap.
//!
//! Scores are distances: a trial is accepted when `score ≤ threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GenderPair, Modality};

/// Offset of the two outer thresholds beyond the extreme scores.
const EDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

/// One operating point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// False-accept / false-reject rates at every midpoint between distinct
/// sorted scores plus one threshold below and one above all scores, in
/// increasing threshold order. Errors unless both classes are present.
pub fn far_frr_curve(scores: &[(f64, bool)]) -> Result<Vec<OperatingPoint>> {
    let n_target = scores.iter().filter(|s| s.1).count();
    let n_non = scores.len() - n_target;
    if n_target == 0 || n_non == 0 {
        return Err(Error::Insufficient(
            "EER needs at least one target and one nontarget trial".into(),
        ));
    }
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::NonFinite("trial scores".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (n_target as f64, n_non as f64);
    let mut curve = vec![OperatingPoint {
        threshold: sorted[0].0 - EDGE,
        far: 0.0,
        frr: 1.0,
    }];
    let (mut accepted_t, mut accepted_n) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                accepted_t += 1;
            } else {
                accepted_n += 1;
            }
            i += 1;
        }
        let threshold = if i < sorted.len() {
            0.5 * (v + sorted[i].0)
        } else {
            v + EDGE
        };
        curve.push(OperatingPoint {
            threshold,
            far: accepted_n as f64 / nn,
            frr: (nt - accepted_t as f64) / nt,
        });
    }
    Ok(curve)
}

/// Equal error rate and its threshold. `FAR − FRR` is nondecreasing along
/// the sweep; the first point where it reaches zero is taken, interpolating
/// linearly from the previous point when it overshoots.
pub fn compute_eer(scores: &[(f64, bool)]) -> Result<EerResult> {
    let curve = far_frr_curve(scores)?;
    let k = curve
        .iter()
        .position(|p| p.far - p.frr >= 0.0)
        .expect("the last point has FAR = 1, FRR = 0");
    let hi = curve[k];
    let d_hi = hi.far - hi.frr;
    if d_hi == 0.0 || k == 0 {
        return Ok(EerResult {
            eer: hi.far,
            threshold: hi.threshold,
        });
    }
    let lo = curve[k - 1];
    let d_lo = lo.far - lo.frr;
    let frac = -d_lo / (d_hi - d_lo);
    Ok(EerResult {
        eer: lo.far + frac * (hi.far - lo.far),
        threshold: lo.threshold + frac * (hi.threshold - lo.threshold),
    })
}

/// Fraction of correct accept/reject decisions, overall and per gender
/// stratum. A stratum with no trials is `None`, not zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub threshold: f64,
    pub overall: f64,
    pub same_gender: Option<f64>,
    pub opposite_gender: Option<f64>,
    pub n_trials: usize,
    pub n_same: usize,
    pub n_opposite: usize,
}

/// Whether the decision at `threshold` is wrong for each trial.
pub fn decision_errors(scores: &[f64], is_target: &[bool], threshold: f64) -> Result<Vec<bool>> {
    if scores.len() != is_target.len() {
        return Err(Error::shape(scores.len(), is_target.len()));
    }
    Ok(scores
        .iter()
        .zip(is_target)
        .map(|(&s, &t)| (s <= threshold) != t)
        .collect())
}

pub fn compute_accuracy(
    scores: &[f64],
    is_target: &[bool],
    threshold: f64,
    gender_pairs: &[GenderPair],
) -> Result<AccuracyReport> {
    let errors = decision_errors(scores, is_target, threshold)?;
    if gender_pairs.len() != errors.len() {
        return Err(Error::shape(errors.len(), gender_pairs.len()));
    }
    if errors.is_empty() {
        return Err(Error::Insufficient("accuracy over zero trials".into()));
    }
    let rate = |filter: Option<GenderPair>| -> (Option<f64>, usize) {
        let (mut n, mut correct) = (0usize, 0usize);
        for (e, g) in errors.iter().zip(gender_pairs) {
            if filter.map_or(true, |f| f == *g) {
                n += 1;
                correct += usize::from(!e);
            }
        }
        ((n > 0).then(|| correct as f64 / n as f64), n)
    };
    let (overall, n_trials) = rate(None);
    let (same_gender, n_same) = rate(Some(GenderPair::Same));
    let (opposite_gender, n_opposite) = rate(Some(GenderPair::Opposite));
    Ok(AccuracyReport {
        threshold,
        overall: overall.expect("nonempty"),
        same_gender,
        opposite_gender,
        n_trials,
        n_same,
        n_opposite,
    })
}

/// Per-trial errors of one modality at a fixed threshold, keyed by trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions {
    pub modality: Modality,
    pub threshold: f64,
    /// `(enroll, test)` sample ids, one per trial.
    pub trials: Vec<(String, String)>,
    pub errors: Vec<bool>,
}

/// Sizes of the three error sets and of their intersections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorOverlap {
    pub a: usize,
    pub v: usize,
    pub t: usize,
    pub av: usize,
    pub at: usize,
    pub vt: usize,
    pub avt: usize,
}

/// The seven disjoint Venn regions, each counted once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VennRegions {
    pub a_only: usize,
    pub v_only: usize,
    pub t_only: usize,
    pub av_only: usize,
    pub at_only: usize,
    pub vt_only: usize,
    pub avt: usize,
}

impl ErrorOverlap {
    /// `|A ∪ V ∪ T|` by inclusion–exclusion.
    pub fn union(&self) -> usize {
        self.a + self.v + self.t + self.avt - self.av - self.at - self.vt
    }

    pub fn regions(&self) -> VennRegions {
        VennRegions {
            a_only: self.a + self.avt - self.av - self.at,
            v_only: self.v + self.avt - self.av - self.vt,
            t_only: self.t + self.avt - self.at - self.vt,
            av_only: self.av - self.avt,
            at_only: self.at - self.avt,
            vt_only: self.vt - self.avt,
            avt: self.avt,
        }
    }
}

/// Overlap of audio, visual and thermal error sets over one trial list.
pub fn error_overlap(a: &Decisions, v: &Decisions, t: &Decisions) -> Result<ErrorOverlap> {
    for d in [a, v, t] {
        if d.trials.len() != d.errors.len() {
            return Err(Error::shape(d.trials.len(), d.errors.len()));
        }
    }
    if a.trials != v.trials || a.trials != t.trials {
        return Err(Error::invalid("error overlap needs decisions over the same trial list"));
    }
    let mut o = ErrorOverlap {
        a: 0,
        v: 0,
        t: 0,
        av: 0,
        at: 0,
        vt: 0,
        avt: 0,
    };
    for k in 0..a.errors.len() {
        let (ea, ev, et) = (a.errors[k], v.errors[k], t.errors[k]);
        o.a += usize::from(ea);
        o.v += usize::from(ev);
        o.t += usize::from(et);
        o.av += usize::from(ea && ev);
        o.at += usize::from(ea && et);
        o.vt += usize::from(ev && et);
        o.avt += usize::from(ea && ev && et);
    }
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn labeled(targets: &[f64], nontargets: &[f64]) -> Vec<(f64, bool)> {
        targets
            .iter()
            .map(|&s| (s, true))
            .chain(nontargets.iter().map(|&s| (s, false)))
            .collect()
    }

    /// Independent sweep: FAR/FRR recounted from scratch at each midpoint.
    fn brute_force_eer(scores: &[(f64, bool)]) -> (f64, f64) {
        let mut values: Vec<f64> = scores.iter().map(|s| s.0).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut thresholds = vec![values[0] - EDGE];
        thresholds.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        thresholds.push(values[values.len() - 1] + EDGE);
        let nt = scores.iter().filter(|s| s.1).count() as f64;
        let nn = scores.len() as f64 - nt;
        let rates = |thr: f64| {
            let fa = scores.iter().filter(|s| !s.1 && s.0 <= thr).count() as f64;
            let fr = scores.iter().filter(|s| s.1 && s.0 > thr).count() as f64;
            (fa / nn, fr / nt)
        };
        let mut prev: Option<(f64, f64, f64)> = None;
        for thr in thresholds {
            let (far, frr) = rates(thr);
            if far >= frr {
                return match prev {
                    Some((pt, pfar, pfrr)) if far > frr => {
                        let f = (pfrr - pfar) / ((far - frr) - (pfar - pfrr));
                        (pfar + f * (far - pfar), pt + f * (thr - pt))
                    }
                    _ => (far, thr),
                };
            }
            prev = Some((thr, far, frr));
        }
        unreachable!()
    }

    fn random_scores(rng: &mut impl Rng) -> Vec<(f64, bool)> {
        let n = rng.gen_range(2..=200);
        let mut s: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let target = rng.gen_bool(0.5);
                // Coarse grid values force ties.
                let base = if target { 0.6 } else { 1.0 };
                let v = if rng.gen_bool(0.3) {
                    (rng.gen_range(0..20) as f64) / 10.0
                } else {
                    (base + rng.gen_range(-0.5..0.5f64)).clamp(0.0, 2.0)
                };
                (v, target)
            })
            .collect();
        s[0].1 = true;
        s[1].1 = false;
        s
    }

    #[test]
    fn perfect_separation_is_zero() {
        let r = compute_eer(&labeled(&[0.1, 0.2], &[1.8, 1.9])).unwrap();
        assert_eq!(r.eer, 0.0);
        assert!(r.threshold > 0.2 && r.threshold < 1.8);
    }

    #[test]
    fn interleaved_example() {
        let s = labeled(&[0.2, 0.6], &[0.4, 0.8]);
        let r = compute_eer(&s).unwrap();
        assert!((r.eer - 0.5).abs() < 1e-12);
        assert!((r.threshold - 0.5).abs() < 1e-12);
        let (eer, thr) = brute_force_eer(&s);
        assert!((eer - 0.5).abs() < 1e-12 && (thr - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        assert!(compute_eer(&labeled(&[0.1, 0.2], &[])).is_err());
        assert!(compute_eer(&labeled(&[], &[0.1])).is_err());
        assert!(compute_eer(&[(f64::NAN, true), (0.0, false)]).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = crate::rng::substream(0, &["eer"]);
        for _ in 0..1000 {
            let s = random_scores(&mut rng);
            let r = compute_eer(&s).unwrap();
            let (eer, thr) = brute_force_eer(&s);
            assert!((r.eer - eer).abs() < 1e-9, "{} vs {}", r.eer, eer);
            assert!((r.threshold - thr).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&r.eer));
        }
    }

    #[test]
    fn swapped_labels_with_negated_scores() {
        let mut rng = crate::rng::substream(1, &["eer"]);
        for _ in 0..200 {
            let s = random_scores(&mut rng);
            let flipped: Vec<(f64, bool)> = s.iter().map(|&(v, t)| (-v, !t)).collect();
            let a = compute_eer(&s).unwrap().eer;
            let b = compute_eer(&flipped).unwrap().eer;
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn invariant_under_monotone_maps() {
        let mut rng = crate::rng::substream(2, &["eer"]);
        for _ in 0..100 {
            let s = random_scores(&mut rng);
            // Strictly increasing piecewise-linear map with random knots.
            let mut knots: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..2.0)).collect();
            knots.sort_by(f64::total_cmp);
            let slopes: Vec<f64> = (0..6).map(|_| rng.gen_range(0.1..10.0)).collect();
            let f = |x: f64| {
                let mut y = slopes[0] * x;
                for (k, w) in knots.iter().zip(slopes.windows(2)) {
                    if x > *k {
                        y += (w[1] - w[0]) * (x - k);
                    }
                }
                y
            };
            let mapped: Vec<(f64, bool)> = s.iter().map(|&(v, t)| (f(v), t)).collect();
            let a = compute_eer(&s).unwrap().eer;
            let b = compute_eer(&mapped).unwrap().eer;
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn accuracy_perfect_and_absent_strata() {
        let scores = [0.1, 0.2, 1.8, 1.9];
        let labels = [true, true, false, false];
        let thr = compute_eer(&labeled(&[0.1, 0.2], &[1.8, 1.9])).unwrap().threshold;
        let g = [GenderPair::Same, GenderPair::Same, GenderPair::Opposite, GenderPair::Same];
        let r = compute_accuracy(&scores, &labels, thr, &g).unwrap();
        assert_eq!((r.overall, r.same_gender, r.opposite_gender), (1.0, Some(1.0), Some(1.0)));
        let r = compute_accuracy(&scores, &labels, thr, &[GenderPair::Same; 4]).unwrap();
        assert_eq!(r.opposite_gender, None);
        assert_eq!(r.n_opposite, 0);
        assert!(compute_accuracy(&[], &[], 0.5, &[]).is_err());
    }

    #[test]
    fn accuracy_matches_recount() {
        let mut rng = crate::rng::substream(3, &["acc"]);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..2.0)).collect();
            let labels: Vec<bool> = (0..20).map(|_| rng.gen_bool(0.5)).collect();
            let g: Vec<GenderPair> = (0..20)
                .map(|_| if rng.gen_bool(0.5) { GenderPair::Same } else { GenderPair::Opposite })
                .collect();
            let thr = rng.gen_range(0.0..2.0);
            let r = compute_accuracy(&scores, &labels, thr, &g).unwrap();
            let mut correct = [0.0; 2];
            let mut total = [0.0; 2];
            for i in 0..20 {
                let k = usize::from(g[i] == GenderPair::Opposite);
                total[k] += 1.0;
                let accept = scores[i] <= thr;
                if accept == labels[i] {
                    correct[k] += 1.0;
                }
            }
            assert_eq!(r.overall, (correct[0] + correct[1]) / 20.0);
            assert_eq!(r.same_gender, (total[0] > 0.0).then(|| correct[0] / total[0]));
            assert_eq!(r.opposite_gender, (total[1] > 0.0).then(|| correct[1] / total[1]));
        }
    }

    fn decisions(m: Modality, errors: Vec<bool>) -> Decisions {
        Decisions {
            modality: m,
            threshold: 0.5,
            trials: (0..errors.len()).map(|i| (format!("e{i}"), format!("t{i}"))).collect(),
            errors,
        }
    }

    #[test]
    fn overlap_identical_and_disjoint() {
        let e = vec![true, false, true, true, false];
        let o = error_overlap(
            &decisions(Modality::Audio, e.clone()),
            &decisions(Modality::Visual, e.clone()),
            &decisions(Modality::Thermal, e),
        )
        .unwrap();
        let r = o.regions();
        assert_eq!(r.avt, 3);
        assert_eq!(r.a_only + r.v_only + r.t_only + r.av_only + r.at_only + r.vt_only, 0);
        let o = error_overlap(
            &decisions(Modality::Audio, vec![true, false, false]),
            &decisions(Modality::Visual, vec![false, true, false]),
            &decisions(Modality::Thermal, vec![false, false, true]),
        )
        .unwrap();
        assert_eq!((o.av, o.at, o.vt, o.avt), (0, 0, 0, 0));
        assert_eq!(o.union(), 3);
    }

    #[test]
    fn overlap_rejects_mismatched_lists() {
        let a = decisions(Modality::Audio, vec![true, false]);
        let mut v = decisions(Modality::Visual, vec![true, false]);
        v.trials[1].1 = "other".into();
        assert!(error_overlap(&a, &v, &a).is_err());
        let short = decisions(Modality::Thermal, vec![true]);
        assert!(error_overlap(&a, &a, &short).is_err());
    }

    #[test]
    fn overlap_matches_set_algebra() {
        let mut rng = crate::rng::substream(4, &["venn"]);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=50);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<bool> { (0..n).map(|_| rng.gen_bool(0.3)).collect() };
            let (ea, ev, et) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let o = error_overlap(
                &decisions(Modality::Audio, ea.clone()),
                &decisions(Modality::Visual, ev.clone()),
                &decisions(Modality::Thermal, et.clone()),
            )
            .unwrap();
            let set = |e: &[bool]| -> BTreeSet<usize> { (0..n).filter(|&i| e[i]).collect() };
            let (sa, sv, st) = (set(&ea), set(&ev), set(&et));
            let inter = |x: &BTreeSet<usize>, y: &BTreeSet<usize>| -> BTreeSet<usize> { x.intersection(y).copied().collect() };
            assert_eq!(o.av, inter(&sa, &sv).len());
            assert_eq!(o.avt, inter(&inter(&sa, &sv), &st).len());
            let union: BTreeSet<usize> = sa.union(&sv).chain(st.iter()).copied().collect();
            assert_eq!(o.union(), union.len());
            let r = o.regions();
            assert_eq!(
                r.a_only + r.v_only + r.t_only + r.av_only + r.at_only + r.vt_only + r.avt,
                union.len()
            );
        }
    }
}
