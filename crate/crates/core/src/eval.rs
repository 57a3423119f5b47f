//! Test-set evaluation: network predictions, optional ICP refinement and
//! the aggregated results report.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::icp::{icp_refine, IcpConfig, IcpStop};
use crate::metrics::{
    accuracy_at_threshold, ad_errors, ads_errors, auc, occlusion_binned_report, EvalRecord, OcclusionBin,
    AUC_MAX_THRESHOLD, CM_THRESHOLD,
};
use crate::pose::Pose;
use crate::posenet::{predict_all, segments_of, NetConfig, PoseNet};
use crate::so3::geodesic_distance;

/// Rotation error threshold of the rotation accuracy, degrees.
pub const ROTATION_THRESHOLD_DEG: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub ad_auc: f64,
    pub ads_auc: f64,
    /// Percentage of samples with ADS below 1 cm.
    pub ads_below_1cm: f64,
    /// Percentage of samples with rotation error below 10°.
    pub rotation_accuracy: f64,
    pub mean_rotation_error_deg: f64,
    pub mean_translation_error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class_id: usize,
    pub name: String,
    #[serde(flatten)]
    pub metrics: MetricSummary,
}

/// Pooled figures treat every sample alike; `mean_of_classes` averages the
/// per-class figures with equal class weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub pooled: MetricSummary,
    pub mean_of_classes: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleErrors {
    pub index: usize,
    pub class_id: usize,
    pub ad: f64,
    pub ads: f64,
    pub rotation_error_deg: f64,
    pub translation_error_m: f64,
    pub occlusion: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icp_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub predict_s: f64,
    pub icp_s: f64,
    pub metrics_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub net: NetConfig,
    pub icp: Option<IcpConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsReport {
    pub per_class: Vec<ClassSummary>,
    pub overall: Overall,
    pub occlusion_bins: Vec<OcclusionBin>,
    pub raw_errors: Vec<SampleErrors>,
    pub config: ConfigEcho,
    pub timings: Timings,
}

/// Summary of a set of per-sample errors. AD and ADS in meters, rotation
/// errors in radians.
pub fn summarize(ad: &[f64], ads: &[f64], rot: &[f64], trans: &[f64]) -> Result<MetricSummary> {
    let n = ad.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no samples to summarize".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricSummary {
        count: n,
        ad_auc: auc(ad, AUC_MAX_THRESHOLD)?,
        ads_auc: auc(ads, AUC_MAX_THRESHOLD)?,
        ads_below_1cm: 100.0 * accuracy_at_threshold(ads, CM_THRESHOLD)?,
        rotation_accuracy: 100.0 * accuracy_at_threshold(rot, ROTATION_THRESHOLD_DEG.to_radians())?,
        mean_rotation_error_deg: mean(rot).to_degrees(),
        mean_translation_error_mm: 1000.0 * mean(trans),
    })
}

fn mean_of(classes: &[ClassSummary]) -> MetricSummary {
    let k = classes.len() as f64;
    let avg = |f: fn(&MetricSummary) -> f64| classes.iter().map(|c| f(&c.metrics)).sum::<f64>() / k;
    MetricSummary {
        count: classes.iter().map(|c| c.metrics.count).sum(),
        ad_auc: avg(|m| m.ad_auc),
        ads_auc: avg(|m| m.ads_auc),
        ads_below_1cm: avg(|m| m.ads_below_1cm),
        rotation_accuracy: avg(|m| m.rotation_accuracy),
        mean_rotation_error_deg: avg(|m| m.mean_rotation_error_deg),
        mean_translation_error_mm: avg(|m| m.mean_translation_error_mm),
    }
}

/// Scores pose estimates against the ground truth of `dataset`.
pub fn evaluate_poses(
    dataset: &Dataset,
    estimates: &[Pose],
    icp_iterations: Option<&[usize]>,
    config: ConfigEcho,
    mut timings: Timings,
) -> Result<ResultsReport> {
    if estimates.len() != dataset.samples.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} samples",
            estimates.len(),
            dataset.samples.len()
        )));
    }
    let start = Instant::now();
    let records = dataset
        .samples
        .iter()
        .zip(estimates)
        .map(|(s, est)| EvalRecord::new(s.class_id, s.gt, *est, s.occlusion))
        .collect::<Result<Vec<_>>>()?;
    let ad = ad_errors(&records, &dataset.models)?;
    let ads = ads_errors(&records, &dataset.models)?;
    let rot: Vec<f64> = records
        .iter()
        .map(|r| geodesic_distance(&r.gt.rotation_matrix(), &r.est.rotation_matrix()))
        .collect();
    let trans: Vec<f64> = records.iter().map(|r| (r.gt.translation - r.est.translation).norm()).collect();

    let names = dataset.class_names();
    let mut per_class = Vec::new();
    for (class_id, name) in names.iter().enumerate() {
        let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].class_id == class_id).collect();
        if idx.is_empty() {
            continue;
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        per_class.push(ClassSummary {
            class_id,
            name: name.clone(),
            metrics: summarize(&pick(&ad), &pick(&ads), &pick(&rot), &pick(&trans))?,
        });
    }
    let overall = Overall {
        pooled: summarize(&ad, &ads, &rot, &trans)?,
        mean_of_classes: mean_of(&per_class),
    };
    let occlusion_bins = occlusion_binned_report(&records, &ads, CM_THRESHOLD)?;
    let raw_errors = records
        .iter()
        .enumerate()
        .map(|(i, r)| SampleErrors {
            index: i,
            class_id: r.class_id,
            ad: ad[i],
            ads: ads[i],
            rotation_error_deg: rot[i].to_degrees(),
            translation_error_m: trans[i],
            occlusion: r.occlusion,
            icp_iterations: icp_iterations.map(|it| it[i]),
        })
        .collect();
    timings.metrics_s = start.elapsed().as_secs_f64();
    Ok(ResultsReport {
        per_class,
        overall,
        occlusion_bins,
        raw_errors,
        config,
        timings,
    })
}

/// Refines every estimate with ICP against the sample's class model. A
/// degenerate or failed refinement keeps the network estimate.
pub fn refine_all(dataset: &Dataset, estimates: &[Pose], cfg: &IcpConfig) -> Result<(Vec<Pose>, Vec<usize>)> {
    cfg.validate()?;
    let mut poses = Vec::with_capacity(estimates.len());
    let mut iterations = Vec::with_capacity(estimates.len());
    for (s, est) in dataset.samples.iter().zip(estimates) {
        let model = &dataset.models[s.class_id];
        match icp_refine(model, &s.segment, *est, cfg) {
            Ok(r) if r.stop != IcpStop::Degenerate => {
                iterations.push(r.iterations.len());
                poses.push(r.pose);
            }
            Ok(_) | Err(Error::Degenerate(_)) => {
                iterations.push(0);
                poses.push(*est);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((poses, iterations))
}

/// Predicts every test sample, optionally refines with ICP, and scores.
pub fn evaluate(net: &PoseNet, dataset: &Dataset, icp: Option<&IcpConfig>, batch_size: usize) -> Result<ResultsReport> {
    if dataset.n_classes() != net.config.n_classes {
        return Err(Error::InvalidArgument(format!(
            "network expects {} classes, dataset has {}",
            net.config.n_classes,
            dataset.n_classes()
        )));
    }
    let start = Instant::now();
    let segments = segments_of(&dataset.samples, net.config.n_classes)?;
    let predictions = predict_all(net, &segments, batch_size)?;
    let predict_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (estimates, iterations) = match icp {
        Some(cfg) => {
            let (p, it) = refine_all(dataset, &predictions, cfg)?;
            (p, Some(it))
        }
        None => (predictions, None),
    };
    let icp_s = start.elapsed().as_secs_f64();
    evaluate_poses(
        dataset,
        &estimates,
        iterations.as_deref(),
        ConfigEcho {
            net: net.config.clone(),
            icp: icp.cloned(),
        },
        Timings {
            predict_s,
            icp_s,
            metrics_s: 0.0,
        },
    )
}

impl ResultsReport {
    /// Human-readable tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let header = format!(
            "{:<16} {:>6} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9}\n",
            "class", "n", "AD-AUC", "ADS-AUC", "<1cm", "rot<10", "rot(deg)", "t(mm)"
        );
        let row = |name: &str, m: &MetricSummary| {
            format!(
                "{:<16} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>9.2} {:>9.2}\n",
                name,
                m.count,
                m.ad_auc,
                m.ads_auc,
                m.ads_below_1cm,
                m.rotation_accuracy,
                m.mean_rotation_error_deg,
                m.mean_translation_error_mm
            )
        };
        s.push_str(&header);
        for c in &self.per_class {
            s.push_str(&row(&c.name, &c.metrics));
        }
        s.push_str(&row("ALL (pooled)", &self.overall.pooled));
        s.push_str(&row("ALL (class mean)", &self.overall.mean_of_classes));
        s.push_str("\nocclusion        n  ADS<1cm\n");
        for b in &self.occlusion_bins {
            let acc = b.accuracy.map_or("-".to_string(), |a| format!("{:.2}", 100.0 * a));
            s.push_str(&format!("[{:.1}, {:.1})  {:>6} {:>8}\n", b.lower, b.upper, b.count, acc));
        }
        s.push_str(&format!(
            "\ntime predict={:.2}s icp={:.2}s metrics={:.2}s\n",
            self.timings.predict_s, self.timings.icp_s, self.timings.metrics_s
        ));
        s
    }
}
