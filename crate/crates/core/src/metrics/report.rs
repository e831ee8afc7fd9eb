use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::bvh::{mesh_index, Bvh};
use crate::error::{arg_err, Result};
use crate::shapes::TriangleMesh;
use crate::Point;

pub const DEFAULT_RECALL_THRESHOLD: f64 = 0.1;

/// Distance from every GT point to the reconstructed surface.
pub fn surface_distances(gt: &[Point], recon: &TriangleMesh) -> Result<Vec<f64>> {
    if gt.is_empty() {
        return Err(arg_err!("ground-truth point set is empty"));
    }
    let index = mesh_index(recon);
    Ok(gt.iter().map(|&p| index.nearest_sq(p).sqrt()).collect())
}

/// Mean point-to-surface distance; `+∞` for an empty mesh.
pub fn acd(gt: &[Point], recon: &TriangleMesh) -> Result<f64> {
    let d = surface_distances(gt, recon)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Mean squared point-to-surface distance.
pub fn acd_squared(gt: &[Point], recon: &TriangleMesh) -> Result<f64> {
    let d = surface_distances(gt, recon)?;
    Ok(d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64)
}

/// Fraction of GT points within `t` of the surface, ties included.
pub fn recall(gt: &[Point], recon: &TriangleMesh, t: f64) -> Result<f64> {
    let d = surface_distances(gt, recon)?;
    Ok(recall_of(&d, t))
}

fn recall_of(d: &[f64], t: f64) -> f64 {
    d.iter().filter(|&&v| v <= t).count() as f64 / d.len() as f64
}

/// ACD against `samples` points drawn from the mesh surface instead of the
/// surface itself; always at least [`acd`] up to sampling.
pub fn acd_point_sampled(gt: &[Point], recon: &TriangleMesh, samples: usize, seed: u64) -> Result<f64> {
    if gt.is_empty() {
        return Err(arg_err!("ground-truth point set is empty"));
    }
    let index = Bvh::new(recon.sample_surface(samples, seed));
    Ok(gt.iter().map(|&p| index.nearest_sq(p).sqrt()).sum::<f64>() / gt.len() as f64)
}

fn ser_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Metrics of one reconstructed object. An empty reconstruction has
/// `acd = +∞` (null in JSON) and recall 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub object: String,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub acd: f64,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub acd_squared: f64,
    pub recall: f64,
    pub threshold: f64,
    pub empty: bool,
}

pub fn evaluate_object(object: impl Into<String>, gt: &[Point], recon: &TriangleMesh, t: f64) -> Result<ObjectMetrics> {
    let d = surface_distances(gt, recon)?;
    let n = d.len() as f64;
    Ok(ObjectMetrics {
        object: object.into(),
        acd: d.iter().sum::<f64>() / n,
        acd_squared: d.iter().map(|v| v * v).sum::<f64>() / n,
        recall: recall_of(&d, t),
        threshold: t,
        empty: recon.is_empty(),
    })
}

/// Per-object metrics and their means over non-empty reconstructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub objects: Vec<ObjectMetrics>,
    /// Multiplies every length when exported, e.g. to millimetres.
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_acd: f64,
    pub mean_acd_squared: f64,
    pub mean_recall: f64,
    pub evaluated: usize,
    pub empty: usize,
}

impl MetricReport {
    pub fn new(objects: Vec<ObjectMetrics>) -> Self {
        Self { objects, scale: 1.0 }
    }

    pub fn summary(&self) -> Summary {
        let ok: Vec<&ObjectMetrics> = self.objects.iter().filter(|o| !o.empty).collect();
        let n = ok.len() as f64;
        let mean = |f: fn(&ObjectMetrics) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|o| f(o)).sum::<f64>() / n
            }
        };
        Summary {
            mean_acd: mean(|o| o.acd) * self.scale,
            mean_acd_squared: mean(|o| o.acd_squared) * self.scale * self.scale,
            mean_recall: mean(|o| o.recall),
            evaluated: ok.len(),
            empty: self.objects.len() - ok.len(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("object,acd,acd_squared,recall,threshold,empty\n");
        for o in &self.objects {
            s.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{}\n",
                o.object,
                o.acd * self.scale,
                o.acd_squared * self.scale * self.scale,
                o.recall,
                o.threshold * self.scale,
                o.empty
            ));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            report: &'a MetricReport,
            summary: SummaryJson,
        }
        #[derive(Serialize)]
        struct SummaryJson {
            mean_acd: Option<f64>,
            mean_acd_squared: Option<f64>,
            mean_recall: Option<f64>,
            evaluated: usize,
            empty: usize,
        }
        let s = self.summary();
        let fin = |v: f64| v.is_finite().then_some(v);
        Ok(serde_json::to_string_pretty(&Out {
            report: self,
            summary: SummaryJson {
                mean_acd: fin(s.mean_acd),
                mean_acd_squared: fin(s.mean_acd_squared),
                mean_recall: fin(s.mean_recall),
                evaluated: s.evaluated,
                empty: s.empty,
            },
        })?)
    }
}

/// Cumulative views of a set of objects, non-empty reconstructions only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// `(k, mean ACD of the k best objects)` for k = 1..=n.
    pub acd: Vec<(usize, f64)>,
    /// `(r, fraction of objects with recall ≥ r)` at every attained recall.
    pub recall: Vec<(f64, f64)>,
}

impl Curves {
    pub fn to_csv(&self) -> (String, String) {
        let mut a = String::from("k,mean_acd\n");
        for (k, v) in &self.acd {
            a.push_str(&format!("{k},{v:?}\n"));
        }
        let mut r = String::from("recall,fraction\n");
        for (k, v) in &self.recall {
            r.push_str(&format!("{k:?},{v:?}\n"));
        }
        (a, r)
    }
}

pub fn cumulative_curves(objects: &[ObjectMetrics]) -> Curves {
    let mut acds: Vec<f64> = objects.iter().filter(|o| !o.empty).map(|o| o.acd).collect();
    acds.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    let acd = acds
        .iter()
        .enumerate()
        .map(|(i, v)| {
            acc += v;
            (i + 1, acc / (i + 1) as f64)
        })
        .collect();
    let mut recalls: Vec<f64> = objects.iter().filter(|o| !o.empty).map(|o| o.recall).collect();
    recalls.sort_by(|a, b| b.total_cmp(a));
    let n = recalls.len() as f64;
    let mut recall: Vec<(f64, f64)> = Vec::new();
    for (i, r) in recalls.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match recall.last_mut() {
            Some(last) if last.0 == *r => last.1 = frac,
            _ => recall.push((*r, frac)),
        }
    }
    Curves { acd, recall }
}
