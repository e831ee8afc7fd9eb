use serde::{Deserialize, Serialize};

use crate::pipeline::{SeedResult, Switches, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: Variant,
    pub switches: Switches,
    pub acd: Vec<f64>,
    pub recall: Vec<f64>,
    pub median_acd: f64,
    pub median_recall: f64,
}

/// An expected ordering, evaluated per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub name: String,
    pub description: String,
    pub per_seed: Vec<bool>,
    pub needed: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<TableRow>,
    pub checks: Vec<DirectionCheck>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Seeds that must agree for a direction to hold: two thirds, rounded up.
pub fn seeds_needed(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

pub fn build_table(results: &[SeedResult]) -> AblationTable {
    let rows = Variant::ALL
        .into_iter()
        .map(|v| {
            let acd: Vec<f64> = results.iter().map(|r| r.mean_acd(v)).collect();
            let recall: Vec<f64> = results
                .iter()
                .map(|r| r.variant(v).map_or(f64::NAN, |x| x.mean_recall()))
                .collect();
            TableRow {
                variant: v,
                switches: v.switches(),
                median_acd: median(&acd),
                median_recall: median(&recall),
                acd,
                recall,
            }
        })
        .collect();
    let needed = seeds_needed(results.len());
    let check = |name: &str, description: &str, f: &dyn Fn(&SeedResult) -> bool| {
        let per_seed: Vec<bool> = results.iter().map(f).collect();
        let passed = per_seed.iter().filter(|b| **b).count() >= needed && !per_seed.is_empty();
        DirectionCheck {
            name: name.into(),
            description: description.into(),
            per_seed,
            needed,
            passed,
        }
    };
    let lt = |a: Variant, b: Variant| move |r: &SeedResult| r.mean_acd(a) < r.mean_acd(b);
    let checks = vec![
        check(
            "encoder_init",
            "encoder initialization beats random initialization on mean ACD",
            &lt(Variant::Encoder, Variant::Baseline),
        ),
        check(
            "full_pipeline",
            "encoder + adversarially trained model + regularized optimization beats the baseline",
            &lt(Variant::Full, Variant::Baseline),
        ),
        check(
            "multicode",
            "four fused codes are no worse than one",
            &|r: &SeedResult| r.mean_acd(Variant::Multicode) <= r.mean_acd(Variant::Full),
        ),
        check(
            "finetune",
            "the fine-tuned encoder beats the frozen one on sparse scans",
            &lt(Variant::Finetuned, Variant::Frozen),
        ),
        check(
            "instability",
            "baseline seeds disagree beyond 5x the floor while regularized runs stay within it",
            &|r: &SeedResult| r.instability.baseline_unstable() && r.instability.regularized_stable(),
        ),
        check(
            "code_gap",
            "the median encoder-to-pseudo-code distance falls during stage 2",
            &|r: &SeedResult| r.code_gap.1 < r.code_gap.0,
        ),
    ];
    AblationTable {
        seeds: results.iter().map(|r| r.seed).collect(),
        rows,
        checks,
    }
}

fn mark(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        ""
    }
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| setting | enc. trained | disc. trained | enc. init | disc. in opt. | median ACD | median recall | per-seed ACD |\n",
        );
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let w = r.switches;
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.5} | {:.4} | {} |\n",
                r.variant.name(),
                mark(w.train_encoder),
                mark(w.train_discriminator),
                mark(w.infer_encoder),
                mark(w.infer_discriminator),
                r.median_acd,
                r.median_recall,
                r.acd.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(" / ")
            ));
        }
        s.push('\n');
        for c in &self.checks {
            let hits = c.per_seed.iter().filter(|b| **b).count();
            s.push_str(&format!(
                "- {} {}: {} ({}/{} seeds, need {})\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.description,
                hits,
                c.per_seed.len(),
                c.needed
            ));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,train_encoder,train_discriminator,infer_encoder,infer_discriminator,median_acd,median_recall");
        for seed in &self.seeds {
            s.push_str(&format!(",acd_seed{seed},recall_seed{seed}"));
        }
        s.push('\n');
        for r in &self.rows {
            let w = r.switches;
            s.push_str(&format!(
                "{},{},{},{},{},{:?},{:?}",
                r.variant.name(),
                w.train_encoder,
                w.train_discriminator,
                w.infer_encoder,
                w.infer_discriminator,
                r.median_acd,
                r.median_recall
            ));
            for (a, b) in r.acd.iter().zip(&r.recall) {
                s.push_str(&format!(",{a:?},{b:?}"));
            }
            s.push('\n');
        }
        s
    }
}
