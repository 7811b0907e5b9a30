use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::special::t_quantile;
use super::{anova_rm, tukey_hsd_rm, MetricTable, StatsError};
use crate::downstream::{MetricName, MetricRecord};

/// Which model of a pair is better under the metric's orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `a` is better.
    #[serde(rename = "<-")]
    TowardA,
    /// `b` is better.
    #[serde(rename = "->")]
    TowardB,
    #[serde(rename = "=")]
    Tie,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::TowardA => "<-",
            Direction::TowardB => "->",
            Direction::Tie => "=",
        })
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaSummary {
    pub f: f64,
    pub df_treatment: usize,
    pub df_error: usize,
    pub ms_error: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseEntry {
    pub a: String,
    pub b: String,
    /// `mean(a) - mean(b)`.
    pub diff: f64,
    pub q: f64,
    pub p: f64,
    pub direction: Direction,
    pub ci: [f64; 2],
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub metric: MetricName,
    pub models: Vec<String>,
    pub means: Vec<f64>,
    /// 95% t interval of each mean over cells; absent with one cell.
    pub ci: Vec<Option<[f64; 2]>>,
    pub cells: usize,
    pub anova: Option<AnovaSummary>,
    pub pairwise: Vec<PairwiseEntry>,
}

fn mean_ci(v: &[f64]) -> Option<[f64; 2]> {
    let n = v.len();
    if n < 2 {
        return None;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let half = t_quantile(0.975, (n - 1) as f64) * (var / n as f64).sqrt();
    Some([mean - half, mean + half])
}

/// Means with confidence intervals, ANOVA-RM over the models and the
/// Tukey matrix built on its error term.
pub fn significance_report(
    records: &[MetricRecord],
    models: &[String],
    metric: MetricName,
) -> Result<SignificanceReport, StatsError> {
    let table = MetricTable::from_records(records, models, metric)?;
    let means = table.model_means();
    let ci = table.values.iter().map(|v| mean_ci(v)).collect();
    let (mut anova, mut pairwise) = (None, Vec::new());
    if models.len() >= 2 {
        let r = anova_rm(&table.values)?;
        let tukey = tukey_hsd_rm(&r, 0.05)?;
        for pair in &tukey.pairs {
            let better_a = if metric.lower_is_better() { pair.diff < 0.0 } else { pair.diff > 0.0 };
            let direction = if pair.diff == 0.0 {
                Direction::Tie
            } else if better_a {
                Direction::TowardA
            } else {
                Direction::TowardB
            };
            pairwise.push(PairwiseEntry {
                a: models[pair.i].clone(),
                b: models[pair.j].clone(),
                diff: pair.diff,
                q: pair.q,
                p: pair.p,
                direction,
                ci: pair.ci,
                stars: stars(pair.p).to_string(),
            });
        }
        anova = Some(AnovaSummary {
            f: r.f,
            df_treatment: r.df_treatment,
            df_error: r.df_error,
            ms_error: r.ms_error,
            p: r.p,
        });
    }
    Ok(SignificanceReport {
        metric,
        models: models.to_vec(),
        means,
        ci,
        cells: table.cells.len(),
        anova,
        pairwise,
    })
}

impl SignificanceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Flat CSV: one `mean` row per model, then one `pair` row per pair.
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["metric", "kind", "a", "b", "value", "ci_lo", "ci_hi", "q", "p", "direction", "stars"])?;
        let metric = self.metric.to_string();
        for (i, m) in self.models.iter().enumerate() {
            let (lo, hi) = self.ci[i].map_or((String::new(), String::new()), |c| (c[0].to_string(), c[1].to_string()));
            wr.write_record([&metric, "mean", m, "", &self.means[i].to_string(), &lo, &hi, "", "", "", ""])?;
        }
        for p in &self.pairwise {
            wr.write_record([
                &metric,
                "pair",
                &p.a,
                &p.b,
                &p.diff.to_string(),
                &p.ci[0].to_string(),
                &p.ci[1].to_string(),
                &p.q.to_string(),
                &p.p.to_string(),
                &p.direction.to_string(),
                &p.stars,
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Plain-text summary for terminals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let w = self.models.iter().map(|m| m.len()).max().unwrap_or(0).max(5);
        let _ = writeln!(out, "{} over {} cells", self.metric, self.cells);
        for (i, m) in self.models.iter().enumerate() {
            let ci = self.ci[i].map_or("n/a".to_string(), |c| format!("[{:.4}, {:.4}]", c[0], c[1]));
            let _ = writeln!(out, "  {m:<w$}  {:.4}  95% CI {ci}", self.means[i]);
        }
        if let Some(a) = &self.anova {
            let _ = writeln!(
                out,
                "ANOVA-RM F({}, {}) = {:.4}, p = {:.3e} {}",
                a.df_treatment,
                a.df_error,
                a.f,
                a.p,
                stars(a.p)
            );
        }
        for p in &self.pairwise {
            let _ = writeln!(
                out,
                "  {:<w$} {} {:<w$}  diff {:+.4}  q {:.3}  p {:.3e} {}",
                p.a, p.direction, p.b, p.diff, p.q, p.p, p.stars
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::table::records_for;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_model() {
        let recs = records_for("a", MetricName::Mae, &[1.0, 2.0, 3.0]);
        let r = significance_report(&recs, &names(&["a"]), MetricName::Mae).unwrap();
        assert!(r.pairwise.is_empty() && r.anova.is_none());
        let [lo, hi] = r.ci[0].unwrap();
        // t(0.975, 2) = 4.302653, sd / sqrt(n) = 1 / sqrt(3).
        assert!((hi - 2.0 - 4.302652729911275 / 3f64.sqrt()).abs() < 1e-8);
        assert!((lo + hi - 4.0).abs() < 1e-12);
    }

    #[test]
    fn arrows_follow_metric_orientation() {
        // Model a scores lower on both metrics.
        let mut recs = records_for("a", MetricName::Mae, &[1.0, 2.0, 3.0, 2.5]);
        recs.extend(records_for("b", MetricName::Mae, &[1.5, 2.9, 3.2, 3.1]));
        recs.extend(records_for("a", MetricName::R2, &[0.1, 0.2, 0.3, 0.25]));
        recs.extend(records_for("b", MetricName::R2, &[0.15, 0.29, 0.32, 0.31]));
        let models = names(&["a", "b"]);
        let mae = significance_report(&recs, &models, MetricName::Mae).unwrap();
        let r2 = significance_report(&recs, &models, MetricName::R2).unwrap();
        assert_eq!(mae.pairwise[0].direction, Direction::TowardA);
        assert_eq!(r2.pairwise[0].direction, Direction::TowardB);
        assert_eq!(SignificanceReport::from_json(&mae.to_json()).unwrap(), mae);
        let mut buf = Vec::new();
        mae.to_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 + 1);
        assert!(mae.render().contains("ANOVA-RM"));
    }

    #[test]
    fn json_has_the_documented_keys() {
        let mut recs = records_for("a", MetricName::Mae, &[1.0, 2.0, 3.0]);
        recs.extend(records_for("b", MetricName::Mae, &[2.0, 2.5, 3.9]));
        let r = significance_report(&recs, &names(&["a", "b"]), MetricName::Mae).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for k in ["metric", "models", "means", "ci", "pairwise"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        for k in ["a", "b", "diff", "q", "p", "direction"] {
            assert!(v["pairwise"][0].get(k).is_some(), "{k}");
        }
        assert_eq!(v["metric"], "MAE");
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(
            [0.2, 0.049, 0.0099, 0.00099].map(stars),
            ["", "*", "**", "***"]
        );
        assert_eq!(stars(0.05), "");
    }
}
