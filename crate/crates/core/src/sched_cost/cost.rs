use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    /// Training samples, e.g. 70_000_000.
    pub dataset: u64,
    pub cp: usize,
    pub iterations: u64,
    pub gpus: usize,
    pub gpu_days: f64,
    pub price_per_gpu_hour: f64,
    /// Wall-clock days; when given, `gpus * wall_days` must equal `gpu_days`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_days: Option<f64>,
}

impl StageSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = self.dataset > 0
            && self.cp > 0
            && self.iterations > 0
            && self.gpus > 0
            && self.gpu_days > 0.0
            && self.price_per_gpu_hour > 0.0
            && self.gpu_days.is_finite()
            && self.price_per_gpu_hour.is_finite();
        if !positive {
            return Err(Error::Config(format!(
                "stage `{}` needs positive fields",
                self.name
            )));
        }
        if let Some(w) = self.wall_days {
            let implied = self.gpus as f64 * w;
            if (implied - self.gpu_days).abs() > 1e-9 * self.gpu_days.max(1.0) {
                return Err(Error::Config(format!(
                    "stage `{}`: {} GPUs x {w} days = {implied} GPU-days, not {}",
                    self.name, self.gpus, self.gpu_days
                )));
            }
        }
        Ok(())
    }
}

/// `gpu_days * 24 * price` in USD.
pub fn stage_cost(stage: &StageSpec) -> Result<f64> {
    stage.validate()?;
    Ok(stage.gpu_days * 24.0 * stage.price_per_gpu_hour)
}

pub fn total_cost(stages: &[StageSpec]) -> Result<f64> {
    stages.iter().map(stage_cost).sum()
}

/// `$107.5k` style, truncated (not rounded) to 0.1k as the published table is.
pub fn format_kusd(usd: f64) -> String {
    let tenths = (usd / 100.0 + 1e-9).floor() as i64;
    format!("${}.{}k", tenths / 10, tenths % 10)
}

fn stage(
    name: &str,
    dataset: u64,
    cp: usize,
    iterations: u64,
    gpus: usize,
    gpu_days: f64,
) -> StageSpec {
    StageSpec {
        name: name.into(),
        dataset,
        cp,
        iterations,
        gpus,
        gpu_days,
        price_per_gpu_hour: 2.0,
        wall_days: None,
    }
}

/// The three stages of the published run, at $2 per H200 hour.
pub fn paper_stages() -> Vec<StageSpec> {
    vec![
        stage("256px T2V", 70_000_000, 1, 85_000, 224, 2240.0),
        stage("256px T/I2V", 10_000_000, 1, 13_000, 192, 384.0),
        stage("768px T/I2V", 5_000_000, 4, 13_000, 192, 1536.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let costs: Vec<f64> = paper_stages()
            .iter()
            .map(|s| stage_cost(s).unwrap())
            .collect();
        assert_eq!(costs, vec![107_520.0, 18_432.0, 73_728.0]);
        assert_eq!(total_cost(&paper_stages()).unwrap(), 199_680.0);
        let shown: Vec<String> = costs.iter().map(|c| format_kusd(*c)).collect();
        assert_eq!(shown, ["$107.5k", "$18.4k", "$73.7k"]);
        assert_eq!(format_kusd(199_680.0), "$199.6k");
    }

    #[test]
    fn wall_days_consistency() {
        let mut s = paper_stages().remove(0);
        s.wall_days = Some(10.0);
        s.validate().unwrap();
        s.wall_days = Some(11.0);
        assert!(s.validate().is_err());
        s.wall_days = None;
        s.gpus = 0;
        assert!(stage_cost(&s).is_err());
    }
}
