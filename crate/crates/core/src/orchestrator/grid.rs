use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{evaluate_dataset, AttackConfig, DatasetReport, OrchestratorError};
use crate::oracle::OracleHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAxis {
    M,
    FontSize,
    Lambda,
    Font,
}

impl FromStr for GridAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "m" => Ok(Self::M),
            "h" | "font-size" => Ok(Self::FontSize),
            "lambda" => Ok(Self::Lambda),
            "font" => Ok(Self::Font),
            other => Err(format!("unknown axis {other:?} (expected m, h, lambda or font)")),
        }
    }
}

impl GridAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::M => "m",
            Self::FontSize => "h",
            Self::Lambda => "lambda",
            Self::Font => "font",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(&self, base: &AttackConfig, value: &str) -> Result<AttackConfig, OrchestratorError> {
        let bad = |e: String| OrchestratorError::InvalidConfig(format!("{} value {value:?}: {e}", self.name()));
        let mut cfg = base.clone();
        match self {
            Self::M => cfg.m = value.parse().map_err(|e| bad(format!("{e}")))?,
            Self::FontSize => cfg.font_size = value.parse().map_err(|e| bad(format!("{e}")))?,
            Self::Lambda => cfg.lambda = value.parse().map_err(|e| bad(format!("{e}")))?,
            Self::Font => cfg.font = value.to_string(),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub value: String,
    pub report: DatasetReport,
}

pub const GRID_HEADER: &str = "axis,value,fr,aoa,aoa_star,aqn,n,skipped,seed";

/// Run `eval` once per axis value with otherwise identical configuration and seeds.
pub fn grid_over(
    base: &AttackConfig,
    axis: GridAxis,
    values: &[String],
    mut eval: impl FnMut(&AttackConfig) -> Result<DatasetReport, OrchestratorError>,
) -> Result<Vec<GridRow>, OrchestratorError> {
    if values.is_empty() {
        return Err(OrchestratorError::InvalidConfig("grid needs at least one value".into()));
    }
    let cfgs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>, _>>()?;
    values
        .iter()
        .zip(&cfgs)
        .map(|(v, cfg)| {
            log::info!("grid {}={v}", axis.name());
            Ok(GridRow {
                value: v.clone(),
                report: eval(cfg)?,
            })
        })
        .collect()
}

pub fn grid_search(
    base: &AttackConfig,
    axis: GridAxis,
    values: &[String],
    dataset: &Path,
    labels: Option<&Path>,
    oracle: &OracleHandle,
) -> Result<Vec<GridRow>, OrchestratorError> {
    grid_over(base, axis, values, |cfg| evaluate_dataset(dataset, labels, oracle, cfg, &[]))
}

pub fn grid_csv(axis: GridAxis, rows: &[GridRow]) -> String {
    let na = |v: Option<f64>| v.map_or_else(|| super::dataset::NA.to_string(), |x| x.to_string());
    let mut out = format!("{GRID_HEADER}\n");
    for row in rows {
        let a = &row.report.aggregate;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            axis.name(),
            row.value,
            a.fr,
            na(a.aoa),
            na(a.aoa_star),
            na(a.aqn),
            a.n,
            a.skipped,
            row.report.seed
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_axes() {
        let base = AttackConfig::default();
        assert_eq!(GridAxis::M.apply(&base, "6").unwrap().m, 6);
        assert_eq!("h".parse::<GridAxis>().unwrap().apply(&base, "13").unwrap().font_size, 13);
        assert_eq!(GridAxis::Lambda.apply(&base, "1e-5").unwrap().lambda, 1e-5);
        assert!(GridAxis::M.apply(&base, "0").is_err());
        assert!(GridAxis::M.apply(&base, "x").is_err());
    }

    #[test]
    fn one_row_per_value_with_shared_seed() {
        let base = AttackConfig { seed: 11, ..Default::default() };
        let values: Vec<String> = ["2", "3"].iter().map(|s| s.to_string()).collect();
        let mut seen = Vec::new();
        let rows = grid_over(&base, GridAxis::M, &values, |cfg| {
            seen.push((cfg.m, cfg.seed));
            Ok(DatasetReport {
                rows: vec![],
                skipped: vec![],
                aggregate: super::super::dataset::aggregate(&[], 0),
                seed: cfg.seed,
            })
        })
        .unwrap();
        assert_eq!(seen, vec![(2, 11), (3, 11)]);
        let csv = grid_csv(GridAxis::M, &rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("m,2,0,NA"));
        assert!(grid_over(&base, GridAxis::M, &[], |_| unreachable!()).is_err());
    }
}
