//! Utility metrics over ingested downstream predictions.
//!
//! The prediction table is a CSV with an `id` column and any subset of the
//! paired columns `age`, `gender`, `ethnicity`, `expression`, `landmarks` and
//! `hr`, each as `<name>_pred` and `<name>_gt`. Landmarks are written as
//! `x0;y0;x1;y1;...` in pixels.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth landmark indices whose distance normalizes NME.
pub const DEFAULT_OCULAR: (usize, usize) = (0, 1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMetric {
    AgeMae,
    GenderAcc,
    EthnicityAcc,
    ExpressionAcc,
    LandmarkNme,
    HrMae,
}

impl UtilityMetric {
    pub const ALL: [UtilityMetric; 6] = [
        UtilityMetric::AgeMae,
        UtilityMetric::GenderAcc,
        UtilityMetric::EthnicityAcc,
        UtilityMetric::ExpressionAcc,
        UtilityMetric::LandmarkNme,
        UtilityMetric::HrMae,
    ];

    /// Column stem in the prediction table.
    pub fn column(self) -> &'static str {
        match self {
            UtilityMetric::AgeMae => "age",
            UtilityMetric::GenderAcc => "gender",
            UtilityMetric::EthnicityAcc => "ethnicity",
            UtilityMetric::ExpressionAcc => "expression",
            UtilityMetric::LandmarkNme => "landmarks",
            UtilityMetric::HrMae => "hr",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UtilityMetric::AgeMae => "age_mae",
            UtilityMetric::GenderAcc => "gender_acc",
            UtilityMetric::EthnicityAcc => "ethnicity_acc",
            UtilityMetric::ExpressionAcc => "expression_acc",
            UtilityMetric::LandmarkNme => "landmark_nme",
            UtilityMetric::HrMae => "hr_mae",
        }
    }
}

/// Raw string cells keyed by column name, one map per image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    columns: HashSet<String>,
    rows: BTreeMap<String, BTreeMap<String, String>>,
}

impl PredictionTable {
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let id_col = headers
            .iter()
            .position(|h| h == "id")
            .ok_or_else(|| Error::MissingColumn("id".into()))?;
        let mut table = Self {
            columns: headers.iter().map(str::to_string).collect(),
            rows: BTreeMap::new(),
        };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let id = rec.get(id_col).unwrap_or_default().to_string();
            let cells = headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect();
            if table.rows.insert(id.clone(), cells).is_some() {
                return Err(Error::Parse(format!("duplicate id `{id}` in prediction table")));
            }
        }
        Ok(table)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Metrics whose prediction and ground-truth columns are both present.
    pub fn available_metrics(&self) -> Vec<UtilityMetric> {
        UtilityMetric::ALL
            .into_iter()
            .filter(|m| {
                self.columns.contains(&format!("{}_pred", m.column()))
                    && self.columns.contains(&format!("{}_gt", m.column()))
            })
            .collect()
    }

    fn pairs(&self, stem: &str) -> Result<Vec<(&str, &str, &str)>> {
        let (p, g) = (format!("{stem}_pred"), format!("{stem}_gt"));
        for c in [&p, &g] {
            if !self.columns.contains(c) {
                return Err(Error::MissingColumn(c.clone()));
            }
        }
        Ok(self
            .rows
            .iter()
            .map(|(id, r)| (id.as_str(), r[&p].as_str(), r[&g].as_str()))
            .collect())
    }
}

fn parse_num(id: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Parse(format!("`{v}` is not a number (row `{id}`)")))
}

fn parse_points(id: &str, v: &str) -> Result<Vec<[f64; 2]>> {
    let nums = v
        .split(';')
        .map(|s| parse_num(id, s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if nums.len() % 2 != 0 {
        return Err(Error::Parse(format!("odd landmark coordinate count in row `{id}`")));
    }
    Ok(nums.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Result<f64> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyPairs("prediction table has no rows".into()));
    }
    Ok(values.sum::<f64>() / n as f64)
}

/// Mean absolute error between numeric columns.
pub fn mae(table: &PredictionTable, stem: &str) -> Result<f64> {
    let diffs = table
        .pairs(stem)?
        .into_iter()
        .map(|(id, p, g)| Ok((parse_num(id, p)? - parse_num(id, g)?).abs()))
        .collect::<Result<Vec<f64>>>()?;
    mean(diffs.into_iter())
}

/// Exact-match rate in percent.
pub fn accuracy(table: &PredictionTable, stem: &str) -> Result<f64> {
    let hits: Vec<f64> = table
        .pairs(stem)?
        .into_iter()
        .map(|(_, p, g)| if p == g { 1.0 } else { 0.0 })
        .collect();
    Ok(100.0 * mean(hits.into_iter())?)
}

/// Mean over images of mean point error divided by the ground-truth
/// distance between the two `ocular` landmarks.
pub fn nme(table: &PredictionTable, ocular: (usize, usize)) -> Result<f64> {
    let per_image = table
        .pairs("landmarks")?
        .into_iter()
        .map(|(id, p, g)| {
            let (p, g) = (parse_points(id, p)?, parse_points(id, g)?);
            if p.len() != g.len() || g.is_empty() {
                return Err(Error::DimensionMismatch(format!(
                    "row `{id}`: {} predicted vs {} ground-truth landmarks",
                    p.len(),
                    g.len()
                )));
            }
            let (l, r) = g
                .get(ocular.0)
                .zip(g.get(ocular.1))
                .ok_or_else(|| Error::DimensionMismatch(format!("row `{id}` lacks ocular landmarks {ocular:?}")))?;
            let iod = (l[0] - r[0]).hypot(l[1] - r[1]);
            if iod == 0.0 {
                return Err(Error::ZeroInterOcular(id.to_string()));
            }
            let err = p
                .iter()
                .zip(&g)
                .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
                .sum::<f64>()
                / g.len() as f64;
            Ok(err / iod)
        })
        .collect::<Result<Vec<f64>>>()?;
    mean(per_image.into_iter())
}

/// Requested metrics by name (see [`UtilityMetric::name`]).
pub type UtilityReport = BTreeMap<String, f64>;

pub fn utility_report(
    table: &PredictionTable,
    metrics: &[UtilityMetric],
    ocular: (usize, usize),
) -> Result<UtilityReport> {
    metrics
        .iter()
        .map(|&m| {
            let v = match m {
                UtilityMetric::AgeMae | UtilityMetric::HrMae => mae(table, m.column())?,
                UtilityMetric::LandmarkNme => nme(table, ocular)?,
                _ => accuracy(table, m.column())?,
            };
            Ok((m.name().to_string(), v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str) -> PredictionTable {
        PredictionTable::from_csv_reader(csv.as_bytes()).unwrap()
    }

    #[test]
    fn hand_arithmetic() {
        let t = table("id,age_pred,age_gt,gender_pred,gender_gt\na,20,25,m,m\nb,30,30,f,m\n");
        assert_eq!(mae(&t, "age").unwrap(), 2.5);
        assert_eq!(accuracy(&t, "gender").unwrap(), 50.0);
        assert_eq!(t.available_metrics(), vec![UtilityMetric::AgeMae, UtilityMetric::GenderAcc]);
        assert!(matches!(mae(&t, "hr"), Err(Error::MissingColumn(c)) if c == "hr_pred"));
    }

    #[test]
    fn nme_normalizes_by_ocular_distance() {
        let t = table("id,landmarks_pred,landmarks_gt\na,0;0;10;0;5;1,0;0;10;0;5;5\n");
        // Errors 0, 0, 4 over three points; inter-ocular distance 10.
        assert!((nme(&t, DEFAULT_OCULAR).unwrap() - 4.0 / 3.0 / 10.0).abs() < 1e-15);
        let z = table("id,landmarks_pred,landmarks_gt\nq,0;0;1;1,2;2;2;2\n");
        assert!(matches!(nme(&z, DEFAULT_OCULAR), Err(Error::ZeroInterOcular(id)) if id == "q"));
    }

    #[test]
    fn perfect_predictions() {
        let t = table("id,age_pred,age_gt,expression_pred,expression_gt,landmarks_pred,landmarks_gt,hr_pred,hr_gt\n\
                       a,31,31,happy,happy,1;2;3;4,1;2;3;4,72,72\n");
        let r = utility_report(&t, &t.available_metrics(), DEFAULT_OCULAR).unwrap();
        assert_eq!(r["age_mae"], 0.0);
        assert_eq!(r["expression_acc"], 100.0);
        assert_eq!(r["landmark_nme"], 0.0);
        assert_eq!(r["hr_mae"], 0.0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = PredictionTable::from_csv_reader("id,age_pred,age_gt\na,1,1\na,2,2\n".as_bytes());
        assert!(matches!(e, Err(Error::Parse(_))));
    }
}
