use nalgebra::DMatrix;

use super::transform::{apply_transform_named, TransformCode};
use super::YearMonth;
use crate::{Error, Result};

/// Monthly panel of named series. Missing values (`NaN`) may only appear at
/// the head of a column.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    dates: Vec<YearMonth>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    tcodes: Vec<TransformCode>,
}

impl TimeSeriesPanel {
    pub fn new(
        dates: Vec<YearMonth>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        tcodes: Vec<TransformCode>,
    ) -> Result<Self> {
        if names.len() != columns.len() || names.len() != tcodes.len() {
            return Err(Error::LengthMismatch(format!(
                "{} names, {} columns, {} tcodes",
                names.len(),
                columns.len(),
                tcodes.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[0].months_until(pair[1]) != 1 {
                return Err(Error::BadDates(format!("{} is followed by {}", pair[0], pair[1])));
            }
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != dates.len() {
                return Err(Error::LengthMismatch(format!(
                    "series `{name}` has {} values for {} dates",
                    col.len(),
                    dates.len()
                )));
            }
            let first = col.iter().position(|v| !v.is_nan()).unwrap_or(col.len());
            if let Some(gap) = col[first..].iter().position(|v| !v.is_finite()) {
                return Err(Error::InteriorMissing {
                    series: name.clone(),
                    date: dates[first + gap],
                });
            }
        }
        Ok(Self {
            dates,
            names,
            columns,
            tcodes,
        })
    }

    pub fn dates(&self) -> &[YearMonth] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tcodes(&self) -> &[TransformCode] {
        &self.tcodes
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn first_date(&self) -> Option<YearMonth> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<YearMonth> {
        self.dates.last().copied()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownSeries(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.columns[self.column_index(name)?])
    }

    pub fn tcode(&self, name: &str) -> Result<TransformCode> {
        Ok(self.tcodes[self.column_index(name)?])
    }

    /// Row index of `date`, if present.
    pub fn position(&self, date: YearMonth) -> Option<usize> {
        let first = self.first_date()?;
        let offset = first.months_until(date);
        (0..self.len() as i64)
            .contains(&offset)
            .then_some(offset as usize)
    }

    /// Panel restricted to the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let mut out_names = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        let mut tcodes = Vec::with_capacity(names.len());
        for name in names {
            let j = self.column_index(name)?;
            out_names.push(self.names[j].clone());
            columns.push(self.columns[j].clone());
            tcodes.push(self.tcodes[j]);
        }
        Ok(Self {
            dates: self.dates.clone(),
            names: out_names,
            columns,
            tcodes,
        })
    }

    /// Rows dated on or before `last`.
    pub fn truncate_through(&self, last: YearMonth) -> Self {
        let keep = self.dates.iter().take_while(|d| **d <= last).count();
        Self {
            dates: self.dates[..keep].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[..keep].to_vec()).collect(),
            tcodes: self.tcodes.clone(),
        }
    }

    /// Replaces (or appends) a column.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>, tcode: TransformCode) -> Result<()> {
        let candidate = Self::new(
            self.dates.clone(),
            vec![name.to_string()],
            vec![values],
            vec![tcode],
        )?;
        let values = candidate.columns.into_iter().next().unwrap_or_default();
        match self.names.iter().position(|n| n == name) {
            Some(j) => {
                self.columns[j] = values;
                self.tcodes[j] = tcode;
            }
            None => {
                self.names.push(name.to_string());
                self.columns.push(values);
                self.tcodes.push(tcode);
            }
        }
        Ok(())
    }

    /// Applies every column's transformation code and aligns all columns on
    /// the latest common start date. The result carries `Level` codes.
    pub fn transform(&self) -> Result<Self> {
        let mut starts = Vec::with_capacity(self.columns.len());
        let mut transformed = Vec::with_capacity(self.columns.len());
        for ((name, col), &code) in self.names.iter().zip(&self.columns).zip(&self.tcodes) {
            let first = col.iter().position(|v| !v.is_nan()).ok_or_else(|| {
                Error::Empty(format!("series `{name}` has no observations"))
            })?;
            let values = apply_transform_named(&col[first..], code, name).map_err(|e| match e {
                Error::NonPositiveLevel { series, row, value } => Error::NonPositiveLevel {
                    series,
                    row: row + first,
                    value,
                },
                other => other,
            })?;
            starts.push(first + code.lost_observations());
            transformed.push(values);
        }
        let start = starts.iter().copied().max().unwrap_or(0);
        if start >= self.len() {
            return Err(Error::InsufficientObservations {
                needed: start,
                have: self.len(),
            });
        }
        let columns = transformed
            .into_iter()
            .zip(&starts)
            .map(|(values, &s)| values[start - s..].to_vec())
            .collect();
        Self::new(
            self.dates[start..].to_vec(),
            self.names.clone(),
            columns,
            vec![TransformCode::Level; self.names.len()],
        )
    }

    /// Drops leading rows until every column is observed.
    pub fn drop_incomplete_head(&self) -> Self {
        let start = self
            .columns
            .iter()
            .map(|c| c.iter().position(|v| !v.is_nan()).unwrap_or(c.len()))
            .max()
            .unwrap_or(0)
            .min(self.len());
        Self {
            dates: self.dates[start..].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[start..].to_vec()).collect(),
            tcodes: self.tcodes.clone(),
        }
    }

    /// Dense `T x n` matrix of the panel; fails if any value is missing.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        for (name, col) in self.names.iter().zip(&self.columns) {
            if let Some(row) = col.iter().position(|v| v.is_nan()) {
                return Err(Error::InteriorMissing {
                    series: name.clone(),
                    date: self.dates[row],
                });
            }
        }
        Ok(DMatrix::from_fn(self.len(), self.columns.len(), |t, j| {
            self.columns[j][t]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn months(start: &str, n: usize) -> Vec<YearMonth> {
        let first: YearMonth = start.parse().unwrap();
        (0..n as i64).map(|i| first.add_months(i)).collect()
    }

    #[test]
    fn rejects_gaps_and_interior_missing() {
        let mut dates = months("2000-01", 3);
        dates[2] = dates[2].add_months(1);
        let err = TimeSeriesPanel::new(
            dates,
            vec!["a".into()],
            vec![vec![1.0, 2.0, 3.0]],
            vec![TransformCode::Level],
        );
        assert!(matches!(err, Err(Error::BadDates(_))));

        let err = TimeSeriesPanel::new(
            months("2000-01", 3),
            vec!["a".into()],
            vec![vec![1.0, f64::NAN, 3.0]],
            vec![TransformCode::Level],
        );
        assert!(matches!(err, Err(Error::InteriorMissing { .. })));
    }

    #[test]
    fn transform_aligns_on_latest_start() {
        let panel = TimeSeriesPanel::new(
            months("2000-01", 5),
            vec!["price".into(), "index".into(), "spread".into()],
            vec![
                vec![f64::NAN, 10.0, 11.0, 12.1, 12.1],
                vec![1.0, 2.0, 4.0, 7.0, 11.0],
                vec![0.5, 0.6, 0.7, 0.8, 0.9],
            ],
            vec![
                TransformCode::LogDifference,
                TransformCode::Difference,
                TransformCode::Level,
            ],
        )
        .unwrap();
        let out = panel.transform().unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.first_date().unwrap().to_string(), "2000-03");
        assert_eq!(out.column("index").unwrap(), &[2.0, 3.0, 4.0]);
        assert_eq!(out.column("spread").unwrap(), &[0.7, 0.8, 0.9]);
        let p = out.column("price").unwrap();
        assert!((p[0] - (1.1f64).ln()).abs() < 1e-14);
        assert_eq!(p[2], 0.0);
        assert!(out.tcodes().iter().all(|c| *c == TransformCode::Level));
    }

    #[test]
    fn truncation_and_position() {
        let panel = TimeSeriesPanel::new(
            months("2000-11", 4),
            vec!["a".into()],
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            vec![TransformCode::Level],
        )
        .unwrap();
        let cut = panel.truncate_through("2001-01".parse().unwrap());
        assert_eq!(cut.len(), 3);
        assert_eq!(panel.position("2001-02".parse().unwrap()), Some(3));
        assert_eq!(panel.position("2001-03".parse().unwrap()), None);
        assert!(matches!(panel.column("b"), Err(Error::UnknownSeries(_))));
    }
}
