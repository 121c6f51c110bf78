//! Replicate matrices and the flat CSV formats used by the pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LocationSet, Point};

/// Row-major `N x D` matrix: one replicate (time point) per row, one site
/// per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    ncols: usize,
    data: Vec<f64>,
}

impl DataMatrix {
    pub fn new(ncols: usize, data: Vec<f64>) -> Result<Self> {
        if ncols == 0 || !data.len().is_multiple_of(ncols) {
            return Err(Error::invalid(format!(
                "{} values cannot fill rows of width {ncols}",
                data.len()
            )));
        }
        Ok(Self { ncols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
            return Err(Error::invalid(format!("row {i} has the wrong length")));
        }
        Self::new(ncols, rows.concat())
    }

    pub fn nrows(&self) -> usize {
        self.data.len() / self.ncols
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.ncols)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            ncols: self.ncols,
            data,
        }
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.nrows());
        for r in self.rows() {
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Self {
            ncols: idx.len(),
            data,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            ncols: self.ncols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

/// Reads a wide CSV: a header of column names, then one numeric row per
/// replicate.
pub fn read_wide_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, DataMatrix)> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|_| {
                Error::invalid(format!("row {}: `{field}` is not a number", i + 1))
            })?);
        }
    }
    let m = DataMatrix::new(header.len(), data)?;
    Ok((header, m))
}

pub fn write_wide_csv(path: impl AsRef<Path>, header: &[String], m: &DataMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(header)?;
    for r in m.rows() {
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SiteRow {
    id: String,
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize)]
struct WarpedSiteRow<'a> {
    id: &'a str,
    x: f64,
    y: f64,
    wx: f64,
    wy: f64,
}

/// Reads sites from a CSV with header `id,x,y` (extra columns ignored).
pub fn read_sites_csv(path: impl AsRef<Path>) -> Result<LocationSet> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut labels = Vec::new();
    let mut coords = Vec::new();
    for row in rdr.deserialize::<SiteRow>() {
        let row = row?;
        labels.push(row.id);
        coords.push([row.x, row.y]);
    }
    LocationSet::new(coords)?.with_labels(labels)
}

/// Writes `id,x,y`, plus `wx,wy` when warped coordinates are given.
pub fn write_sites_csv(
    path: impl AsRef<Path>,
    sites: &LocationSet,
    warped: Option<&[Point]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for (i, p) in sites.coords().iter().enumerate() {
        let id = sites.label(i);
        match warped {
            Some(wp) => w.serialize(WarpedSiteRow {
                id: &id,
                x: p[0],
                y: p[1],
                wx: wp[i][0],
                wy: wp[i][1],
            })?,
            None => w.serialize(SiteRow {
                id: id.clone(),
                x: p[0],
                y: p[1],
            })?,
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub site_id: String,
    pub time: String,
    pub value: f64,
}

/// Reads the long format `site_id,time,value`.
pub fn read_long_csv(path: impl AsRef<Path>) -> Result<Vec<Observation>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Series per site (sites in first-seen order, values in file order).
pub fn group_by_site(obs: &[Observation]) -> Vec<(String, Vec<(String, f64)>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for o in obs {
        let entry = map.entry(o.site_id.clone()).or_insert_with(|| {
            order.push(o.site_id.clone());
            Vec::new()
        });
        entry.push((o.time.clone(), o.value));
    }
    order
        .into_iter()
        .map(|s| {
            let v = map.remove(&s).unwrap();
            (s, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_shapes() {
        let m = DataMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.column(2), vec![3.0, 6.0]);
        assert_eq!(m.select_columns(&[2, 0]).row(0), &[3.0, 1.0]);
        assert_eq!(m.select_rows(&[1, 1]).nrows(), 2);
        assert!(DataMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sites = LocationSet::new(vec![[0.0, 1.0], [2.5, -1.0]])
            .unwrap()
            .with_labels(vec!["a".into(), "b".into()])
            .unwrap();
        let p = dir.path().join("sites.csv");
        write_sites_csv(&p, &sites, Some(&[[0.1, 0.2], [0.3, 0.4]])).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,x,y,wx,wy\n"));
        assert_eq!(read_sites_csv(&p).unwrap(), sites);

        let m = DataMatrix::from_rows(&[vec![1.5, 2.0], vec![0.25, 1e10]]).unwrap();
        let p = dir.path().join("m.csv");
        write_wide_csv(&p, &["a".into(), "b".into()], &m).unwrap();
        let (h, back) = read_wide_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(back, m);
    }
}
