//! Spatial observations, CSV ingestion and grid aggregation.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the study area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub s1: f64,
    pub s2: f64,
}

impl Location {
    pub const ORIGIN: Location = Location { s1: 0.0, s2: 0.0 };

    pub const fn new(s1: f64, s2: f64) -> Self {
        Location { s1, s2 }
    }

    pub fn is_finite(&self) -> bool {
        self.s1.is_finite() && self.s2.is_finite()
    }

    pub fn squared_distance(&self, other: &Location) -> f64 {
        let d1 = self.s1 - other.s1;
        let d2 = self.s2 - other.s2;
        d1 * d1 + d2 * d2
    }

    pub fn distance(&self, other: &Location) -> f64 {
        self.squared_distance(other).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub loc: Location,
    pub x: Vec<f64>,
    pub y: f64,
    /// Optional positive count weight (exposure or trials).
    pub n: Option<f64>,
}

/// Complete-case spatial data: every record has the same regressors, ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    regressors: Vec<String>,
    outcome: String,
    records: Vec<Record>,
}

impl SpatialDataset {
    pub fn new(regressors: Vec<String>, outcome: impl Into<String>, records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("dataset has no records"));
        }
        let p = regressors.len();
        let mut ids = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.x.len() != p {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {p} regressors, found {}", r.x.len()),
                });
            }
            if !r.loc.is_finite() || !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row,
                    message: "non-finite value".into(),
                });
            }
            if let Some(n) = r.n {
                if !(n.is_finite() && n > 0.0) {
                    return Err(Error::Parse {
                        row,
                        message: format!("count weight must be positive, found {n}"),
                    });
                }
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Parse {
                    row,
                    message: format!("duplicate id '{}'", r.id),
                });
            }
        }
        Ok(SpatialDataset {
            regressors,
            outcome: outcome.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressors
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome
    }

    pub fn locations(&self) -> Vec<Location> {
        self.records.iter().map(|r| r.loc).collect()
    }

    pub fn outcome(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn regressor(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.x[k]).collect()
    }

    pub fn counts(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.n).collect()
    }

    /// Values of a named released column: a regressor or the outcome.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        if name == self.outcome {
            return Some(self.outcome());
        }
        let k = self.regressors.iter().position(|c| c == name)?;
        Some(self.regressor(k))
    }

    pub fn has_column(&self, name: &str) -> bool {
        name == self.outcome || self.regressors.iter().any(|c| c == name)
    }

    pub fn index_of_id(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    /// Copy with outcome and regressor values replaced, ids, locations and counts kept.
    pub(crate) fn with_values(&self, y: &[f64], x_cols: &[Vec<f64>]) -> Self {
        let records = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| Record {
                id: r.id.clone(),
                loc: r.loc,
                x: x_cols.iter().map(|c| c[i]).collect(),
                y: y[i],
                n: r.n,
            })
            .collect();
        SpatialDataset {
            regressors: self.regressors.clone(),
            outcome: self.outcome.clone(),
            records,
        }
    }

    /// Resampled copy; repeated indices get suffixed ids so ids stay unique.
    pub fn resample(&self, indices: &[usize]) -> Self {
        let mut seen = vec![0usize; self.records.len()];
        let records = indices
            .iter()
            .map(|&i| {
                let mut r = self.records[i].clone();
                if seen[i] > 0 {
                    r.id = format!("{}#{}", r.id, seen[i]);
                }
                seen[i] += 1;
                r
            })
            .collect();
        SpatialDataset {
            regressors: self.regressors.clone(),
            outcome: self.outcome.clone(),
            records,
        }
    }
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Id column; `None` numbers rows from 1.
    pub id: Option<String>,
    pub lon: String,
    pub lat: String,
    /// Regressor columns; empty means every column not assigned another role.
    pub regressors: Vec<String>,
    pub outcome: String,
    pub count: Option<String>,
    /// Column order used when writing; filled from the header on read.
    #[serde(default)]
    pub order: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: Some("id".into()),
            lon: "lon".into(),
            lat: "lat".into(),
            regressors: Vec::new(),
            outcome: "y".into(),
            count: None,
            order: Vec::new(),
        }
    }
}

impl CsvSchema {
    fn role_columns(&self) -> impl Iterator<Item = &str> {
        self.id
            .as_deref()
            .into_iter()
            .chain([self.lon.as_str(), self.lat.as_str(), self.outcome.as_str()])
            .chain(self.count.as_deref())
    }

    fn resolve(&self, header: &[String]) -> Result<CsvSchema> {
        let mut resolved = self.clone();
        if resolved.regressors.is_empty() {
            let taken: HashSet<&str> = self.role_columns().collect();
            resolved.regressors = header
                .iter()
                .filter(|h| !taken.contains(h.as_str()))
                .cloned()
                .collect();
        }
        let missing: Vec<&str> = resolved
            .role_columns()
            .chain(resolved.regressors.iter().map(String::as_str))
            .filter(|c| !header.iter().any(|h| h == c))
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "missing column(s): {}; header has: {}",
                missing.join(", "),
                header.join(", ")
            )));
        }
        resolved.order = header.to_vec();
        Ok(resolved)
    }

    fn write_order(&self, data: &SpatialDataset) -> Vec<String> {
        let wanted: Vec<String> = self
            .id
            .iter()
            .cloned()
            .chain([self.lon.clone(), self.lat.clone()])
            .chain(data.regressor_names().iter().cloned())
            .chain([self.outcome.clone()])
            .chain(self.count.iter().cloned())
            .collect();
        if self.order.is_empty() {
            return wanted;
        }
        let mut order: Vec<String> = self.order.iter().filter(|c| wanted.contains(c)).cloned().collect();
        for c in wanted {
            if !order.contains(&c) {
                order.push(c);
            }
        }
        order
    }
}

fn parse_cell(record: &csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Err(Error::Parse {
            row,
            message: format!("empty value in column '{name}'"),
        });
    }
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        row,
        message: format!("non-numeric value '{raw}' in column '{name}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("non-finite value '{raw}' in column '{name}'"),
        });
    }
    Ok(v)
}

/// Reads a dataset and returns it with the schema resolved against the header.
pub fn read_csv_with_schema<R: Read>(reader: R, schema: &CsvSchema) -> Result<(SpatialDataset, CsvSchema)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let schema = schema.resolve(&header)?;
    let col = |name: &str| header.iter().position(|h| h == name).expect("resolved column");
    let id_idx = schema.id.as_deref().map(col);
    let (lon_idx, lat_idx, y_idx) = (col(&schema.lon), col(&schema.lat), col(&schema.outcome));
    let count_idx = schema.count.as_deref().map(col);
    let x_idx: Vec<usize> = schema.regressors.iter().map(|c| col(c)).collect();

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let id = match id_idx {
            Some(k) => {
                let raw = rec.get(k).unwrap_or("").trim();
                if raw.is_empty() {
                    return Err(Error::Parse {
                        row,
                        message: "empty id".into(),
                    });
                }
                raw.to_owned()
            }
            None => row.to_string(),
        };
        let loc = Location::new(
            parse_cell(&rec, lon_idx, &schema.lon, row)?,
            parse_cell(&rec, lat_idx, &schema.lat, row)?,
        );
        let x = x_idx
            .iter()
            .zip(&schema.regressors)
            .map(|(&k, name)| parse_cell(&rec, k, name, row))
            .collect::<Result<Vec<_>>>()?;
        let y = parse_cell(&rec, y_idx, &schema.outcome, row)?;
        let n = match (count_idx, &schema.count) {
            (Some(k), Some(name)) => Some(parse_cell(&rec, k, name, row)?),
            _ => None,
        };
        records.push(Record { id, loc, x, y, n });
    }
    let data = SpatialDataset::new(schema.regressors.clone(), schema.outcome.clone(), records)?;
    Ok((data, schema))
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<SpatialDataset> {
    read_csv_with_schema(reader, schema).map(|(d, _)| d)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SpatialDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Writes the dataset under the schema's column names, in the schema's order.
pub fn write_csv<W: Write>(writer: W, data: &SpatialDataset, schema: &CsvSchema) -> Result<()> {
    let order = schema.write_order(data);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&order)?;
    for (i, r) in data.records().iter().enumerate() {
        let fields: Vec<String> = order
            .iter()
            .map(|c| {
                if schema.id.as_deref() == Some(c.as_str()) {
                    r.id.clone()
                } else if *c == schema.lon {
                    r.loc.s1.to_string()
                } else if *c == schema.lat {
                    r.loc.s2.to_string()
                } else if *c == schema.outcome {
                    r.y.to_string()
                } else if schema.count.as_deref() == Some(c.as_str()) {
                    r.n.map(|v| v.to_string()).unwrap_or_default()
                } else {
                    let k = data
                        .regressor_names()
                        .iter()
                        .position(|n| n == c)
                        .expect("column from write order");
                    r.x[k].to_string()
                }
            })
            .collect();
        w.write_record(&fields).map_err(|e| Error::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Equal partition of a rectangle into `nx × ny` half-open cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub nx: usize,
    pub ny: usize,
}

fn axis_index(v: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    let edge = |k: usize| lo + (hi - lo) * (k as f64) / (n as f64);
    let mut k = (((v - lo) / (hi - lo)) * n as f64).floor() as usize;
    k = k.min(n - 1);
    // Settle rounding against the same edge values used for every point.
    while k + 1 < n && v >= edge(k + 1) {
        k += 1;
    }
    while k > 0 && v < edge(k) {
        k -= 1;
    }
    Some(k)
}

impl GridSpec {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64, nx: usize, ny: usize) -> Result<Self> {
        let g = GridSpec {
            xmin,
            xmax,
            ymin,
            ymax,
            nx,
            ny,
        };
        g.validate()?;
        Ok(g)
    }

    /// The study square [-1, 1]² cut into `n × n` cells.
    pub fn unit_square(n: usize) -> Self {
        GridSpec {
            xmin: -1.0,
            xmax: 1.0,
            ymin: -1.0,
            ymax: 1.0,
            nx: n,
            ny: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.xmax, self.ymin, self.ymax].iter().all(|v| v.is_finite());
        if !finite || self.nx == 0 || self.ny == 0 || self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(Error::invalid(format!("invalid grid {self:?}")));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Row-major cell index, or `None` outside the bounds.
    pub fn cell_of(&self, loc: &Location) -> Option<usize> {
        let ix = axis_index(loc.s1, self.xmin, self.xmax, self.nx)?;
        let iy = axis_index(loc.s2, self.ymin, self.ymax, self.ny)?;
        Some(iy * self.nx + ix)
    }

    pub fn centroid(&self, cell: usize) -> Location {
        let (ix, iy) = (cell % self.nx, cell / self.nx);
        let wx = (self.xmax - self.xmin) / self.nx as f64;
        let wy = (self.ymax - self.ymin) / self.ny as f64;
        Location::new(
            self.xmin + wx * (ix as f64 + 0.5),
            self.ymin + wy * (iy as f64 + 0.5),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub y_plus: f64,
    pub x_bar: Vec<f64>,
}

/// Non-empty grid cells with summed outcome and mean regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedDataset {
    pub grid: GridSpec,
    pub regressors: Vec<String>,
    pub cells: Vec<Cell>,
}

pub fn aggregate(data: &SpatialDataset, grid: &GridSpec) -> Result<AggregatedDataset> {
    grid.validate()?;
    let p = data.regressor_names().len();
    let mut n = vec![0usize; grid.cell_count()];
    let mut y_plus = vec![0.0; grid.cell_count()];
    let mut x_sum = vec![vec![0.0; p]; grid.cell_count()];
    for r in data.records() {
        let j = grid.cell_of(&r.loc).ok_or_else(|| Error::OutsideGrid {
            id: r.id.clone(),
            s1: r.loc.s1,
            s2: r.loc.s2,
        })?;
        n[j] += 1;
        y_plus[j] += r.y;
        for (acc, v) in x_sum[j].iter_mut().zip(&r.x) {
            *acc += v;
        }
    }
    let cells = (0..grid.cell_count())
        .filter(|&j| n[j] > 0)
        .map(|j| Cell {
            index: j,
            n: n[j],
            y_plus: y_plus[j],
            x_bar: x_sum[j].iter().map(|s| s / n[j] as f64).collect(),
        })
        .collect();
    Ok(AggregatedDataset {
        grid: *grid,
        regressors: data.regressor_names().to_vec(),
        cells,
    })
}

impl AggregatedDataset {
    pub fn centroids(&self) -> Vec<Location> {
        self.cells.iter().map(|c| self.grid.centroid(c.index)).collect()
    }

    /// Cell-level records at the centroids: `y = Y₊ⱼ`, `x = X̄·ⱼ`, `n = nⱼ`.
    pub fn to_dataset(&self, outcome: &str) -> SpatialDataset {
        let records = self
            .cells
            .iter()
            .map(|c| Record {
                id: format!("cell_{}", c.index),
                loc: self.grid.centroid(c.index),
                x: c.x_bar.clone(),
                y: c.y_plus,
                n: Some(c.n as f64),
            })
            .collect();
        SpatialDataset::new(self.regressors.clone(), outcome, records).expect("cells are valid records")
    }

    /// CSV with columns `cell_j, n_j, y_plus, x_bar_1..x_bar_p`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cell_j".to_string(), "n_j".into(), "y_plus".into()];
        header.extend((1..=self.regressors.len()).map(|k| format!("x_bar_{k}")));
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![c.index.to_string(), c.n.to_string(), c.y_plus.to_string()];
            row.extend(c.x_bar.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn rec(id: &str, s1: f64, s2: f64, x: f64, y: f64) -> Record {
        Record {
            id: id.into(),
            loc: Location::new(s1, s2),
            x: vec![x],
            y,
            n: None,
        }
    }

    #[test]
    fn reads_three_row_csv() {
        let csv = "id,x1,y,lon,lat\na,1.5,2,0.1,0.2\nb,2.5,0,0.3,-0.4\nc,3,7,-0.9,0.9\n";
        let d = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.regressor_names(), ["x1"]);
        assert_eq!(d.records()[1].id, "b");
        assert_eq!(d.records()[1].loc, Location::new(0.3, -0.4));
        assert_eq!(d.outcome(), vec![2.0, 0.0, 7.0]);
    }

    #[test]
    fn blank_outcome_names_row() {
        let csv = "id,x1,y,lon,lat\na,1,2,0,0\nb,2,,0,1\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        match err {
            Error::Parse { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("'y'"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = CsvSchema::default();
        let missing = read_csv("id,x1,lon,lat\na,1,0,0\n".as_bytes(), &s).unwrap_err();
        assert!(missing.to_string().contains("missing column"), "{missing}");
        let nonnum = read_csv("id,x1,y,lon,lat\na,abc,1,0,0\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(nonnum, Error::Parse { row: 1, .. }));
        let dup = read_csv("id,x1,y,lon,lat\na,1,1,0,0\na,2,1,0,0\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(dup, Error::Parse { row: 2, .. }));
    }

    #[test]
    fn csv_round_trip_100_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let records: Vec<Record> = (0..100)
            .map(|i| Record {
                id: format!("r{i}"),
                loc: Location::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                x: vec![rng.random::<f64>() * 1e3, rng.random_range(-5.0..5.0)],
                y: rng.random_range(0..50) as f64,
                n: Some(rng.random_range(1.0..100.0)),
            })
            .collect();
        let data = SpatialDataset::new(vec!["a".into(), "b".into()], "y", records).unwrap();
        let schema = CsvSchema {
            count: Some("n".into()),
            ..CsvSchema::default()
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &data, &schema).unwrap();
        let back = read_csv(buf.as_slice(), &schema).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn write_preserves_header_order() {
        let csv = "lat,y,id,x1,lon\n0.5,1,a,2,0.25\n";
        let (d, schema) = read_csv_with_schema(csv.as_bytes(), &CsvSchema::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &d, &schema).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), csv);
    }

    #[test]
    fn single_cell_grid() {
        let d = SpatialDataset::new(
            vec!["x".into()],
            "y",
            vec![rec("a", 0.1, 0.1, 1.0, 3.0), rec("b", -0.5, 0.9, 2.0, 4.0), rec("c", 1.0, -1.0, 6.0, 0.0)],
        )
        .unwrap();
        let agg = aggregate(&d, &GridSpec::unit_square(1)).unwrap();
        assert_eq!(agg.cells.len(), 1);
        assert_eq!(agg.cells[0].n, 3);
        assert_eq!(agg.cells[0].y_plus, 7.0);
        assert_eq!(agg.cells[0].x_bar, vec![3.0]);
    }

    #[test]
    fn one_point_per_quadrant() {
        let d = SpatialDataset::new(
            vec!["x".into()],
            "y",
            vec![
                rec("a", -0.5, -0.5, 1.0, 10.0),
                rec("b", 0.5, -0.5, 2.0, 20.0),
                rec("c", -0.5, 0.5, 3.0, 30.0),
                rec("d", 0.5, 0.5, 4.0, 40.0),
            ],
        )
        .unwrap();
        let agg = aggregate(&d, &GridSpec::unit_square(2)).unwrap();
        let got: Vec<(usize, usize, f64)> = agg.cells.iter().map(|c| (c.index, c.n, c.y_plus)).collect();
        assert_eq!(got, vec![(0, 1, 10.0), (1, 1, 20.0), (2, 1, 30.0), (3, 1, 40.0)]);
    }

    #[test]
    fn boundary_points_go_to_upper_cell_and_max_edge_to_last() {
        let g = GridSpec::unit_square(7);
        for k in 1..7 {
            let edge = -1.0 + 2.0 * (k as f64) / 7.0;
            let j = g.cell_of(&Location::new(edge, -1.0)).unwrap();
            assert_eq!(j, k, "edge {k}");
        }
        assert_eq!(g.cell_of(&Location::new(1.0, 1.0)), Some(48));
        assert_eq!(g.cell_of(&Location::new(-1.0, -1.0)), Some(0));
        assert_eq!(g.cell_of(&Location::new(1.0 + 1e-12, 0.0)), None);
    }

    #[test]
    fn outside_point_is_named() {
        let d = SpatialDataset::new(vec!["x".into()], "y", vec![rec("far", 3.0, 0.0, 1.0, 1.0)]).unwrap();
        let err = aggregate(&d, &GridSpec::unit_square(7)).unwrap_err();
        assert!(err.to_string().contains("far"));
    }

    #[test]
    fn uniform_points_match_group_by_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<Record> = (0..1000)
            .map(|i| Record {
                id: i.to_string(),
                loc: Location::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)),
                x: vec![rng.random_range(0.0..7.0), rng.random_range(-1.0..1.0)],
                y: rng.random_range(0..30) as f64,
                n: None,
            })
            .collect();
        let d = SpatialDataset::new(vec!["a".into(), "b".into()], "y", records).unwrap();
        let g = GridSpec::unit_square(7);
        let agg = aggregate(&d, &g).unwrap();

        // Independent group-by keyed on (column, row) computed from cell widths.
        let mut groups: BTreeMap<usize, Vec<&Record>> = BTreeMap::new();
        for r in d.records() {
            let cx = (((r.loc.s1 + 1.0) / 2.0 * 7.0).floor() as usize).min(6);
            let cy = (((r.loc.s2 + 1.0) / 2.0 * 7.0).floor() as usize).min(6);
            groups.entry(cy * 7 + cx).or_default().push(r);
        }
        assert_eq!(agg.cells.iter().map(|c| c.n).sum::<usize>(), 1000);
        assert_eq!(agg.cells.len(), groups.len());
        for c in &agg.cells {
            let members = &groups[&c.index];
            assert_eq!(c.n, members.len());
            let y: f64 = members.iter().map(|r| r.y).sum();
            assert_eq!(c.y_plus, y);
            for k in 0..2 {
                let mean = members.iter().map(|r| r.x[k]).sum::<f64>() / members.len() as f64;
                assert!((c.x_bar[k] - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            }
        }
        let total_y: f64 = d.outcome().iter().sum();
        assert_eq!(agg.cells.iter().map(|c| c.y_plus).sum::<f64>(), total_y);
        for k in 0..2 {
            let total: f64 = d.regressor(k).iter().sum();
            let recon: f64 = agg.cells.iter().map(|c| c.n as f64 * c.x_bar[k]).sum();
            assert!((total - recon).abs() <= 1e-10 * total.abs());
        }
    }

    #[test]
    fn aggregated_csv_columns() {
        let d = SpatialDataset::new(vec!["x".into()], "y", vec![rec("a", 0.0, 0.0, 2.0, 5.0)]).unwrap();
        let agg = aggregate(&d, &GridSpec::unit_square(1)).unwrap();
        let mut buf = Vec::new();
        agg.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "cell_j,n_j,y_plus,x_bar_1\n0,1,5,2\n");
    }
}
