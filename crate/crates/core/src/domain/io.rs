//! CSV and JSON readers and writers for the domain types.
//!
//! Count files carry one header row: the index columns (`obs_id`, and
//! `bin_id` for binned data) followed by the station labels. Bin indices are
//! 0-based in files. Reals are written with 17 significant digits, integral
//! values as plain integers. Empty cells and `NA` mark missing values; only
//! the preprocessing reader accepts them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    AdaptationSummary, BinnedObservationSet, ChainTrace, Matrix, ObservationSet, OdMatrix,
    ParamLayout, PosteriorDraws, StructuralZeros, TravelTimeTable,
};
use crate::error::{Error, Result};

/// Formats a real so that parsing it back is bit-exact.
pub fn format_real(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.16e}")
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Opens a CSV writer whose first line is `#schema=<schema>`.
pub fn schema_csv_writer(path: &Path, schema: &str) -> Result<csv::Writer<fs::File>> {
    use std::io::Write;
    let mut f = fs::File::create(path)?;
    writeln!(f, "#schema={schema}")?;
    Ok(csv::Writer::from_writer(f))
}

/// Reads a CSV written by [`schema_csv_writer`], failing on a missing or
/// different schema line.
pub fn schema_csv_reader(path: &Path, schema: &str) -> Result<csv::Reader<std::io::Cursor<String>>> {
    require_file(path)?;
    let text = fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let found = first.trim_end_matches('\r').strip_prefix("#schema=").unwrap_or("").to_string();
    if found != schema {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            expected: schema.to_string(),
            found: if found.is_empty() { "none".into() } else { found },
        });
    }
    Ok(csv::Reader::from_reader(std::io::Cursor::new(rest.to_string())))
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::NotFound(path.to_path_buf()))
    }
}

/// A count table with leading integer index columns and possibly missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    pub index_names: Vec<String>,
    pub labels: Vec<String>,
    pub index: Vec<Vec<u64>>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CountTable {
    /// Values as a dense matrix; fails on any missing cell.
    pub fn dense(&self, path: &Path) -> Result<Matrix> {
        let mut data = Vec::with_capacity(self.values.len() * self.labels.len());
        for (r, row) in self.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                data.push(v.ok_or_else(|| {
                    parse_err(path, format!("missing value at row {r}, column {}", self.labels[c]))
                })?);
            }
        }
        Matrix::from_vec(self.values.len(), self.labels.len(), data)
    }
}

const INDEX_COLUMNS: [&str; 3] = ["obs_id", "bin_id", "time"];

pub fn read_count_table(path: &Path) -> Result<CountTable> {
    require_file(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let n_index = header
        .iter()
        .take_while(|h| INDEX_COLUMNS.contains(&h.as_str()))
        .count();
    let labels = header[n_index..].to_vec();
    if labels.is_empty() {
        return Err(parse_err(path, "no station columns"));
    }
    let mut index = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(parse_err(path, format!("row {r} has {} fields", rec.len())));
        }
        let idx = (0..n_index)
            .map(|k| {
                rec[k]
                    .trim()
                    .parse::<u64>()
                    .map_err(|e| parse_err(path, format!("row {r}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let vals = (n_index..rec.len())
            .map(|k| {
                let cell = rec[k].trim();
                if cell.is_empty() || cell == "NA" {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|e| parse_err(path, format!("row {r}, column {k}: {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        index.push(idx);
        values.push(vals);
    }
    Ok(CountTable {
        index_names: header[..n_index].to_vec(),
        labels,
        index,
        values,
    })
}

pub fn write_count_table(path: &Path, t: &CountTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(t.index_names.iter().chain(&t.labels))?;
    for (idx, row) in t.index.iter().zip(&t.values) {
        let rec: Vec<String> = idx
            .iter()
            .map(u64::to_string)
            .chain(row.iter().map(|v| v.map_or_else(|| "NA".to_string(), format_real)))
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn matrix_table(labels: &[String], m: &Matrix) -> CountTable {
    CountTable {
        index_names: vec!["obs_id".into()],
        labels: labels.to_vec(),
        index: (0..m.rows() as u64).map(|n| vec![n]).collect(),
        values: (0..m.rows())
            .map(|r| m.row(r).iter().map(|&v| Some(v)).collect())
            .collect(),
    }
}

pub fn write_observations(x_path: &Path, y_path: &Path, obs: &ObservationSet) -> Result<()> {
    write_count_table(x_path, &matrix_table(obs.labels(), obs.x()))?;
    write_count_table(y_path, &matrix_table(obs.labels(), obs.y()))
}

pub fn read_observations(x_path: &Path, y_path: &Path) -> Result<ObservationSet> {
    let tx = read_count_table(x_path)?;
    let ty = read_count_table(y_path)?;
    if tx.labels != ty.labels {
        return Err(Error::Shape(format!(
            "station labels differ between {} and {}",
            x_path.display(),
            y_path.display()
        )));
    }
    ObservationSet::new(tx.dense(x_path)?, ty.dense(y_path)?, Some(tx.labels))
}

/// Window metadata stored next to binned count files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub observations: usize,
    pub departure_bins: usize,
    pub arrival_bins: usize,
    pub bin_width: f64,
    pub t0: usize,
    pub t1: usize,
}

pub const BINNED_X: &str = "Xb.csv";
pub const BINNED_Y: &str = "Yb.csv";
pub const WINDOW_META: &str = "window.json";

fn binned_table(labels: &[String], n_obs: usize, bins: usize, data: &[f64]) -> CountTable {
    let s = labels.len();
    let mut t = CountTable {
        index_names: vec!["obs_id".into(), "bin_id".into()],
        labels: labels.to_vec(),
        index: Vec::with_capacity(n_obs * bins),
        values: Vec::with_capacity(n_obs * bins),
    };
    for n in 0..n_obs {
        for b in 0..bins {
            t.index.push(vec![n as u64, b as u64]);
            let off = (n * bins + b) * s;
            t.values.push(data[off..off + s].iter().map(|&v| Some(v)).collect());
        }
    }
    t
}

/// Writes `Xb.csv`, `Yb.csv` and `window.json` into `dir`.
pub fn write_binned(dir: &Path, b: &BinnedObservationSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = b.observations();
    write_count_table(
        &dir.join(BINNED_X),
        &binned_table(b.labels(), n, b.departure_bins(), b.xb()),
    )?;
    write_count_table(
        &dir.join(BINNED_Y),
        &binned_table(b.labels(), n, b.arrival_bins(), b.yb()),
    )?;
    let meta = WindowMeta {
        observations: n,
        departure_bins: b.departure_bins(),
        arrival_bins: b.arrival_bins(),
        bin_width: b.bin_width(),
        t0: b.t0(),
        t1: b.t1(),
    };
    write_json(&dir.join(WINDOW_META), &meta)
}

fn check_binned_index(path: &Path, t: &CountTable, n_obs: usize, bins: usize) -> Result<()> {
    if t.index_names.len() != 2 || t.index.len() != n_obs * bins {
        return Err(parse_err(
            path,
            format!("expected {n_obs}x{bins} rows indexed by obs_id,bin_id"),
        ));
    }
    for (r, idx) in t.index.iter().enumerate() {
        if idx[0] as usize != r / bins || idx[1] as usize != r % bins {
            return Err(parse_err(path, format!("row {r} out of order")));
        }
    }
    Ok(())
}

pub fn read_binned(dir: &Path) -> Result<BinnedObservationSet> {
    let meta: WindowMeta = read_json(&dir.join(WINDOW_META))?;
    let xp = dir.join(BINNED_X);
    let yp = dir.join(BINNED_Y);
    let tx = read_count_table(&xp)?;
    let ty = read_count_table(&yp)?;
    check_binned_index(&xp, &tx, meta.observations, meta.departure_bins)?;
    check_binned_index(&yp, &ty, meta.observations, meta.arrival_bins)?;
    if tx.labels != ty.labels {
        return Err(Error::Shape("station labels differ between Xb and Yb".into()));
    }
    BinnedObservationSet::new(
        meta.observations,
        meta.departure_bins,
        meta.bin_width,
        meta.t0,
        meta.t1,
        tx.dense(&xp)?.as_slice().to_vec(),
        ty.dense(&yp)?.as_slice().to_vec(),
        tx.labels,
    )
}

fn write_plain_rows<T: ToString>(path: &Path, rows: &[Vec<T>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in rows {
        w.write_record(r.iter().map(ToString::to_string))?;
    }
    w.flush()?;
    Ok(())
}

fn read_plain_rows<T: std::str::FromStr>(path: &Path) -> Result<Vec<Vec<T>>>
where
    T::Err: std::fmt::Display,
{
    require_file(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        rows.push(
            rec?.iter()
                .map(|c| {
                    c.trim()
                        .parse::<T>()
                        .map_err(|e| parse_err(path, format!("row {r}: {e}")))
                })
                .collect::<Result<Vec<T>>>()?,
        );
    }
    Ok(rows)
}

/// S×S matrix without header.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let rows: Vec<Vec<String>> = m
        .to_rows()
        .into_iter()
        .map(|r| r.into_iter().map(format_real).collect())
        .collect();
    write_plain_rows(path, &rows)
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    Matrix::from_rows(&read_plain_rows::<f64>(path)?)
}

pub fn write_od_matrix_csv(path: &Path, m: &OdMatrix) -> Result<()> {
    write_matrix_csv(path, m.alpha())
}

/// Reads and validates an OD matrix; structural zeros are not stored in CSV.
pub fn read_od_matrix_csv(path: &Path) -> Result<OdMatrix> {
    OdMatrix::new(read_matrix_csv(path)?, None)
}

#[derive(Serialize, Deserialize)]
struct OdJson {
    #[serde(rename = "S")]
    s: usize,
    alpha: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    structural_zeros: Vec<(usize, usize)>,
}

pub fn write_od_matrix_json(path: &Path, m: &OdMatrix) -> Result<()> {
    let zeros = m
        .structural_zeros()
        .map(|z| {
            (0..z.size())
                .flat_map(|i| (0..z.size()).map(move |j| (i, j)))
                .filter(|&(i, j)| z.is_zero(i, j))
                .collect()
        })
        .unwrap_or_default();
    write_json(
        path,
        &OdJson {
            s: m.size(),
            alpha: m.to_rows(),
            structural_zeros: zeros,
        },
    )
}

pub fn read_od_matrix_json(path: &Path) -> Result<OdMatrix> {
    let j: OdJson = read_json(path)?;
    if j.alpha.len() != j.s {
        return Err(parse_err(path, format!("S = {} but {} rows", j.s, j.alpha.len())));
    }
    let zeros = if j.structural_zeros.is_empty() {
        None
    } else {
        Some(StructuralZeros::from_pairs(j.s, &j.structural_zeros)?)
    };
    OdMatrix::new(Matrix::from_rows(&j.alpha)?, zeros)
}

/// Dispatches on the extension (`.json` or CSV).
pub fn read_od_matrix(path: &Path) -> Result<OdMatrix> {
    if path.extension().is_some_and(|e| e == "json") {
        read_od_matrix_json(path)
    } else {
        read_od_matrix_csv(path)
    }
}

pub fn write_travel_times(path: &Path, t: &TravelTimeTable) -> Result<()> {
    write_plain_rows(path, &t.to_rows())
}

pub fn read_travel_times(path: &Path) -> Result<TravelTimeTable> {
    TravelTimeTable::from_rows(&read_plain_rows::<u32>(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    require_file(path)?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

/// Sidecar written next to per-chain draw files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsSidecar {
    pub layout: ParamLayout,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub max_tree_depth: u32,
    pub adaptation: Vec<AdaptationSummary>,
}

pub const DRAWS_SIDECAR: &str = "adaptation.json";

pub fn chain_file(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("draws_chain{chain}.csv"))
}

/// One CSV per chain plus the adaptation sidecar.
pub fn write_draws(dir: &Path, d: &PosteriorDraws) -> Result<()> {
    fs::create_dir_all(dir)?;
    let names = d.names();
    for (c, ch) in d.chains().iter().enumerate() {
        let mut w = csv::Writer::from_path(chain_file(dir, c))?;
        let header: Vec<&str> = names
            .iter()
            .map(String::as_str)
            .chain(["divergent", "tree_depth", "step_size", "accept_stat"])
            .collect();
        w.write_record(&header)?;
        for k in 0..ch.values.len() {
            let rec: Vec<String> = ch.values[k]
                .iter()
                .map(|&v| format_real(v))
                .chain([
                    u8::from(ch.divergent[k]).to_string(),
                    ch.tree_depth[k].to_string(),
                    format_real(ch.step_size[k]),
                    format_real(ch.accept_stat.get(k).copied().unwrap_or(f64::NAN)),
                ])
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    write_json(
        &dir.join(DRAWS_SIDECAR),
        &DrawsSidecar {
            layout: d.layout().clone(),
            chains: d.n_chains(),
            draws_per_chain: d.n_draws(),
            max_tree_depth: d.max_tree_depth(),
            adaptation: d.adaptation().to_vec(),
        },
    )
}

pub fn read_draws(dir: &Path) -> Result<PosteriorDraws> {
    let side: DrawsSidecar = read_json(&dir.join(DRAWS_SIDECAR))?;
    let p = side.layout.len();
    let mut chains = Vec::with_capacity(side.chains);
    for c in 0..side.chains {
        let path = chain_file(dir, c);
        require_file(&path)?;
        let mut rdr = csv::Reader::from_path(&path)?;
        let header = rdr.headers()?.clone();
        if header.len() != p + 4 {
            return Err(parse_err(&path, format!("expected {} columns", p + 4)));
        }
        let mut ch = ChainTrace::default();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|e| parse_err(&path, format!("row {r}, column {k}: {e}")))
            };
            ch.values.push((0..p).map(num).collect::<Result<_>>()?);
            ch.divergent.push(num(p)? != 0.0);
            ch.tree_depth.push(num(p + 1)? as u32);
            ch.step_size.push(num(p + 2)?);
            ch.accept_stat.push(num(p + 3)?);
        }
        chains.push(ch);
    }
    PosteriorDraws::new(side.layout, side.max_tree_depth, chains, side.adaptation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn od_matrix_csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let z = StructuralZeros::from_pairs(3, &[(0, 2)]).unwrap();
        let m = OdMatrix::new(
            Matrix::from_rows(&[
                vec![0.0, 1.0, 0.0],
                vec![0.1, 0.0, 0.9],
                vec![1.0 / 3.0, 2.0 / 3.0, 0.0],
            ])
            .unwrap(),
            Some(z),
        )
        .unwrap();
        let p = dir.path().join("a.csv");
        write_od_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_od_matrix_csv(&p).unwrap().alpha(), m.alpha());
        let p = dir.path().join("a.json");
        write_od_matrix_json(&p, &m).unwrap();
        assert_eq!(read_od_matrix(&p).unwrap(), m);
    }

    #[test]
    fn missing_file_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_observations(&dir.path().join("X.csv"), &dir.path().join("Y.csv"));
        assert!(matches!(err, Err(Error::NotFound(_))));
    }

    #[test]
    fn missing_cells_parse_as_none() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(&p, "obs_id,a,b\n0,1,NA\n1,,2.5\n").unwrap();
        let t = read_count_table(&p).unwrap();
        assert_eq!(t.values, vec![vec![Some(1.0), None], vec![None, Some(2.5)]]);
        assert!(t.dense(&p).is_err());
    }

    proptest! {
        #[test]
        fn observation_round_trip_is_bit_exact(
            n in 1usize..6,
            s in 1usize..5,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from(seed, &[]);
            let gen = |rng: &mut crate::rng::Rng| -> Vec<f64> {
                (0..n * s)
                    .map(|k| if k % 2 == 0 { rng.random_range(0..1000) as f64 } else { rng.random::<f64>() * 1e3 })
                    .collect()
            };
            let x = Matrix::from_vec(n, s, gen(&mut rng)).unwrap();
            let y = Matrix::from_vec(n, s, gen(&mut rng)).unwrap();
            let obs = ObservationSet::new(x, y, None).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (xp, yp) = (dir.path().join("X.csv"), dir.path().join("Y.csv"));
            write_observations(&xp, &yp, &obs).unwrap();
            let back = read_observations(&xp, &yp).unwrap();
            prop_assert_eq!(back, obs);
        }

        #[test]
        fn binned_round_trip_is_bit_exact(
            n in 1usize..4,
            t in 2usize..5,
            s in 1usize..4,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from(seed, &[1]);
            let gap = 1;
            let xb: Vec<f64> = (0..n * t * s).map(|_| rng.random::<f64>() * 50.0).collect();
            let yb: Vec<f64> = (0..n * (t - gap) * s).map(|_| rng.random_range(0..40) as f64).collect();
            let labels = (0..s).map(|i| format!("st{i}")).collect();
            let b = BinnedObservationSet::new(n, t, 5.0, 3, 3 + gap, xb, yb, labels).unwrap();
            let dir = tempfile::tempdir().unwrap();
            write_binned(dir.path(), &b).unwrap();
            prop_assert_eq!(read_binned(dir.path()).unwrap(), b);
        }
    }

    #[test]
    fn draws_round_trip() {
        let layout = ParamLayout::Od {
            stations: 2,
            intercepts: true,
        };
        let ch = ChainTrace {
            values: vec![vec![0.0, 1.0, 1.0, 0.0, 0.7, 1.3, 0.1, -0.25]; 3],
            divergent: vec![false, true, false],
            tree_depth: vec![2, 3, 10],
            step_size: vec![0.3; 3],
            accept_stat: vec![0.8, 0.9, 0.95],
        };
        let d = PosteriorDraws::new(layout, 10, vec![ch.clone(), ch], vec![AdaptationSummary::default(); 2])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_draws(dir.path(), &d).unwrap();
        assert_eq!(read_draws(dir.path()).unwrap(), d);
    }
}
