//! CSV and plain-text artifacts. Every CSV has a header row; trajectory and
//! sweep files get a `<file>.meta` sidecar of `key: value` lines.
//!
//! Floats are written in Rust's shortest round-trip form, so a write/read
//! cycle is lossless and identical inputs give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::basis::DomainBasis;
use crate::error::{invalid, Error, Result};
use crate::generator::TrajectoryBundle;
use crate::linalg::Matrix;
use crate::recovery::RecoveryResult;
use crate::Scalar;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// `<path>.meta`
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_meta(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let body: String = pairs.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
    let p = meta_path(path);
    ensure_parent(&p)?;
    fs::write(p, body)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(meta_path(path))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Writes a header plus rows of already-formatted cells.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        if r.len() != header.len() {
            return invalid(format!("row has {} cells, header has {}", r.len(), header.len()));
        }
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric body. Cells that fail to parse (e.g. `NA`) become NaN.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(rec.iter().map(|c| c.trim().parse::<f64>().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

/// Columns whose header is `<prefix><index>`, in index order, as a `T × n` matrix.
pub fn columns_with_prefix(header: &[String], rows: &[Vec<f64>], prefix: &str) -> Result<Matrix<f64>> {
    let mut cols: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(c, h)| h.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()).map(|i| (i, c)))
        .collect();
    if cols.is_empty() {
        return invalid(format!("no '{prefix}*' columns"));
    }
    cols.sort_unstable();
    Ok(Matrix::from_fn(rows.len(), cols.len(), |t, j| rows[t][cols[j].1]))
}

fn fmt<S: Scalar>(x: S) -> String {
    format!("{}", x.f64())
}

fn named(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// `t, z_*, x_*, alpha_*`, plus a sidecar with the run parameters.
pub fn write_trajectory<S: Scalar>(path: &Path, bundle: &TrajectoryBundle<S>, extra_meta: &[(&str, String)]) -> Result<()> {
    let (t_len, d, p, k) = (bundle.latents.rows(), bundle.latents.cols(), bundle.observations.cols(), bundle.schedule.k);
    let mut header = vec!["t".to_string()];
    header.extend(named("z_", d));
    header.extend(named("x_", p));
    header.extend(named("alpha_", k));
    let rows: Vec<Vec<String>> = (0..t_len)
        .map(|t| {
            let mut r = vec![t.to_string()];
            r.extend(bundle.latents.row(t).iter().map(|x| fmt(*x)));
            r.extend(bundle.observations.row(t).iter().map(|x| fmt(*x)));
            r.extend(bundle.schedule.alphas[t].iter().map(|x| fmt(*x)));
            r
        })
        .collect();
    write_csv(path, &header, &rows)?;
    let mut meta = vec![
        ("d", d.to_string()),
        ("observation_dim", p.to_string()),
        ("K", k.to_string()),
        ("T", t_len.to_string()),
        ("noise_sigma", fmt(bundle.noise_sigma)),
        ("seed", bundle.seed.to_string()),
        ("family", bundle.schedule.family.to_string()),
    ];
    meta.extend(extra_meta.iter().cloned());
    write_meta(path, &meta)
}

/// Latents, observations and alphas from a trajectory CSV.
pub fn read_trajectory(path: &Path) -> Result<(Matrix<f64>, Matrix<f64>, Vec<Vec<f64>>)> {
    let (h, rows) = read_csv(path)?;
    let z = columns_with_prefix(&h, &rows, "z_")?;
    let x = columns_with_prefix(&h, &rows, "x_")?;
    let a = columns_with_prefix(&h, &rows, "alpha_")?;
    let alphas = (0..a.rows()).map(|t| a.row(t).to_vec()).collect();
    Ok((z, x, alphas))
}

/// `t, zhat_*`.
pub fn write_encoded<S: Scalar>(path: &Path, encoded: &Matrix<S>) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(named("zhat_", encoded.cols()));
    let rows: Vec<Vec<String>> = (0..encoded.rows())
        .map(|t| std::iter::once(t.to_string()).chain(encoded.row(t).iter().map(|x| fmt(*x))).collect())
        .collect();
    write_csv(path, &header, &rows)
}

/// Representation to recover from: `zhat_*` columns when present, else `z_*`.
pub fn read_representation(path: &Path) -> Result<Matrix<f64>> {
    let (h, rows) = read_csv(path)?;
    columns_with_prefix(&h, &rows, "zhat_").or_else(|_| columns_with_prefix(&h, &rows, "z_"))
}

/// `t, alpha_raw_*, alpha_smooth_*, alpha_cal_*, residual_norm`; calibrated
/// columns are `NA` when calibration was not run.
pub fn write_recovery<S: Scalar>(path: &Path, r: &RecoveryResult<S>) -> Result<()> {
    let n = r.domains.len();
    let mut header = vec!["t".to_string()];
    header.extend(r.domains.iter().map(|k| format!("alpha_raw_{k}")));
    header.extend(r.domains.iter().map(|k| format!("alpha_smooth_{k}")));
    header.extend(r.domains.iter().map(|k| format!("alpha_cal_{k}")));
    header.push("residual_norm".into());
    let rows: Vec<Vec<String>> = (0..r.len())
        .map(|t| {
            let mut row = vec![t.to_string()];
            row.extend(r.raw_alphas[t].iter().map(|x| fmt(*x)));
            row.extend(r.smoothed_alphas[t].iter().map(|x| fmt(*x)));
            match &r.calibrated_alphas {
                Some(c) => row.extend(c[t].iter().map(|x| fmt(*x))),
                None => row.extend(std::iter::repeat_n("NA".to_string(), n)),
            }
            row.push(fmt(r.residual_norms[t]));
            row
        })
        .collect();
    write_csv(path, &header, &rows)?;
    write_meta(
        path,
        &[
            ("domains", join(&r.domains)),
            ("lambda_used", fmt(r.lambda_used)),
            ("window_used", r.window_used.to_string()),
            ("warning", r.warning.clone().unwrap_or_else(|| "none".into())),
        ],
    )
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// Plain-text basis file:
///
/// ```text
/// domains: 0 1 2
/// counts: 600 600 600
/// sigma_min: 0.41
/// mu0: ...
/// b0: ...   (one line per column of B, in domain order after the baseline)
/// ```
pub fn write_basis<S: Scalar>(path: &Path, basis: &DomainBasis<S>) -> Result<()> {
    let vec_line = |v: &[S]| v.iter().map(|x| fmt(*x)).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    s += &format!("domains: {}\n", join(&basis.domains));
    s += &format!("counts: {}\n", join(&basis.sample_counts));
    s += &format!("sigma_min: {}\n", fmt(basis.sigma_min));
    s += &format!("mu0: {}\n", vec_line(&basis.mu0));
    for c in 0..basis.b.cols() {
        s += &format!("b{c}: {}\n", vec_line(&basis.b.col(c)));
    }
    ensure_parent(path)?;
    fs::write(path, s)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<DomainBasis<f64>> {
    let text = fs::read_to_string(path)?;
    let mut domains = None;
    let mut counts = None;
    let mut mu0 = None;
    let mut cols: Vec<(usize, Vec<f64>)> = Vec::new();
    let nums = |v: &str| -> Result<Vec<f64>> {
        v.split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad number '{x}' in basis file"))))
            .collect()
    };
    let ints = |v: &str| -> Result<Vec<usize>> {
        v.split_whitespace()
            .map(|x| x.parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad integer '{x}' in basis file"))))
            .collect()
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let Some((k, v)) = line.split_once(':') else {
            return invalid(format!("malformed basis line '{line}'"));
        };
        match k.trim() {
            "domains" => domains = Some(ints(v)?),
            "counts" => counts = Some(ints(v)?),
            "mu0" => mu0 = Some(nums(v)?),
            "sigma_min" => {}
            key => match key.strip_prefix('b').and_then(|i| i.parse::<usize>().ok()) {
                Some(i) => cols.push((i, nums(v)?)),
                None => return invalid(format!("unknown basis key '{key}'")),
            },
        }
    }
    let (Some(domains), Some(mu0)) = (domains, mu0) else {
        return invalid("basis file needs 'domains' and 'mu0'");
    };
    cols.sort_by_key(|c| c.0);
    if cols.len() + 1 != domains.len() || cols.iter().enumerate().any(|(i, c)| c.0 != i || c.1.len() != mu0.len()) {
        return invalid("basis columns do not match domains and mu0");
    }
    let columns: Vec<Vec<f64>> = cols.into_iter().map(|c| c.1).collect();
    let b = Matrix::from_columns(&columns);
    let counts = counts.unwrap_or_else(|| vec![0; domains.len()]);
    DomainBasis::new(domains, mu0, b, counts)
}
