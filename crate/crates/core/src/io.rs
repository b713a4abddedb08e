//! On-disk formats: JSON matrices as arrays of rows, CSV data matrices and the
//! inline bracket syntax `[a,b;c,d]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintKind, Origin, QuadConstraint};
use crate::error::{Error, Result};
use crate::matcore::{Mat, SymMat};
use crate::plant::{DataSet, Nonlinearity, NonlinearitySpec, PlantModel, TimeDomain};
use crate::synth::{Certificate, Method, SolverStats};
use crate::verify::VerificationReport;

pub fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Serde adapter for `Mat` fields stored as arrays of rows.
pub mod mat_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        rows_of(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        mat_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Parses `[a,b;c,d]`: rows separated by `;`, entries by `,` or whitespace.
pub fn parse_bracket(s: &str) -> Result<Mat> {
    let t = s.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .ok_or_else(|| {
            Error::Parse(format!(
                "matrix literal must be enclosed in brackets: `{s}`"
            ))
        })?;
    if inner.trim().is_empty() {
        return Ok(Mat::zeros(0, 0));
    }
    let rows = inner
        .split(';')
        .map(|row| {
            row.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|x| !x.is_empty())
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number `{x}` in `{s}`")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let m = mat_from_rows(&rows)?;
    crate::matcore::check_finite(&m, "matrix literal")?;
    Ok(m)
}

pub fn format_bracket(m: &Mat) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            m.row(i)
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    format!("[{}]", rows.join(";"))
}

pub fn write_csv(path: &Path, m: &Mat) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|x| x.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Mat> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|x| {
                x.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("{}: bad number `{x}`", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let m = mat_from_rows(&rows).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    crate::matcore::check_finite(&m, &path.display().to_string())?;
    Ok(m)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DataMeta {
    time_domain: TimeDomain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_times: Option<Vec<f64>>,
}

/// Writes `U0.csv`, `X0.csv`, `X1.csv`, `F0.csv` and `meta.json` into `dir`.
pub fn write_dataset(dir: &Path, d: &DataSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("U0.csv"), &d.u0)?;
    write_csv(&dir.join("X0.csv"), &d.x0)?;
    write_csv(&dir.join("X1.csv"), &d.x1)?;
    write_csv(&dir.join("F0.csv"), &d.f0)?;
    write_json(
        &dir.join("meta.json"),
        &DataMeta {
            time_domain: d.domain,
            sample_times: d.sample_times.clone(),
        },
    )
}

pub fn read_dataset(dir: &Path) -> Result<DataSet> {
    let meta: DataMeta = read_json(&dir.join("meta.json"))?;
    let x0 = read_csv(&dir.join("X0.csv"))?;
    let t = x0.ncols();
    // An empty file stands for a matrix with no rows.
    let sized = |m: Mat| if m.nrows() == 0 { Mat::zeros(0, t) } else { m };
    DataSet::new(
        sized(read_csv(&dir.join("U0.csv"))?),
        x0,
        read_csv(&dir.join("X1.csv"))?,
        sized(read_csv(&dir.join("F0.csv"))?),
        meta.time_domain,
        meta.sample_times,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConstraintFile {
    kind: ConstraintKind,
    #[serde(rename = "Qhat")]
    q_hat: SymMat,
    #[serde(rename = "Shat", with = "mat_rows")]
    s_hat: Mat,
    #[serde(rename = "Rhat")]
    r_hat: SymMat,
    #[serde(rename = "H", with = "mat_rows")]
    h: Mat,
    #[serde(default, skip_serializing_if = "Origin::is_custom")]
    origin: Origin,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_mat_rows"
    )]
    l_structure: Option<Mat>,
}

pub fn constraint_to_json(c: &QuadConstraint) -> Result<String> {
    let f = ConstraintFile {
        kind: c.kind,
        q_hat: c.q_hat.clone(),
        s_hat: c.s_hat.clone(),
        r_hat: c.r_hat.clone(),
        h: c.h.clone(),
        origin: c.origin.clone(),
        l_structure: c.l_structure.clone(),
    };
    serde_json::to_string_pretty(&f).map_err(|e| Error::Parse(e.to_string()))
}

pub fn constraint_from_json(text: &str) -> Result<QuadConstraint> {
    let f: ConstraintFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut c = QuadConstraint::new(f.kind, f.q_hat, f.s_hat, f.r_hat, f.h)?;
    c.origin = f.origin;
    c.l_structure = f.l_structure;
    Ok(c)
}

pub fn read_constraint(path: &Path) -> Result<QuadConstraint> {
    constraint_from_json(&fs::read_to_string(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_constraint(path: &Path, c: &QuadConstraint) -> Result<()> {
    fs::write(path, constraint_to_json(c)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "A", with = "mat_rows")]
    a: Mat,
    #[serde(rename = "B", with = "mat_rows")]
    b: Mat,
    #[serde(rename = "L", with = "mat_rows")]
    l: Mat,
    #[serde(rename = "H", with = "mat_rows")]
    h: Mat,
    time_domain: TimeDomain,
    nonlinearity: NonlinearitySpec,
}

pub fn model_to_json(m: &PlantModel) -> Result<String> {
    let spec = m.f.spec().ok_or_else(|| {
        Error::Unsupported("a custom nonlinearity cannot be written to a model file".into())
    })?;
    let f = ModelFile {
        a: m.a.clone(),
        b: m.b.clone(),
        l: m.l.clone(),
        h: m.h.clone(),
        time_domain: m.domain,
        nonlinearity: spec.clone(),
    };
    serde_json::to_string_pretty(&f).map_err(|e| Error::Parse(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<PlantModel> {
    let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    PlantModel::new(
        f.a,
        f.b,
        f.l,
        f.h,
        Nonlinearity::from_spec(&f.nonlinearity)?,
        f.time_domain,
    )
}

pub fn read_model(path: &Path) -> Result<PlantModel> {
    model_from_json(&fs::read_to_string(path)?).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_model(path: &Path, m: &PlantModel) -> Result<()> {
    fs::write(path, model_to_json(m)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CertFile {
    method: Method,
    #[serde(rename = "K", with = "mat_rows")]
    k: Mat,
    #[serde(
        rename = "M",
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_mat_rows"
    )]
    m: Option<Mat>,
    #[serde(rename = "P")]
    p: SymMat,
    raw: BTreeMap<String, Vec<Vec<f64>>>,
    eps: f64,
    #[serde(
        rename = "L",
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_mat_rows"
    )]
    l: Option<Mat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decay_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver_stats: Option<SolverStats>,
}

pub fn certificate_to_json(c: &Certificate) -> Result<String> {
    let f = CertFile {
        method: c.method,
        k: c.k.clone(),
        m: c.m.clone(),
        p: c.p.clone(),
        raw: c.raw.iter().map(|(k, v)| (k.clone(), rows_of(v))).collect(),
        eps: c.eps,
        l: c.l.clone(),
        decay_rho: c.decay_rho,
        solver_stats: c.solver_stats.clone(),
    };
    serde_json::to_string_pretty(&f).map_err(|e| Error::Parse(e.to_string()))
}

pub fn certificate_from_json(text: &str) -> Result<Certificate> {
    let f: CertFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let raw = f
        .raw
        .iter()
        .map(|(k, v)| Ok((k.clone(), mat_from_rows(v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let expected: &[&str] = if f.method.is_nonlinear_feedback() {
        &["W", "Y1", "Y2"]
    } else {
        &["Y"]
    };
    for name in expected {
        if !raw.contains_key(*name) {
            return Err(Error::Malformed(format!(
                "certificate for {} lacks raw variable {name}",
                f.method
            )));
        }
    }
    if f.method.needs_l() && f.l.is_none() {
        return Err(Error::Malformed(format!(
            "certificate for {} lacks L",
            f.method
        )));
    }
    Ok(Certificate {
        method: f.method,
        k: f.k,
        m: f.m,
        p: f.p,
        raw,
        eps: f.eps,
        l: f.l,
        decay_rho: f.decay_rho,
        solver_stats: f.solver_stats,
    })
}

pub fn read_certificate(path: &Path) -> Result<Certificate> {
    certificate_from_json(&fs::read_to_string(path)?).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_certificate(path: &Path, c: &Certificate) -> Result<()> {
    fs::write(path, certificate_to_json(c)? + "\n")?;
    Ok(())
}

pub fn write_report(path: &Path, r: &VerificationReport) -> Result<()> {
    write_json(path, r)
}

pub fn read_report(path: &Path) -> Result<VerificationReport> {
    read_json(path)
}

mod opt_mat_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(rows_of).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<Mat>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|rows| mat_from_rows(&rows).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_passive, build_sector};
    use crate::matcore::mat;
    use proptest::prelude::*;

    #[test]
    fn bracket_literals() {
        assert_eq!(
            parse_bracket("[-2;-2.4]").unwrap(),
            mat(&[&[-2.0], &[-2.4]])
        );
        assert_eq!(
            parse_bracket(" [1, 2; 3 4] ").unwrap(),
            mat(&[&[1.0, 2.0], &[3.0, 4.0]])
        );
        assert!(parse_bracket("[1,2;3]").is_err());
        assert!(parse_bracket("1,2").is_err());
        assert!(parse_bracket("[1,x]").is_err());
        assert!(parse_bracket("[1,NaN]").is_err());
    }

    proptest! {
        #[test]
        fn bracket_round_trip(r in 1usize..4, c in 1usize..4, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mat::from_fn(r, c, |_, _| rng.random_range(-1e3..1e3));
            prop_assert_eq!(parse_bracket(&format_bracket(&m)).unwrap(), m);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = DataSet::new(
            mat(&[&[0.0, 0.1 + 0.2]]),
            mat(&[&[1.0, 2.0], &[3.0, 1.0 / 3.0]]),
            mat(&[&[-1.0, 2.5], &[0.0, 1e-17]]),
            mat(&[&[0.5, 0.25]]),
            TimeDomain::Continuous,
            Some(vec![0.0, 1.0]),
        )
        .unwrap();
        write_dataset(dir.path(), &d).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn dataset_without_nonlinearity_rows() {
        let dir = tempfile::tempdir().unwrap();
        let d = DataSet::new(
            mat(&[&[1.0, 0.0]]),
            mat(&[&[1.0, 2.0]]),
            mat(&[&[2.0, 3.0]]),
            Mat::zeros(0, 2),
            TimeDomain::Discrete,
            None,
        )
        .unwrap();
        write_dataset(dir.path(), &d).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_csv(&p).is_err());
    }

    #[test]
    fn constraint_round_trip() {
        for c in [
            build_passive(&mat(&[&[1.0, 0.0]])).unwrap(),
            build_sector(&mat(&[&[0.1]]), &mat(&[&[0.9]])).unwrap(),
        ] {
            let back = constraint_from_json(&constraint_to_json(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
        let text = r#"{"kind":"passive","Qhat":[[0]],"Shat":[[1]],"Rhat":[[0]],"H":[[1,0]]}"#;
        let c = constraint_from_json(text).unwrap();
        assert_eq!(c.n(), 2);
        let bad = r#"{"kind":"strict_r","Qhat":[[0]],"Shat":[[1]],"Rhat":[[1]],"H":[[1,0]]}"#;
        assert!(constraint_from_json(bad).is_err());
    }

    #[test]
    fn model_round_trip() {
        let m = crate::scenarios::surge_plant(crate::scenarios::surge_l(2.0)).unwrap();
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(
            (back.a, back.b, back.l, back.h, back.domain),
            (m.a, m.b, m.l, m.h, m.domain)
        );
        assert_eq!(back.f.spec(), m.f.spec());
    }

    #[test]
    fn certificate_round_trip_and_validation() {
        let data = crate::scenarios::example1_data().unwrap();
        let k = mat(&[&[35.8066, -2.1645]]);
        let p = SymMat::new(mat(&[&[0.5217, -0.0181], &[-0.0181, 0.015]])).unwrap();
        let c =
            Certificate::from_gains(Method::NlfbLinearOnly, &data, k, None, p, None, 1e-7).unwrap();
        let text = certificate_to_json(&c).unwrap();
        assert!(!text.contains("\"M\""));
        assert_eq!(certificate_from_json(&text).unwrap(), c);
        let stripped = text.replace("\"Y2\"", "\"Z\"");
        assert!(matches!(
            certificate_from_json(&stripped),
            Err(Error::Malformed(_))
        ));
    }
}
