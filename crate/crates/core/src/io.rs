//! JSON formats for problems, certificates and polytopes.
//!
//! Matrices are nested row-major arrays. An empty outer array is a matrix
//! with no rows; its column count is taken from the surrounding dimensions.
//! Omitted offset vectors (`f`, `g1`, `g`, `g3`) mean zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{Channel, ConstraintRow, MultiplierCone, Problem, ProblemKind, StageData};
use crate::oracle::Polytope;
use crate::synthesis::{Certificate, VerificationReport};
use crate::Real;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{field}: ragged matrix (row {row} has {got} entries, expected {expected})")]
    Ragged {
        field: String,
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("unknown problem kind {0:?}")]
    Kind(String),
    #[error("problem has no stages")]
    NoStages,
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelJson {
    pub size: usize,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B1")]
    pub b1: Rows,
    #[serde(rename = "B2", default)]
    pub b2: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g1: Option<Vec<f64>>,
    #[serde(rename = "C1")]
    pub c1: Rows,
    #[serde(rename = "D11")]
    pub d11: Rows,
    #[serde(rename = "D12", default)]
    pub d12: Rows,
    #[serde(default)]
    pub constraints: Vec<ConstraintJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g3: Option<Vec<f64>>,
    #[serde(rename = "C3", default)]
    pub c3: Rows,
    #[serde(rename = "D31", default)]
    pub d31: Rows,
    #[serde(rename = "D32", default)]
    pub d32: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemJson {
    pub kind: String,
    pub x_bar: Vec<f64>,
    #[serde(rename = "Pf", default)]
    pub pf: Rows,
    #[serde(default)]
    pub cone: Vec<ChannelJson>,
    pub stages: Vec<StageJson>,
}

fn matrix(field: &str, rows: &Rows, cols_if_empty: usize) -> Result<DMatrix<f64>, IoError> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, cols_if_empty));
    }
    let cols = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(IoError::Ragged {
                field: field.to_string(),
                row: i,
                got: r.len(),
                expected: cols,
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn vector(v: &Option<Vec<f64>>, len: usize) -> DVector<f64> {
    match v {
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(len),
    }
}

fn rows_of<T: Real>(m: &DMatrix<T>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].to_f64_lossy()).collect())
        .collect()
}

fn vec_of<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn nonzero_vec<T: Real>(v: &DVector<T>) -> Option<Vec<f64>> {
    v.iter().any(|x| *x != T::zero()).then(|| vec_of(v))
}

impl StageJson {
    fn to_stage(&self, k: usize, l: usize) -> Result<StageData<f64>, IoError> {
        let name = |f: &str| format!("stages[{k}].{f}");
        let a = matrix(&name("A"), &self.a, 0)?;
        let n = a.nrows();
        let b1 = matrix(&name("B1"), &self.b1, 0)?;
        let m = b1.ncols();
        let c1 = matrix(&name("C1"), &self.c1, n)?;
        let p = c1.nrows();
        let c3 = matrix(&name("C3"), &self.c3, n)?;
        let q = c3.nrows();
        let b2 = if self.b2.is_empty() {
            DMatrix::zeros(n, l)
        } else {
            matrix(&name("B2"), &self.b2, l)?
        };
        let d12 = if self.d12.is_empty() {
            DMatrix::zeros(p, l)
        } else {
            matrix(&name("D12"), &self.d12, l)?
        };
        let d31 = if self.d31.is_empty() {
            DMatrix::zeros(q, m)
        } else {
            matrix(&name("D31"), &self.d31, m)?
        };
        let d32 = if self.d32.is_empty() {
            DMatrix::zeros(q, l)
        } else {
            matrix(&name("D32"), &self.d32, l)?
        };
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let cm = matrix(&name(&format!("constraints[{i}].C")), &c.c, n)?;
                let r = cm.nrows();
                let dm = if c.d.is_empty() {
                    DMatrix::zeros(r, m)
                } else {
                    matrix(&name(&format!("constraints[{i}].D")), &c.d, m)?
                };
                Ok(ConstraintRow::new(vector(&c.g, r), cm, dm))
            })
            .collect::<Result<_, IoError>>()?;
        Ok(StageData {
            f: vector(&self.f, n),
            a,
            b1,
            b2,
            g1: vector(&self.g1, p),
            c1,
            d11: if self.d11.is_empty() {
                DMatrix::zeros(p, m)
            } else {
                matrix(&name("D11"), &self.d11, m)?
            },
            d12,
            constraints,
            g3: vector(&self.g3, q),
            c3,
            d31,
            d32,
        })
    }

    fn from_stage<T: Real>(s: &StageData<T>) -> Self {
        Self {
            f: nonzero_vec(&s.f),
            a: rows_of(&s.a),
            b1: rows_of(&s.b1),
            b2: rows_of(&s.b2),
            g1: nonzero_vec(&s.g1),
            c1: rows_of(&s.c1),
            d11: rows_of(&s.d11),
            d12: rows_of(&s.d12),
            constraints: s
                .constraints
                .iter()
                .map(|c| ConstraintJson {
                    g: nonzero_vec(&c.g),
                    c: rows_of(&c.c),
                    d: rows_of(&c.d),
                })
                .collect(),
            g3: nonzero_vec(&s.g3),
            c3: rows_of(&s.c3),
            d31: rows_of(&s.d31),
            d32: rows_of(&s.d32),
        }
    }
}

impl ProblemJson {
    pub fn to_problem(&self) -> Result<Problem<f64>, IoError> {
        let kind: ProblemKind = self.kind.parse().map_err(|_| IoError::Kind(self.kind.clone()))?;
        if self.stages.is_empty() {
            return Err(IoError::NoStages);
        }
        let cone = MultiplierCone::new(
            self.cone
                .iter()
                .map(|c| Channel {
                    size: c.size,
                    bound: c.bound,
                })
                .collect(),
        );
        let l = cone.dim();
        let stages = self
            .stages
            .iter()
            .enumerate()
            .map(|(k, s)| s.to_stage(k, l))
            .collect::<Result<Vec<_>, _>>()?;
        let n = stages[0].n();
        let pf = if self.pf.is_empty() {
            DMatrix::zeros(1 + n, 1 + n)
        } else {
            matrix("Pf", &self.pf, 1 + n)?
        };
        Ok(Problem {
            stages,
            pf,
            x_bar: DVector::from_column_slice(&self.x_bar),
            cone,
            kind,
        })
    }

    pub fn from_problem<T: Real>(p: &Problem<T>) -> Self {
        Self {
            kind: p.kind.as_str().to_string(),
            x_bar: vec_of(&p.x_bar),
            pf: rows_of(&p.pf),
            cone: p
                .cone
                .channels
                .iter()
                .map(|c| ChannelJson {
                    size: c.size,
                    bound: c.bound.to_f64_lossy(),
                })
                .collect(),
            stages: p.stages.iter().map(StageJson::from_stage).collect(),
        }
    }
}

pub fn problem_from_str(s: &str) -> Result<Problem<f64>, IoError> {
    serde_json::from_str::<ProblemJson>(s)?.to_problem()
}

pub fn problem_to_string<T: Real>(p: &Problem<T>) -> String {
    serde_json::to_string_pretty(&ProblemJson::from_problem(p)).expect("problem serializes")
}

pub fn read_problem(path: &std::path::Path) -> Result<Problem<f64>, IoError> {
    problem_from_str(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsJson {
    pub phase1_status: String,
    pub phase1_iterations: usize,
    pub status: Option<String>,
    pub iterations: usize,
    pub blend: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateJson {
    pub kind: String,
    pub horizon: usize,
    pub nu: f64,
    pub nu_tilde: f64,
    pub feasibility_margin: f64,
    pub program_margin: f64,
    pub equality_violation: f64,
    #[serde(rename = "P_tilde")]
    pub p_tilde: Vec<Rows>,
    #[serde(rename = "K_tilde")]
    pub k_tilde: Vec<Rows>,
    #[serde(rename = "Z")]
    pub z: Rows,
    pub e_tilde: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Rows>,
    #[serde(rename = "K")]
    pub k: Vec<Rows>,
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: Vec<Rows>,
    pub stats: Option<StatsJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verification: Vec<(String, f64)>,
}

impl CertificateJson {
    pub fn new<T: Real>(cert: &Certificate<T>, report: Option<&VerificationReport<T>>) -> Self {
        let mats = |v: &[DMatrix<T>]| v.iter().map(rows_of).collect::<Vec<_>>();
        let f = |x: T| x.to_f64_lossy();
        let vals = &cert.values;
        let rec = &cert.recovered;
        Self {
            kind: cert.kind.as_str().to_string(),
            horizon: cert.horizon(),
            nu: f(rec.nu),
            nu_tilde: f(vals.nu_tilde),
            feasibility_margin: f(cert.feasibility_margin),
            program_margin: f(cert.program_margin),
            equality_violation: f(cert.equality_violation),
            p_tilde: mats(&vals.p_tilde),
            k_tilde: mats(&vals.k_tilde),
            z: rows_of(&vals.z),
            e_tilde: vals.e_tilde.iter().map(|e| e.iter().map(|x| f(*x)).collect()).collect(),
            p: mats(&rec.p),
            k: mats(&rec.k),
            d: rec.d.iter().map(|e| e.iter().map(|x| f(*x)).collect()).collect(),
            m: mats(&rec.m),
            stats: cert.stats.as_ref().map(|s| StatsJson {
                phase1_status: s.phase1_status.as_str().to_string(),
                phase1_iterations: s.phase1_iterations,
                status: s.status.map(|s| s.as_str().to_string()),
                iterations: s.iterations,
                blend: s.blend,
            }),
            verification: report
                .map(|r| r.worst.iter().map(|(fam, m)| (fam.as_str().to_string(), f(*m))).collect())
                .unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeJson {
    #[serde(rename = "H")]
    pub h_mat: Rows,
    pub h: Vec<f64>,
}

impl PolytopeJson {
    pub fn new<T: Real>(p: &Polytope<T>) -> Self {
        Self {
            h_mat: rows_of(&p.h_mat),
            h: vec_of(&p.h),
        }
    }

    pub fn to_polytope(&self, dim: usize) -> Result<Polytope<f64>, IoError> {
        Ok(Polytope {
            h_mat: matrix("H", &self.h_mat, dim)?,
            h: DVector::from_column_slice(&self.h),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_example;

    #[test]
    fn example_round_trips() {
        let p = build_example(0.2, 0.1).with_horizon(2).with_x_bar(DVector::from_vec(vec![1.0, -2.0]));
        let s = problem_to_string(&p);
        let back = problem_from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn omitted_offsets_are_zero() {
        let s = r#"{"kind":"nominal_finite","x_bar":[1],"Pf":[[0,0],[0,1]],
            "stages":[{"A":[[1]],"B1":[[1]],"C1":[[1],[0]],"D11":[[0],[1]],
            "constraints":[{"C":[[0.125]],"D":[[0]]}]},
            {"A":[[1]],"B1":[[1]],"C1":[[1],[0]],"D11":[[0],[1]],
            "constraints":[{"C":[[0.125]],"D":[[0]]}]}]}"#;
        let p = problem_from_str(s).unwrap();
        assert_eq!(p.kind, ProblemKind::NominalFinite);
        assert_eq!(p.stages[0].f, DVector::zeros(1));
        assert_eq!(p.stages[0].g1, DVector::zeros(2));
        assert_eq!(p.stages[0].b2.shape(), (1, 0));
        assert_eq!(p.stages[0].c3.shape(), (0, 1));
        assert_eq!(p.stages[0].constraints[0].g.len(), 1);
        crate::model::validate(&p).unwrap();
    }

    #[test]
    fn ragged_and_malformed_inputs_are_rejected() {
        assert!(problem_from_str("{").is_err());
        let s = r#"{"kind":"nominal_finite","x_bar":[0,0],"stages":[{"A":[[1,0],[0]],"B1":[[1],[1]],"C1":[],"D11":[]}]}"#;
        assert!(matches!(problem_from_str(s), Err(IoError::Ragged { .. })));
        let s = r#"{"kind":"bogus","x_bar":[],"stages":[]}"#;
        assert!(matches!(problem_from_str(s), Err(IoError::Kind(_))));
    }
}
