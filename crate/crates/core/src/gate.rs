//! Adaptive teacher freezing.
//!
//! For a teacher/student pair with predictions `y_t`, `y_s` and one-hot label
//! `y`, let `d_t = |y_t - y|_1` and `d_s = |y_s - y|_1`. Then
//!
//! ```text
//! G       = |y_t - y_s|_1
//! epsilon = exp(-d_t / (d_s + d_t))        in (1/e, 1]
//! delta   = d_s - epsilon * d_t            in [d_s - d_t, d_s)
//! ```
//!
//! and the teacher is frozen for the step when `G >= delta`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Head, ModuleId};
use crate::numerics::Distribution;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Fusion,
    Top,
    Main,
}

impl Role {
    pub fn head(self) -> Head {
        match self {
            Role::Fusion => Head::Fused,
            Role::Top => Head::Top,
            Role::Main => Head::Main,
        }
    }

    /// Parameters owned exclusively by this role, i.e. what freezing it suspends.
    pub fn exclusive_modules(self) -> &'static [ModuleId] {
        match self {
            Role::Fusion => &[ModuleId::Attention, ModuleId::HeadFused],
            Role::Top => &[ModuleId::TopBranch, ModuleId::HeadTop],
            Role::Main => &[ModuleId::MainBranch, ModuleId::HeadMain],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TeacherStudentPair {
    teacher: Role,
    student: Role,
}

impl TeacherStudentPair {
    pub const FUSION_TOP: Self = Self {
        teacher: Role::Fusion,
        student: Role::Top,
    };
    pub const FUSION_MAIN: Self = Self {
        teacher: Role::Fusion,
        student: Role::Main,
    };
    pub const TOP_MAIN: Self = Self {
        teacher: Role::Top,
        student: Role::Main,
    };
    pub const ALL: [Self; 3] = [Self::FUSION_TOP, Self::FUSION_MAIN, Self::TOP_MAIN];

    pub fn new(teacher: Role, student: Role) -> Result<Self> {
        let p = Self { teacher, student };
        if Self::ALL.contains(&p) {
            Ok(p)
        } else {
            Err(Error::invalid(format!(
                "{teacher:?}->{student:?} is not a gated pair (fusion-top, fusion-main, top-main)"
            )))
        }
    }

    pub fn teacher(&self) -> Role {
        self.teacher
    }

    pub fn student(&self) -> Role {
        self.student
    }
}

impl fmt::Display for TeacherStudentPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |r: Role| match r {
            Role::Fusion => "fusion",
            Role::Top => "top",
            Role::Main => "main",
        };
        write!(f, "{}-{}", name(self.teacher), name(self.student))
    }
}

impl FromStr for TeacherStudentPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let role = |r: &str| match r {
            "fusion" => Ok(Role::Fusion),
            "top" => Ok(Role::Top),
            "main" => Ok(Role::Main),
            other => Err(Error::invalid(format!("unknown role {other:?}"))),
        };
        let (t, st) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("pair {s:?} is not teacher-student")))?;
        Self::new(role(t)?, role(st)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision<S> {
    pub pair: TeacherStudentPair,
    pub g: S,
    pub epsilon: S,
    pub delta: S,
    pub freeze_teacher: bool,
    /// Both predictions matched the label exactly; gating skipped.
    pub degenerate: bool,
}

fn l1<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}

fn check_len<S: Scalar>(a: &Distribution<S>, b: &Distribution<S>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "gate",
            format!("distributions of length {} and {}", a.len(), b.len()),
        ));
    }
    Ok(())
}

/// `G = |y_t - y_s|_1`.
pub fn performance_gap<S: Scalar>(y_t: &Distribution<S>, y_s: &Distribution<S>) -> Result<S> {
    check_len(y_t, y_s)?;
    Ok(l1(y_t.probs(), y_s.probs()))
}

fn distances<S: Scalar>(y_t: &Distribution<S>, y_s: &Distribution<S>, y: &Distribution<S>) -> Result<(S, S)> {
    check_len(y_t, y)?;
    check_len(y_s, y)?;
    Ok((l1(y_t.probs(), y.probs()), l1(y_s.probs(), y.probs())))
}

/// `exp(-d_t / (d_s + d_t))` from precomputed distances.
pub fn epsilon_from_distances<S: Scalar>(d_t: S, d_s: S) -> Result<S> {
    let denom = d_s + d_t;
    if denom <= S::zero() {
        return Err(Error::Degenerate("d_s + d_t = 0".into()));
    }
    Ok((-d_t / denom).exp())
}

pub fn threshold_from_distances<S: Scalar>(d_t: S, d_s: S) -> Result<S> {
    Ok(d_s - epsilon_from_distances(d_t, d_s)? * d_t)
}

pub fn epsilon<S: Scalar>(y_t: &Distribution<S>, y_s: &Distribution<S>, y: &Distribution<S>) -> Result<S> {
    let (d_t, d_s) = distances(y_t, y_s, y)?;
    epsilon_from_distances(d_t, d_s)
}

pub fn threshold<S: Scalar>(y_t: &Distribution<S>, y_s: &Distribution<S>, y: &Distribution<S>) -> Result<S> {
    let (d_t, d_s) = distances(y_t, y_s, y)?;
    threshold_from_distances(d_t, d_s)
}

/// Verdict from an already-aggregated gap and distances.
pub fn decide_from_distances<S: Scalar>(pair: TeacherStudentPair, g: S, d_t: S, d_s: S) -> GateDecision<S> {
    match epsilon_from_distances(d_t, d_s) {
        Ok(eps) => {
            let delta = d_s - eps * d_t;
            GateDecision {
                pair,
                g,
                epsilon: eps,
                delta,
                freeze_teacher: g >= delta,
                degenerate: false,
            }
        }
        Err(_) => GateDecision {
            pair,
            g,
            epsilon: S::one(),
            delta: S::zero(),
            freeze_teacher: false,
            degenerate: true,
        },
    }
}

pub fn decide<S: Scalar>(
    pair: TeacherStudentPair,
    y_t: &Distribution<S>,
    y_s: &Distribution<S>,
    y: &Distribution<S>,
) -> Result<GateDecision<S>> {
    let g = performance_gap(y_t, y_s)?;
    let (d_t, d_s) = distances(y_t, y_s, y)?;
    Ok(decide_from_distances(pair, g, d_t, d_s))
}

/// Batch verdict: `G`, `d_t`, `d_s` are averaged over samples first.
pub fn decide_batch<S: Scalar>(
    pair: TeacherStudentPair,
    batch: &[(&Distribution<S>, &Distribution<S>, &Distribution<S>)],
) -> Result<GateDecision<S>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (mut g, mut dt, mut ds) = (S::zero(), S::zero(), S::zero());
    for &(y_t, y_s, y) in batch {
        g += performance_gap(y_t, y_s)?;
        let (a, b) = distances(y_t, y_s, y)?;
        dt += a;
        ds += b;
    }
    let n = S::lit(batch.len() as f64);
    Ok(decide_from_distances(pair, g / n, dt / n, ds / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Distribution<f64> {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn gap_examples() {
        assert_eq!(performance_gap(&d(&[0.2, 0.8]), &d(&[0.2, 0.8])).unwrap(), 0.0);
        let g = performance_gap(&d(&[0.7, 0.3]), &d(&[0.4, 0.6])).unwrap();
        assert!((g - 0.6).abs() < 1e-15);
        assert_eq!(performance_gap(&d(&[1.0, 0.0, 0.0]), &d(&[0.0, 0.0, 1.0])).unwrap(), 2.0);
        assert!(performance_gap(&d(&[1.0]), &d(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon_from_distances(0.0, 0.3).unwrap(), 1.0);
        let e = epsilon_from_distances(0.5f64, 0.5).unwrap();
        assert!((e - (-0.5f64).exp()).abs() < 1e-15);
        assert!((e - 0.606531).abs() < 1e-6);
        let e = epsilon_from_distances(0.4f64, 0.8).unwrap();
        assert!((e - 0.716531).abs() < 1e-6);
        assert!(matches!(epsilon_from_distances(0.0f64, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_from_distances(0.0, 0.7).unwrap(), 0.7);
        let dlt = threshold_from_distances(0.8f64, 0.8).unwrap();
        assert!((dlt - 0.8 * (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((dlt / 0.8 - 0.393469).abs() < 1e-6);
    }

    #[test]
    fn worked_case_does_not_freeze() {
        let y = d(&[1.0, 0.0]);
        let dec = decide(TeacherStudentPair::FUSION_TOP, &d(&[0.7, 0.3]), &d(&[0.4, 0.6]), &y).unwrap();
        assert!((dec.g - 0.6).abs() < 1e-12);
        assert!((dec.epsilon - 0.716531).abs() < 1e-6);
        assert!((dec.delta - 0.770081).abs() < 1e-6);
        assert!(!dec.freeze_teacher && !dec.degenerate);
    }

    #[test]
    fn perfect_teacher_freezes_at_boundary() {
        let y = d(&[0.0, 1.0, 0.0, 0.0]);
        let ys = d(&[0.1, 0.5, 0.3, 0.1]);
        let dec = decide(TeacherStudentPair::TOP_MAIN, &y, &ys, &y).unwrap();
        assert_eq!(dec.g, dec.delta);
        assert!(dec.freeze_teacher);
    }

    #[test]
    fn equal_predictions_never_freeze() {
        let y = d(&[1.0, 0.0, 0.0, 0.0]);
        let p = d(&[0.4, 0.2, 0.2, 0.2]);
        let dec = decide(TeacherStudentPair::FUSION_MAIN, &p, &p, &y).unwrap();
        assert_eq!(dec.g, 0.0);
        assert!(dec.delta > 0.0 && !dec.freeze_teacher);
    }

    #[test]
    fn degenerate_case_skips_gating() {
        let y = d(&[1.0, 0.0]);
        let dec = decide(TeacherStudentPair::FUSION_TOP, &y, &y, &y).unwrap();
        assert!(dec.degenerate && !dec.freeze_teacher);
        assert_eq!((dec.epsilon, dec.delta), (1.0, 0.0));
    }

    #[test]
    fn batch_uses_mean_distances() {
        let y = d(&[1.0, 0.0]);
        let (a, b) = (d(&[0.9, 0.1]), d(&[0.3, 0.7]));
        let (c, e) = (d(&[0.5, 0.5]), d(&[0.6, 0.4]));
        let dec = decide_batch(TeacherStudentPair::FUSION_TOP, &[(&a, &b, &y), (&c, &e, &y)]).unwrap();
        let g = (1.2 + 0.2) / 2.0;
        let (dt, ds) = ((0.2 + 1.0) / 2.0, (1.4 + 0.8) / 2.0);
        let want = decide_from_distances(TeacherStudentPair::FUSION_TOP, g, dt, ds);
        assert!((dec.g - want.g).abs() < 1e-15);
        assert!((dec.delta - want.delta).abs() < 1e-15);
        assert_eq!(dec.freeze_teacher, want.freeze_teacher);
    }

    #[test]
    fn only_three_pairs_exist() {
        assert!(TeacherStudentPair::new(Role::Main, Role::Top).is_err());
        assert!(TeacherStudentPair::new(Role::Fusion, Role::Fusion).is_err());
        for p in TeacherStudentPair::ALL {
            assert_eq!(p.to_string().parse::<TeacherStudentPair>().unwrap(), p);
        }
        assert!("main-top".parse::<TeacherStudentPair>().is_err());
    }
}
