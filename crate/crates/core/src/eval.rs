//! Pose-error metrics: MPJPE, Procrustes-aligned MPJPE, PCK and AUC.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

/// PCK radius in millimetres.
pub const PCK_RADIUS_MM: f64 = 150.0;

/// AUC thresholds: 5, 10, ..., 150 mm.
pub fn auc_thresholds() -> impl Iterator<Item = f64> {
    (1..=30).map(|k| 5.0 * k as f64)
}

/// Action labels in reporting order, with their table abbreviations.
pub const H36M_ACTIONS: [(&str, &str); 15] = [
    ("Directions", "Dir."),
    ("Discussion", "Disc."),
    ("Eating", "Eat."),
    ("Greeting", "Greet."),
    ("Phoning", "Phone."),
    ("Photo", "Photo."),
    ("Posing", "Pose."),
    ("Purchases", "Purch."),
    ("Sitting", "Sit."),
    ("SittingDown", "SitD."),
    ("Smoking", "Smoke."),
    ("Waiting", "Wait."),
    ("WalkDog", "WalkD."),
    ("Walking", "Walk."),
    ("WalkTogether", "WalkT."),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Svd3 {
    pub u: Mat3,
    /// Non-negative, descending.
    pub s: [f64; 3],
    pub vt: Mat3,
}

fn col_dot(a: &Mat3, i: usize, j: usize) -> f64 {
    (0..3).map(|r| a[r][i] * a[r][j]).sum()
}

/// One-sided Jacobi SVD of a 3x3 matrix.
///
/// Column rotations orthogonalize `A V`; the column norms are the singular
/// values. Columns with a (numerically) zero singular value are completed to
/// an orthonormal `U` by Gram-Schmidt against the coordinate axes.
pub fn svd3(m: &Mat3) -> Svd3 {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let mut rotated = false;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = col_dot(&a, i, i);
            let beta = col_dot(&a, j, j);
            let gamma = col_dot(&a, i, j);
            if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for row in a.iter_mut().chain(v.iter_mut()) {
                let (x, y) = (row[i], row[j]);
                row[i] = c * x - s * y;
                row[j] = s * x + c * y;
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: [f64; 3] = std::array::from_fn(|k| col_dot(&a, k, k).sqrt());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let s: [f64; 3] = std::array::from_fn(|k| norms[order[k]]);
    let tiny = s[0] * 1e-13;

    let mut u = [[0.0; 3]; 3];
    let mut vt = [[0.0; 3]; 3];
    let mut have = [false; 3];
    for (k, &src) in order.iter().enumerate() {
        for r in 0..3 {
            vt[k][r] = v[r][src];
        }
        if s[k] > tiny && s[k] > 0.0 {
            for r in 0..3 {
                u[r][k] = a[r][src] / s[k];
            }
            have[k] = true;
        }
    }
    for k in 0..3 {
        if have[k] {
            continue;
        }
        for axis in 0..3 {
            let mut cand = [0.0; 3];
            cand[axis] = 1.0;
            for other in 0..3 {
                if have[other] {
                    let d: f64 = (0..3).map(|r| cand[r] * u[r][other]).sum();
                    for r in 0..3 {
                        cand[r] -= d * u[r][other];
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for r in 0..3 {
                    u[r][k] = cand[r] / norm;
                }
                have[k] = true;
                break;
            }
        }
    }
    Svd3 { u, s, vt }
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn check_pose3(op: &'static str, pred: &Matrix, gt: &Matrix) -> Result<()> {
    if pred.shape() != gt.shape() || gt.cols() != 3 || gt.rows() == 0 {
        return Err(Error::shape(op, format!("{:?} vs {:?}", pred.shape(), gt.shape())));
    }
    Ok(())
}

fn centroid(m: &Matrix) -> [f64; 3] {
    let n = m.rows() as f64;
    std::array::from_fn(|c| (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / n)
}

/// Similarity transform (rotation, scale, translation) of `pred` that best
/// matches `gt` in least squares, with reflections excluded.
pub fn procrustes_align(pred: &Matrix, gt: &Matrix) -> Result<Matrix> {
    check_pose3("procrustes_align", pred, gt)?;
    let n = gt.rows();
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);
    let x = Matrix::from_fn(n, 3, |r, c| pred.get(r, c) - mu_p[c]);
    let y = Matrix::from_fn(n, 3, |r, c| gt.get(r, c) - mu_g[c]);
    let gt_spread: f64 = y.data().iter().map(|v| v * v).sum();
    let scale_ref = gt.max_abs().max(1.0);
    if gt_spread.sqrt() <= 1e-12 * scale_ref {
        return Err(Error::DegenerateReference);
    }
    let pred_spread: f64 = x.data().iter().map(|v| v * v).sum();
    if pred_spread == 0.0 {
        return Ok(Matrix::from_fn(n, 3, |_, c| mu_g[c]));
    }

    // H = X^T Y; X ≈ R^T-rotated Y, so R = V D U^T.
    let mut h = [[0.0; 3]; 3];
    for r in 0..n {
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] += x.get(r, i) * y.get(r, j);
            }
        }
    }
    let Svd3 { u, s, vt } = svd3(&h);
    let mut vut = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            vut[i][j] = (0..3).map(|k| vt[k][i] * u[j][k]).sum();
        }
    }
    let sign = if det3(&vut) < 0.0 { -1.0 } else { 1.0 };
    let d = [1.0, 1.0, sign];
    let mut rot = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rot[i][j] = (0..3).map(|k| vt[k][i] * d[k] * u[j][k]).sum();
        }
    }
    let scale = (s[0] * d[0] + s[1] * d[1] + s[2] * d[2]) / pred_spread;
    Ok(Matrix::from_fn(n, 3, |r, c| {
        let rx: f64 = (0..3).map(|k| rot[c][k] * x.get(r, k)).sum();
        scale * rx + mu_g[c]
    }))
}

/// Per-joint Euclidean errors.
pub fn joint_errors(pred: &Matrix, gt: &Matrix) -> Result<Vec<f64>> {
    check_pose3("joint_errors", pred, gt)?;
    Ok((0..gt.rows())
        .map(|r| {
            (0..3)
                .map(|c| (pred.get(r, c) - gt.get(r, c)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

fn check_batch(op: &'static str, preds: &[Matrix], gts: &[Matrix]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::shape(op, format!("{} predictions, {} targets", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(Error::Input(format!("{op}: empty batch")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn all_errors(preds: &[Matrix], gts: &[Matrix]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (p, g) in preds.iter().zip(gts) {
        out.extend(joint_errors(p, g)?);
    }
    Ok(out)
}

/// Protocol 1: mean joint error in mm.
pub fn mpjpe_metric(preds: &[Matrix], gts: &[Matrix]) -> Result<f64> {
    check_batch("mpjpe", preds, gts)?;
    Ok(mean(&all_errors(preds, gts)?))
}

/// Protocol 2: mean joint error after per-sample Procrustes alignment.
pub fn p_mpjpe_metric(preds: &[Matrix], gts: &[Matrix]) -> Result<f64> {
    check_batch("p_mpjpe", preds, gts)?;
    let aligned = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| procrustes_align(p, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&all_errors(&aligned, gts)?))
}

fn pck_of(errors: &[f64], radius: f64) -> f64 {
    100.0 * errors.iter().filter(|&&e| e <= radius).count() as f64 / errors.len() as f64
}

fn auc_of(errors: &[f64]) -> f64 {
    let t: Vec<f64> = auc_thresholds().collect();
    t.iter().map(|&r| pck_of(errors, r)).sum::<f64>() / t.len() as f64
}

/// Percentage of joints within `radius` mm.
pub fn pck_metric(preds: &[Matrix], gts: &[Matrix], radius: f64) -> Result<f64> {
    check_batch("pck", preds, gts)?;
    Ok(pck_of(&all_errors(preds, gts)?, radius))
}

/// Mean PCK over thresholds 5, 10, ..., 150 mm.
pub fn auc_metric(preds: &[Matrix], gts: &[Matrix]) -> Result<f64> {
    check_batch("auc", preds, gts)?;
    Ok(auc_of(&all_errors(preds, gts)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
    pub pck_percent: f64,
    pub auc_percent: f64,
}

impl Metrics {
    pub fn compute(preds: &[Matrix], gts: &[Matrix]) -> Result<Self> {
        check_batch("metrics", preds, gts)?;
        let errors = all_errors(preds, gts)?;
        Ok(Metrics {
            mpjpe_mm: mean(&errors),
            p_mpjpe_mm: p_mpjpe_metric(preds, gts)?,
            pck_percent: pck_of(&errors, PCK_RADIUS_MM),
            auc_percent: auc_of(&errors),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: Metrics,
    pub samples: usize,
    pub per_action: BTreeMap<String, Metrics>,
}

impl MetricReport {
    /// `actions[i]` labels sample `i`; unlabeled samples only count overall.
    pub fn compute(preds: &[Matrix], gts: &[Matrix], actions: &[Option<String>]) -> Result<Self> {
        let overall = Metrics::compute(preds, gts)?;
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, a) in actions.iter().enumerate() {
            if let Some(a) = a {
                groups.entry(a.clone()).or_default().push(i);
            }
        }
        let mut per_action = BTreeMap::new();
        for (action, idx) in groups {
            let p: Vec<Matrix> = idx.iter().map(|&i| preds[i].clone()).collect();
            let g: Vec<Matrix> = idx.iter().map(|&i| gts[i].clone()).collect();
            per_action.insert(action, Metrics::compute(&p, &g)?);
        }
        Ok(MetricReport {
            overall,
            samples: preds.len(),
            per_action,
        })
    }

    /// One `key=value` per line.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples={}", self.samples);
        let m = &self.overall;
        let _ = writeln!(s, "mpjpe_mm={:.4}", m.mpjpe_mm);
        let _ = writeln!(s, "p_mpjpe_mm={:.4}", m.p_mpjpe_mm);
        let _ = writeln!(s, "pck_percent={:.4}", m.pck_percent);
        let _ = writeln!(s, "auc_percent={:.4}", m.auc_percent);
        for (a, m) in &self.per_action {
            let _ = writeln!(s, "action.{a}.mpjpe_mm={:.4}", m.mpjpe_mm);
            let _ = writeln!(s, "action.{a}.p_mpjpe_mm={:.4}", m.p_mpjpe_mm);
            let _ = writeln!(s, "action.{a}.pck_percent={:.4}", m.pck_percent);
            let _ = writeln!(s, "action.{a}.auc_percent={:.4}", m.auc_percent);
        }
        s
    }

    /// Action columns followed by `Avg.`, one row per protocol. Standard
    /// actions come first in their usual order, other labels after.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(String, &Metrics)> = Vec::new();
        for (name, abbr) in H36M_ACTIONS {
            if let Some(m) = self.per_action.get(name) {
                cols.push((abbr.to_string(), m));
            }
        }
        for (name, m) in &self.per_action {
            if !H36M_ACTIONS.iter().any(|(n, _)| n == name) {
                cols.push((name.clone(), m));
            }
        }
        cols.push(("Avg.".to_string(), &self.overall));
        let width = cols.iter().map(|(c, _)| c.len()).max().unwrap_or(4).max(7);
        type Row = (&'static str, fn(&Metrics) -> f64);
        let rows: [Row; 4] = [
            ("MPJPE(mm)", |m| m.mpjpe_mm),
            ("P-MPJPE(mm)", |m| m.p_mpjpe_mm),
            ("PCK(%)", |m| m.pck_percent),
            ("AUC(%)", |m| m.auc_percent),
        ];
        let mut s = format!("{:<12}", "Metric");
        for (c, _) in &cols {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (label, f) in rows {
            let _ = write!(s, "{label:<12}");
            for (_, m) in &cols {
                let _ = write!(s, " {:>width$.1}", f(m));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(svd: &Svd3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| svd.u[i][k] * svd.s[k] * svd.vt[k][j]).sum();
            }
        }
        out
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(svd3(&id).s, [1.0, 1.0, 1.0]);
        let d = [[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]];
        let svd = svd3(&d);
        assert_eq!(svd.s, [3.0, 2.0, 1.0]);
        let r = reconstruct(&svd);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - d[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn svd_rank_deficient() {
        for m in [
            [[0.0; 3]; 3],
            [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0]],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]],
        ] {
            let svd = svd3(&m);
            let r = reconstruct(&svd);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((r[i][j] - m[i][j]).abs() < 1e-12);
                    let uu: f64 = (0..3).map(|k| svd.u[k][i] * svd.u[k][j]).sum();
                    assert!((uu - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn translation_removed_by_alignment() {
        let gt = Matrix::from_fn(17, 3, |r, c| ((r * 3 + c) as f64 * 1.7).sin() * 300.0);
        let pred = Matrix::from_fn(17, 3, |r, c| gt.get(r, c) + if c == 0 { 10.0 } else { 0.0 });
        let m = mpjpe_metric(std::slice::from_ref(&pred), std::slice::from_ref(&gt)).unwrap();
        assert!((m - 10.0).abs() < 1e-12);
        assert!(p_mpjpe_metric(&[pred], &[gt]).unwrap() < 1e-9);
    }

    #[test]
    fn identical_poses() {
        let gt = Matrix::from_fn(5, 3, |r, c| (r * c) as f64 + r as f64);
        let g = std::slice::from_ref(&gt);
        assert_eq!(mpjpe_metric(g, g).unwrap(), 0.0);
        assert!(p_mpjpe_metric(g, g).unwrap() < 1e-12);
        assert_eq!(pck_metric(g, g, PCK_RADIUS_MM).unwrap(), 100.0);
        assert_eq!(auc_metric(g, g).unwrap(), 100.0);
    }

    #[test]
    fn pck_auc_thresholds() {
        let gt = Matrix::zeros(4, 3);
        let far = Matrix::from_fn(4, 3, |_, c| if c == 1 { 200.0 } else { 0.0 });
        assert_eq!(pck_metric(std::slice::from_ref(&far), std::slice::from_ref(&gt), 150.0).unwrap(), 0.0);
        assert_eq!(auc_metric(&[far], std::slice::from_ref(&gt)).unwrap(), 0.0);
        let mid = Matrix::from_fn(4, 3, |_, c| if c == 0 { 75.0 } else { 0.0 });
        assert_eq!(pck_metric(std::slice::from_ref(&mid), std::slice::from_ref(&gt), 150.0).unwrap(), 100.0);
        let auc = auc_metric(&[mid], &[gt]).unwrap();
        assert!((auc - 16.0 / 30.0 * 100.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_reference_rejected() {
        let gt = Matrix::filled(4, 3, 7.0);
        let pred = Matrix::from_fn(4, 3, |r, c| (r + c) as f64);
        assert!(matches!(procrustes_align(&pred, &gt), Err(Error::DegenerateReference)));
    }

    #[test]
    fn shape_mismatch() {
        assert!(mpjpe_metric(&[Matrix::zeros(3, 3)], &[Matrix::zeros(4, 3)]).is_err());
        assert!(mpjpe_metric(&[], &[]).is_err());
    }

    #[test]
    fn report_formats() {
        let gt = Matrix::from_fn(5, 3, |r, c| ((r + 2 * c) as f64).cos() * 100.0);
        let pred = Matrix::from_fn(5, 3, |r, c| gt.get(r, c) + 5.0 * ((r + c) as f64).sin());
        let report = MetricReport::compute(
            &[pred.clone(), pred],
            &[gt.clone(), gt],
            &[Some("Walking".into()), Some("Eating".into())],
        )
        .unwrap();
        let kv = report.to_key_values();
        assert!(kv.contains("mpjpe_mm="));
        assert!(kv.contains("action.Walking.pck_percent="));
        let table = report.to_table();
        let header = table.lines().next().unwrap();
        assert!(header.find("Eat.").unwrap() < header.find("Walk.").unwrap());
        assert!(header.trim_end().ends_with("Avg."));
    }
}
