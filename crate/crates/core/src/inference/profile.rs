use serde::{Deserialize, Serialize};

use super::scorer::ProfileScorer;
use crate::error::{Error, Result};
use crate::synthdata::Bag;

/// Summed LLR curve `Λ̂(θ) = Σ_j Λ̂(ℬ_j | θ, θ0)` over a θ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LLRProfile {
    pub theta_grid: Vec<f64>,
    pub llr: Vec<f64>,
    pub theta0: f64,
    pub n_events_represented: usize,
}

impl LLRProfile {
    /// `−2Λ̂` at every grid point.
    pub fn neg2(&self) -> Vec<f64> {
        self.llr.iter().map(|v| -2.0 * v).collect()
    }

    /// The same profile with every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> LLRProfile {
        LLRProfile {
            llr: self.llr.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }
}

/// `lo, lo+step, …, hi`, each rounded to 12 decimals so that 0.3 is 0.3.
pub fn theta_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi > lo) {
        return Err(Error::InvalidGrid(format!(
            "bad grid [{lo}, {hi}] step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Index of `theta` in `grid` (within 1e-9).
pub fn grid_index(grid: &[f64], theta: f64) -> Option<usize> {
    grid.iter().position(|g| (g - theta).abs() < 1e-9)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidGrid("grid needs at least two points".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Profile of a bag set under `scorer`. The value at θ0 is set to exactly 0.
pub fn llr_profile(
    scorer: &dyn ProfileScorer,
    bags: &[Bag],
    grid: &[f64],
    theta0: f64,
) -> Result<LLRProfile> {
    if bags.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    check_grid(grid)?;
    let i0 = grid_index(grid, theta0)
        .ok_or_else(|| Error::InvalidGrid(format!("θ0 = {theta0} is not on the grid")))?;
    let mut llr = scorer.profile(bags, grid, grid[i0])?;
    if llr.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            got: llr.len(),
        });
    }
    llr[i0] = 0.0;
    if let Some(v) = llr.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!("non-finite profile value {v}")));
    }
    Ok(LLRProfile {
        theta_grid: grid.to_vec(),
        llr,
        theta0: grid[i0],
        n_events_represented: bags.iter().map(Bag::len).sum(),
    })
}

/// Where the fitted vertex landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Ok,
    /// Vertex outside the fit window but inside the grid.
    VertexOutsideWindow,
    /// Vertex outside the grid range.
    VertexOutsideGrid,
}

/// Least-squares parabola `−2Λ̂(θ) ≈ a(θ−θ̂)² + c` near the profile minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolaFit {
    pub theta_hat: f64,
    /// The curvature `a`, a Fisher-information estimate.
    pub i_curv: f64,
    pub offset: f64,
    pub fit_mse: f64,
    pub window: (f64, f64),
    pub n_fit_points: usize,
    pub status: FitStatus,
}

impl ParabolaFit {
    /// Fits whose vertex lies inside the window are usable for calibration.
    pub fn is_valid(&self) -> bool {
        self.status == FitStatus::Ok
    }
}

/// Default fit half-width: ±0.4, widened to ±0.7 for single-event bags.
pub fn default_window(n_b: usize) -> f64 {
    if n_b == 1 {
        0.7
    } else {
        0.4
    }
}

/// Solve the 3×3 system `m·x = r` by Gaussian elimination with partial
/// pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            let pivot = m[col];
            for (v, p) in m[row].iter_mut().zip(pivot).skip(col) {
                *v -= f * p;
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|k| m[i][k] * x[k]).sum();
        x[i] = (r[i] - s) / m[i][i];
    }
    Some(x)
}

/// Unweighted least-squares parabola through the grid points within
/// `window_halfwidth` of the grid argmin of `−2Λ̂`.
pub fn parabola_fit(profile: &LLRProfile, window_halfwidth: f64) -> Result<ParabolaFit> {
    if !(window_halfwidth > 0.0) {
        return Err(Error::invalid_param("fit window must be positive"));
    }
    let grid = &profile.theta_grid;
    let y = profile.neg2();
    let imin = y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or(Error::InsufficientPoints(0))?;
    let center = grid[imin];
    let idx: Vec<usize> = (0..grid.len())
        .filter(|&i| (grid[i] - center).abs() <= window_halfwidth + 1e-9)
        .collect();
    if idx.len() < 3 {
        return Err(Error::InsufficientPoints(idx.len()));
    }
    // Fit in u = θ − center for conditioning: y = A u² + B u + C.
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for &i in &idx {
        let u = grid[i] - center;
        let basis = [u * u, u, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] += basis[a] * basis[b];
            }
            r[a] += basis[a] * y[i];
        }
    }
    let [a, b, c] =
        solve3(m, r).ok_or_else(|| Error::DegenerateDesign("collinear fit points".into()))?;
    if !(a > 0.0) {
        return Err(Error::NonConvexFit(a));
    }
    let u_hat = -b / (2.0 * a);
    let theta_hat = center + u_hat;
    let offset = c - a * u_hat * u_hat;
    let fit_mse = idx
        .iter()
        .map(|&i| {
            let u = grid[i] - center;
            let e = a * u * u + b * u + c - y[i];
            e * e
        })
        .sum::<f64>()
        / idx.len() as f64;
    let window = (grid[idx[0]], grid[*idx.last().unwrap()]);
    let status = if theta_hat < grid[0] || theta_hat > grid[grid.len() - 1] {
        FitStatus::VertexOutsideGrid
    } else if theta_hat < window.0 || theta_hat > window.1 {
        FitStatus::VertexOutsideWindow
    } else {
        FitStatus::Ok
    };
    Ok(ParabolaFit {
        theta_hat,
        i_curv: a,
        offset,
        fit_mse,
        window,
        n_fit_points: idx.len(),
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::OracleScorer;
    use crate::rng;
    use crate::synthdata::{make_bags, sample_events, EventFamily};
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn grid() -> Vec<f64> {
        theta_grid(-1.0, 1.0, 0.1).unwrap()
    }

    fn from_neg2(f: impl Fn(f64) -> f64) -> LLRProfile {
        let g = grid();
        LLRProfile {
            llr: g.iter().map(|&t| -0.5 * f(t)).collect(),
            theta_grid: g,
            theta0: 0.0,
            n_events_represented: 0,
        }
    }

    #[test]
    fn grid_is_exact() {
        let g = grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[10], 0.0);
        assert_eq!(g[13], 0.3);
        assert_eq!(g[20], 1.0);
        assert_eq!(grid_index(&g, 0.3), Some(13));
    }

    #[test]
    fn exact_quadratic() {
        let p = from_neg2(|t| 200.0 * (t - 0.05) * (t - 0.05));
        let f = parabola_fit(&p, 0.4).unwrap();
        assert!((f.theta_hat - 0.05).abs() < 1e-12);
        assert!((f.i_curv - 200.0).abs() < 1e-9);
        assert!(f.fit_mse < 1e-20);
        assert_eq!(f.status, FitStatus::Ok);
        // The argmin is at 0.0 or 0.1 (equidistant); both windows hold 9 points.
        assert_eq!(f.n_fit_points, 9);
    }

    #[test]
    fn symmetric_profile_centers_on_theta0() {
        let p = from_neg2(|t| 50.0 * t * t + 3.0 * t.powi(4));
        let f = parabola_fit(&p, 0.4).unwrap();
        assert!(f.theta_hat.abs() < 1e-12);
    }

    #[test]
    fn noisy_quadratic_monte_carlo() {
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut r = rng::stream(5, "noisy-quadratic", 0);
        let mut worst_t: f64 = 0.0;
        let mut worst_a: f64 = 0.0;
        for _ in 0..200 {
            let g = grid();
            let llr = g
                .iter()
                .map(|&t| -0.5 * (200.0 * (t - 0.05) * (t - 0.05) + noise.sample(&mut r)))
                .collect();
            let p = LLRProfile {
                theta_grid: g,
                llr,
                theta0: 0.0,
                n_events_represented: 0,
            };
            let f = parabola_fit(&p, 0.4).unwrap();
            worst_t = worst_t.max((f.theta_hat - 0.05).abs());
            worst_a = worst_a.max((f.i_curv / 200.0 - 1.0).abs());
        }
        assert!(worst_t < 0.01 && worst_a < 0.05, "{worst_t} {worst_a}");
    }

    #[test]
    fn fit_errors() {
        let g = vec![-0.1, 0.0, 0.1, 0.2];
        let p = LLRProfile {
            theta_grid: g,
            llr: vec![-1.0, 0.0, -1.0, -4.0],
            theta0: 0.0,
            n_events_represented: 0,
        };
        assert!(matches!(
            parabola_fit(&p, 0.05),
            Err(Error::InsufficientPoints(1))
        ));
        let concave = from_neg2(|t| -10.0 * t * t);
        assert!(matches!(
            parabola_fit(&concave, 0.4),
            Err(Error::NonConvexFit(_))
        ));
        let flat = from_neg2(|_| 0.0);
        assert!(matches!(
            parabola_fit(&flat, 0.4),
            Err(Error::NonConvexFit(_))
        ));
    }

    #[test]
    fn vertex_outside_window_is_flagged() {
        // Minimum at the grid edge with a fitted vertex beyond it.
        let p = from_neg2(|t| 5.0 * (t - 1.3) * (t - 1.3));
        let f = parabola_fit(&p, 0.4).unwrap();
        assert_eq!(f.status, FitStatus::VertexOutsideGrid);
        assert!(!f.is_valid());
    }

    #[test]
    fn oracle_profile_of_gauss_shift_is_exact() {
        // −2Λ(θ) = −2Σ[(θ−θ0)x − (θ²−θ0²)/2], minimized at the sample mean
        // with curvature n.
        let fam = EventFamily::gauss_shift();
        let ev = sample_events(&fam, 0.3, 1000, 12).unwrap();
        let bags = make_bags(&ev, 10, 0).unwrap();
        let p = llr_profile(&OracleScorer::new(fam), &bags, &grid(), 0.0).unwrap();
        let xbar: f64 = bags
            .iter()
            .flat_map(|b| b.events.as_slice().to_vec())
            .sum::<f64>()
            / 1000.0;
        let sum_x = xbar * 1000.0;
        for (&t, &v) in p.theta_grid.iter().zip(&p.llr) {
            let want = t * sum_x - 1000.0 * t * t / 2.0;
            assert!((v - want).abs() < 1e-8 * (1.0 + want.abs()));
        }
        assert_eq!(p.llr[10], 0.0);
        let f = parabola_fit(&p, 0.4).unwrap();
        assert!((f.theta_hat - xbar).abs() < 1e-9);
        assert!((f.i_curv - 1000.0).abs() < 1e-6);
        assert!((f.theta_hat - 0.3).abs() < 0.1);
        assert_eq!(p.n_events_represented, 1000);
    }

    #[test]
    fn profile_errors() {
        let o = OracleScorer::new(EventFamily::gauss_shift());
        assert!(llr_profile(&o, &[], &grid(), 0.0).is_err());
        let ev = sample_events(&EventFamily::gauss_shift(), 0.0, 10, 0).unwrap();
        let bags = make_bags(&ev, 5, 0).unwrap();
        assert!(matches!(
            llr_profile(&o, &bags, &grid(), 0.05),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(
            llr_profile(&o, &bags, &[0.0, 0.0, 1.0], 0.0),
            Err(Error::InvalidGrid(_))
        ));
    }

    proptest! {
        #[test]
        fn scaling_moves_curvature_not_vertex(a in 20.0f64..2000.0, t0 in -0.3f64..0.3, c in 0.05f64..20.0) {
            let p = from_neg2(|t| a * (t - t0) * (t - t0) + 0.3 * (t - t0).powi(3));
            let f = parabola_fit(&p, 0.4).unwrap();
            let g = parabola_fit(&p.scaled(c), 0.4).unwrap();
            prop_assert!((f.theta_hat - g.theta_hat).abs() < 1e-9);
            prop_assert!((g.i_curv / f.i_curv - c).abs() < 1e-9 * c);
        }

        #[test]
        fn profiles_add_over_disjoint_bags(seed in 0u64..1000, split in 1usize..9) {
            let fam = EventFamily::gauss_log_var();
            let ev = sample_events(&fam, 0.2, 100, seed).unwrap();
            let bags = make_bags(&ev, 10, seed).unwrap();
            let o = OracleScorer::new(fam);
            let g = grid();
            let whole = llr_profile(&o, &bags, &g, 0.0).unwrap();
            let a = llr_profile(&o, &bags[..split], &g, 0.0).unwrap();
            let b = llr_profile(&o, &bags[split..], &g, 0.0).unwrap();
            for i in 0..g.len() {
                prop_assert!((whole.llr[i] - a.llr[i] - b.llr[i]).abs() < 1e-9 * (1.0 + whole.llr[i].abs()));
            }
        }
    }
}
