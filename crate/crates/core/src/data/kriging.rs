//! DEM resampling: ordinary kriging with a fitted variogram, and bilinear
//! interpolation as the fast path / no-interpolation comparison baseline.
//!
//! Grid convention: a cell covers a square of side `res` meters and its
//! sample sits at the cell center, so source node i sits at (i + 0.5) * res.
//! Both grids share the same top-left origin.

use crate::error::{CoreError, Result};
use ndarray::Array2;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationMethod {
    Kriging,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramFamily {
    Spherical,
    Exponential,
}

/// gamma(h) = nugget + psill * f(h / range), with gamma(0) = 0.
#[derive(Debug, Clone, Copy)]
pub struct VariogramModel {
    pub family: VariogramFamily,
    pub nugget: f64,
    /// partial sill (sill - nugget)
    pub psill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        let s = match self.family {
            VariogramFamily::Spherical => {
                if h >= self.range {
                    1.0
                } else {
                    let r = h / self.range;
                    1.5 * r - 0.5 * r * r * r
                }
            }
            VariogramFamily::Exponential => 1.0 - (-3.0 * h / self.range).exp(),
        };
        self.nugget + self.psill * s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0 && self.psill >= 0.0 && self.range > 0.0) {
            return Err(CoreError::BadVariogram(format!(
                "nugget {}, partial sill {}, range {}",
                self.nugget, self.psill, self.range
            )));
        }
        if self.nugget + self.psill <= 0.0 {
            return Err(CoreError::BadVariogram("zero sill".into()));
        }
        Ok(())
    }
}

/// Empirical semivariogram: average of squared half-differences per lag bin.
pub fn empirical_semivariogram(
    points: &[(f64, f64)],
    values: &[f64],
    n_bins: usize,
    max_lag: f64,
) -> Vec<(f64, f64, usize)> {
    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    let bin_w = max_lag / n_bins as f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = dist(points[i], points[j]);
            if d >= max_lag || d == 0.0 {
                continue;
            }
            let b = (d / bin_w) as usize;
            sums[b] += 0.5 * (values[i] - values[j]).powi(2);
            counts[b] += 1;
        }
    }
    (0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| ((b as f64 + 0.5) * bin_w, sums[b] / counts[b] as f64, counts[b]))
        .collect()
}

/// Least-squares fit of (nugget, psill) over a grid of candidate ranges.
pub fn fit_variogram(
    emp: &[(f64, f64, usize)],
    family: VariogramFamily,
    max_lag: f64,
) -> Result<VariogramModel> {
    if emp.is_empty() {
        return Err(CoreError::BadVariogram("empty empirical semivariogram".into()));
    }
    let mut best: Option<(f64, VariogramModel)> = None;
    for step in 1..=40 {
        let range = max_lag * step as f64 / 40.0;
        let probe = VariogramModel { family, nugget: 0.0, psill: 1.0, range };
        // linear LS on gamma_i ~ nugget + psill * f_i, weighted by pair count
        let (mut sw, mut sf, mut sff, mut sg, mut sfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(h, gamma, n) in emp {
            let f = probe.gamma(h); // nugget 0, psill 1 -> f(h/range)
            let w = n as f64;
            sw += w;
            sf += w * f;
            sff += w * f * f;
            sg += w * gamma;
            sfg += w * f * gamma;
        }
        let det = sw * sff - sf * sf;
        let (mut nugget, mut psill) = if det.abs() > 1e-12 {
            (
                (sff * sg - sf * sfg) / det,
                (sw * sfg - sf * sg) / det,
            )
        } else {
            (0.0, sg / sw.max(1e-12))
        };
        if nugget < 0.0 {
            nugget = 0.0;
            psill = if sff > 1e-12 { sfg / sff } else { 0.0 };
        }
        if psill < 0.0 {
            psill = 0.0;
            nugget = sg / sw.max(1e-12);
        }
        let cand = VariogramModel { family, nugget, psill, range };
        let sse: f64 = emp
            .iter()
            .map(|&(h, gamma, n)| n as f64 * (cand.gamma(h) - gamma).powi(2))
            .sum();
        if best.as_ref().map(|(b, _)| sse < *b).unwrap_or(true) {
            best = Some((sse, cand));
        }
    }
    let model = best.unwrap().1;
    model.validate()?;
    Ok(model)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Gaussian elimination with partial pivoting; the production solver for the
/// small per-target kriging systems.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in (col + 1)..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-12 {
            return Err(CoreError::SingularSystem(format!("pivot {best:.3e} at column {col}")));
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(())
}

/// Ordinary kriging of `targets` from scattered `sources`.
/// `neighborhood = 0` means use all sources for every target.
pub fn krige_points(
    sources: &[(f64, f64)],
    values: &[f64],
    model: &VariogramModel,
    targets: &[(f64, f64)],
    neighborhood: usize,
) -> Result<Vec<f64>> {
    assert_eq!(sources.len(), values.len());
    model.validate()?;
    // exact duplicate coordinates make the system singular; report them
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by(|&i, &j| {
        sources[i]
            .partial_cmp(&sources[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for w in order.windows(2) {
        let (a, b) = (sources[w[0]], sources[w[1]]);
        if a == b {
            return Err(CoreError::DuplicateSamples { x0: a.0, y0: a.1, x1: b.0, y1: b.1 });
        }
    }

    let k = if neighborhood == 0 || neighborhood >= sources.len() {
        sources.len()
    } else {
        neighborhood
    };

    targets
        .par_iter()
        .map(|&t| {
            // k nearest sources, ties broken by index
            let mut idx: Vec<usize> = (0..sources.len()).collect();
            if k < sources.len() {
                idx.select_nth_unstable_by(k - 1, |&i, &j| {
                    let di = dist(t, sources[i]);
                    let dj = dist(t, sources[j]);
                    di.partial_cmp(&dj).unwrap().then(i.cmp(&j))
                });
                idx.truncate(k);
                idx.sort_unstable();
            }
            let n = idx.len() + 1;
            let mut a = vec![0.0f64; n * n];
            let mut rhs = vec![0.0f64; n];
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    a[r * n + c] = model.gamma(dist(sources[i], sources[j]));
                }
                a[r * n + (n - 1)] = 1.0;
                a[(n - 1) * n + r] = 1.0;
                rhs[r] = model.gamma(dist(t, sources[i]));
            }
            rhs[n - 1] = 1.0;
            solve_dense(&mut a, &mut rhs, n)?;
            let mut est = 0.0;
            for (r, &i) in idx.iter().enumerate() {
                est += rhs[r] * values[i];
            }
            Ok(est)
        })
        .collect()
}

/// Options for [`interpolate_dem`].
#[derive(Debug, Clone)]
pub struct KrigingConfig {
    pub family: VariogramFamily,
    /// nearest sources per target; 0 = all
    pub neighborhood: usize,
    pub n_bins: usize,
    /// cap on source points used for the empirical semivariogram
    pub fit_sample_cap: usize,
    /// use this model instead of fitting
    pub model: Option<VariogramModel>,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        KrigingConfig {
            family: VariogramFamily::Spherical,
            neighborhood: 16,
            n_bins: 15,
            fit_sample_cap: 1024,
            model: None,
        }
    }
}

/// Resample a coarse DEM onto a finer grid of `out_dims` at `out_res` m/px.
pub fn interpolate_dem(
    dem: &Array2<f64>,
    src_res: f64,
    out_dims: (usize, usize),
    out_res: f64,
    method: InterpolationMethod,
    kriging: &KrigingConfig,
) -> Result<Array2<f64>> {
    if out_res >= src_res {
        return Err(CoreError::InvalidConfig(format!(
            "target resolution {out_res} m must be finer than source {src_res} m"
        )));
    }
    let (oh, ow) = out_dims;
    let first = dem[[0, 0]];
    if dem.iter().all(|&v| v == first) {
        return Ok(Array2::from_elem(out_dims, first));
    }
    match method {
        InterpolationMethod::Bilinear => Ok(bilinear_resample(dem, src_res, out_dims, out_res)),
        InterpolationMethod::Kriging => {
            let (sh, sw) = dem.dim();
            let mut sources = Vec::with_capacity(sh * sw);
            let mut values = Vec::with_capacity(sh * sw);
            for y in 0..sh {
                for x in 0..sw {
                    sources.push(((x as f64 + 0.5) * src_res, (y as f64 + 0.5) * src_res));
                    values.push(dem[[y, x]]);
                }
            }
            let model = match kriging.model {
                Some(m) => {
                    m.validate()?;
                    m
                }
                None => {
                    let stride = sources.len().div_ceil(kriging.fit_sample_cap);
                    let pts: Vec<(f64, f64)> = sources.iter().copied().step_by(stride).collect();
                    let vals: Vec<f64> = values.iter().copied().step_by(stride).collect();
                    let max_lag = dist(
                        (0.0, 0.0),
                        (sw as f64 * src_res, sh as f64 * src_res),
                    ) / 2.0;
                    let emp = empirical_semivariogram(&pts, &vals, kriging.n_bins, max_lag);
                    fit_variogram(&emp, kriging.family, max_lag)?
                }
            };
            let mut targets = Vec::with_capacity(oh * ow);
            for y in 0..oh {
                for x in 0..ow {
                    targets.push(((x as f64 + 0.5) * out_res, (y as f64 + 0.5) * out_res));
                }
            }
            let est = krige_points(&sources, &values, &model, &targets, kriging.neighborhood)?;
            Ok(Array2::from_shape_vec(out_dims, est).unwrap())
        }
    }
}

/// Bilinear resample in physical coordinates. Boundary cells extrapolate
/// linearly (cell index clamped, fraction left unclamped), which keeps the
/// operator exact on affine elevation fields everywhere.
pub fn bilinear_resample(
    dem: &Array2<f64>,
    src_res: f64,
    out_dims: (usize, usize),
    out_res: f64,
) -> Array2<f64> {
    let (sh, sw) = dem.dim();
    let (oh, ow) = out_dims;
    let mut out = Array2::<f64>::zeros(out_dims);
    for oy in 0..oh {
        let py = (oy as f64 + 0.5) * out_res / src_res - 0.5;
        let cy = (py.floor() as isize).clamp(0, sh as isize - 2) as usize;
        let ty = py - cy as f64;
        for ox in 0..ow {
            let px = (ox as f64 + 0.5) * out_res / src_res - 0.5;
            let cx = (px.floor() as isize).clamp(0, sw as isize - 2) as usize;
            let tx = px - cx as f64;
            let v00 = dem[[cy, cx]];
            let v01 = dem[[cy, cx + 1]];
            let v10 = dem[[cy + 1, cx]];
            let v11 = dem[[cy + 1, cx + 1]];
            out[[oy, ox]] = v00 * (1.0 - ty) * (1.0 - tx)
                + v01 * (1.0 - ty) * tx
                + v10 * ty * (1.0 - tx)
                + v11 * ty * tx;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_sources(n: usize, res: f64, f: impl Fn(f64, f64) -> f64) -> (Vec<(f64, f64)>, Vec<f64>, Array2<f64>) {
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        let dem = Array2::from_shape_fn((n, n), |(y, x)| {
            let (px, py) = ((x as f64 + 0.5) * res, (y as f64 + 0.5) * res);
            f(px, py)
        });
        for y in 0..n {
            for x in 0..n {
                pts.push(((x as f64 + 0.5) * res, (y as f64 + 0.5) * res));
                vals.push(dem[[y, x]]);
            }
        }
        (pts, vals, dem)
    }

    fn bumpy(px: f64, py: f64) -> f64 {
        100.0 + (px * 0.11).sin() * 8.0 + (py * 0.07).cos() * 5.0 + 0.02 * px
    }

    #[test]
    fn kriging_reproduces_sources_exactly() {
        let (pts, vals, _) = grid_sources(6, 10.0, bumpy);
        let max_lag = 45.0;
        let emp = empirical_semivariogram(&pts, &vals, 12, max_lag);
        let model = fit_variogram(&emp, VariogramFamily::Spherical, max_lag).unwrap();
        for nb in [0usize, 16] {
            let est = krige_points(&pts, &vals, &model, &pts, nb).unwrap();
            for (e, v) in est.iter().zip(vals.iter()) {
                let rel = (e - v).abs() / v.abs().max(1.0);
                assert!(rel <= 1e-6, "kriging not exact at source: {e} vs {v} (nb={nb})");
            }
        }
    }

    #[test]
    fn kriging_matches_dense_direct_solver_oracle() {
        // full-neighborhood kriging vs an independent nalgebra solve
        let (pts, vals, _) = grid_sources(4, 10.0, bumpy);
        let model = VariogramModel {
            family: VariogramFamily::Spherical,
            nugget: 0.05,
            psill: 12.0,
            range: 30.0,
        };
        let targets = [(7.3, 12.9), (25.0, 25.0), (1.0, 38.0)];
        let got = krige_points(&pts, &vals, &model, &targets, 0).unwrap();

        let n = pts.len() + 1;
        for (ti, &t) in targets.iter().enumerate() {
            let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
            let mut b = nalgebra::DVector::<f64>::zeros(n);
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    a[(i, j)] = model.gamma(super::dist(pts[i], pts[j]));
                }
                a[(i, n - 1)] = 1.0;
                a[(n - 1, i)] = 1.0;
                b[i] = model.gamma(super::dist(t, pts[i]));
            }
            b[n - 1] = 1.0;
            let w = a.lu().solve(&b).expect("oracle solve failed");
            let want: f64 = (0..pts.len()).map(|i| w[i] * vals[i]).sum();
            assert!(
                (got[ti] - want).abs() < 1e-8,
                "target {ti}: {} vs oracle {want}",
                got[ti]
            );
        }
    }

    #[test]
    fn duplicate_sources_are_reported() {
        let pts = vec![(1.0, 2.0), (3.0, 4.0), (1.0, 2.0)];
        let vals = vec![1.0, 2.0, 3.0];
        let model = VariogramModel {
            family: VariogramFamily::Spherical,
            nugget: 0.0,
            psill: 1.0,
            range: 5.0,
        };
        let err = krige_points(&pts, &vals, &model, &[(0.0, 0.0)], 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate sample coordinates") && msg.contains("(1, 2)"), "{msg}");
    }

    #[test]
    fn invalid_variogram_rejected() {
        let m = VariogramModel {
            family: VariogramFamily::Spherical,
            nugget: -1.0,
            psill: 1.0,
            range: 5.0,
        };
        assert!(m.validate().is_err());
        let zero = VariogramModel {
            family: VariogramFamily::Exponential,
            nugget: 0.0,
            psill: 0.0,
            range: 5.0,
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn constant_field_any_method() {
        let dem = Array2::from_elem((4, 4), 100.0);
        for m in [InterpolationMethod::Kriging, InterpolationMethod::Bilinear] {
            let out = interpolate_dem(&dem, 30.0, (16, 16), 2.0, m, &KrigingConfig::default()).unwrap();
            assert!(out.iter().all(|&v| v == 100.0));
        }
    }

    #[test]
    fn bilinear_exact_on_planes() {
        let dem = Array2::from_shape_fn((5, 7), |(y, x)| {
            let (px, py) = ((x as f64 + 0.5) * 8.0, (y as f64 + 0.5) * 8.0);
            2.0 * px + 3.0 * py
        });
        let out = bilinear_resample(&dem, 8.0, (20, 28), 2.0);
        for y in 0..20 {
            for x in 0..28 {
                let (px, py) = ((x as f64 + 0.5) * 2.0, (y as f64 + 0.5) * 2.0);
                let want = 2.0 * px + 3.0 * py;
                assert!(
                    (out[[y, x]] - want).abs() < 1e-9,
                    "bilinear not exact at ({y},{x}): {} vs {want}",
                    out[[y, x]]
                );
            }
        }
    }

    #[test]
    fn coarser_target_rejected() {
        let dem = Array2::from_elem((4, 4), 1.0);
        let err = interpolate_dem(
            &dem,
            2.0,
            (2, 2),
            30.0,
            InterpolationMethod::Bilinear,
            &KrigingConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::InvalidConfig(_)));
    }

    #[test]
    fn kriging_dem_grid_hits_source_nodes() {
        // 30 m -> 2 m: source node i sits at target column 15 i + 7
        let (_, _, dem) = grid_sources(4, 30.0, bumpy);
        let out = interpolate_dem(
            &dem,
            30.0,
            (60, 60),
            2.0,
            InterpolationMethod::Kriging,
            &KrigingConfig::default(),
        )
        .unwrap();
        for sy in 0..4 {
            for sx in 0..4 {
                let (ty, tx) = (15 * sy + 7, 15 * sx + 7);
                let rel = (out[[ty, tx]] - dem[[sy, sx]]).abs() / dem[[sy, sx]].abs().max(1.0);
                assert!(rel < 1e-6, "node ({sy},{sx}) rel err {rel}");
            }
        }
    }
}
