//! Coefficient fields (transmission beta, recovery gamma), their presets,
//! CSV-table loading, and the derived risk data r = gamma/beta.

use crate::error::{Result, SimError};
use crate::grid::{Field, Grid};
use std::fmt;
use std::path::Path;

/// How a coefficient field is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientForm {
    /// Spatially constant value.
    Constant(f64),
    /// 1.5 + sin(pi x) sin(pi y): smooth two-bump transmission profile.
    Sim1Beta,
    /// Constant 1 recovery paired with [`CoefficientForm::Sim1Beta`].
    Sim1Gamma,
    /// Constant 0.5 transmission paired with [`CoefficientForm::Sim2Gamma`].
    Sim2Beta,
    /// f(x) f(y) with the piecewise-parabolic profile [`piecewise_f`]:
    /// its minimum set has a square patch, two segments and an isolated point.
    Sim2Gamma,
    /// CSV table of `x[,y],value` rows matched to nearest grid nodes.
    Table(String),
}

impl fmt::Display for CoefficientForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientForm::Constant(v) => write!(f, "constant({v})"),
            CoefficientForm::Sim1Beta => write!(f, "sim1_beta"),
            CoefficientForm::Sim1Gamma => write!(f, "sim1_gamma"),
            CoefficientForm::Sim2Beta => write!(f, "sim2_beta"),
            CoefficientForm::Sim2Gamma => write!(f, "sim2_gamma"),
            CoefficientForm::Table(p) => write!(f, "table({p})"),
        }
    }
}

/// Piecewise-parabolic factor of the sim2 recovery rate. Flat (= 0.5) on
/// (0, 0.25], touches 0.5 again only at x = 0 and x = 0.625, and grows
/// quadratically elsewhere.
pub fn piecewise_f(x: f64) -> f64 {
    if x <= 0.0 {
        0.5 + 0.4 * x * x
    } else if x <= 0.25 {
        0.5
    } else if x <= 0.5 {
        0.5 + 0.4 * (x - 0.25) * (x - 0.25)
    } else {
        0.5 + 1.6 * (x - 0.625) * (x - 0.625)
    }
}

/// Evaluate a coefficient on a grid. `name` labels error messages
/// ("beta"/"gamma"). Every node value must be strictly positive.
pub fn evaluate_coefficient(form: &CoefficientForm, grid: &Grid, name: &str) -> Result<Field> {
    let field = match form {
        CoefficientForm::Constant(v) => Field::constant(grid, *v),
        CoefficientForm::Sim1Beta => Field::from_fn(grid, |x, y| {
            1.5 + (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
        }),
        CoefficientForm::Sim1Gamma => Field::constant(grid, 1.0),
        CoefficientForm::Sim2Beta => Field::constant(grid, 0.5),
        CoefficientForm::Sim2Gamma => Field::from_fn(grid, |x, y| piecewise_f(x) * piecewise_f(y)),
        CoefficientForm::Table(path) => read_coefficient_table(Path::new(path), grid)?,
    };
    for (i, &v) in field.values.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            let (x, y) = grid.coords(i);
            return Err(SimError::config(format!(
                "coefficient {name} must be strictly positive and finite; got {v} at ({x}, {y})"
            )));
        }
    }
    Ok(field)
}

/// Read a `x[,y],value` CSV into a nodal field. Each row is assigned to the
/// grid node nearest to its coordinates; when several rows land on one node
/// the closest row wins (ties resolved by smaller value, so the result is
/// independent of row order). Every node must receive a value.
pub fn read_coefficient_table(path: &Path, grid: &Grid) -> Result<Field> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| SimError::config(format!("{}: empty coefficient table", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = match cols.as_slice() {
        ["x", "value"] => 1,
        ["x", "y", "value"] => 2,
        _ => {
            return Err(SimError::config(format!(
                "{}: coefficient table header must be 'x,value' or 'x,y,value', got '{header}'",
                path.display()
            )))
        }
    };
    if dim != grid.dim {
        return Err(SimError::config(format!(
            "{}: table is {dim}-dimensional but the grid is {}-dimensional",
            path.display(),
            grid.dim
        )));
    }
    let n = grid.n_nodes();
    // (best squared distance, value) per node.
    let mut best: Vec<Option<(f64, f64)>> = vec![None; n];
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != dim + 1 {
            return Err(SimError::config(format!(
                "{}:{}: expected {} comma-separated fields, got {}",
                path.display(),
                lineno + 1,
                dim + 1,
                parts.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                SimError::config(format!(
                    "{}:{}: cannot parse {what} '{s}' as a number",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        let x = parse(parts[0], "x")?;
        let y = if dim == 2 { parse(parts[1], "y")? } else { 0.0 };
        let value = parse(parts[dim], "value")?;
        let node = nearest_node(grid, x, y);
        let (nx, ny) = grid.coords(node);
        let d2 = (x - nx) * (x - nx) + (y - ny) * (y - ny);
        best[node] = match best[node] {
            None => Some((d2, value)),
            Some((bd, bv)) => {
                if d2 < bd || (d2 == bd && value < bv) {
                    Some((d2, value))
                } else {
                    Some((bd, bv))
                }
            }
        };
    }
    let mut values = vec![0.0; n];
    for (i, slot) in best.iter().enumerate() {
        match slot {
            Some((_, v)) => values[i] = *v,
            None => {
                let (x, y) = grid.coords(i);
                let missing = best.iter().filter(|s| s.is_none()).count();
                return Err(SimError::config(format!(
                    "{}: table leaves {missing} grid nodes without a value (first at ({x}, {y}))",
                    path.display()
                )));
            }
        }
    }
    Ok(Field::from_values(grid, values))
}

/// Grid node nearest to (x, y). O(1) via cell rounding, with a global scan
/// fallback when the rounded cell is masked out.
fn nearest_node(grid: &Grid, x: f64, y: f64) -> usize {
    let clampi = |v: f64, n: usize| -> usize {
        let i = ((v).floor()).max(0.0) as usize;
        i.min(n - 1)
    };
    let ix = clampi((x - grid.x0) / grid.hx, grid.nx);
    let iy = if grid.dim == 1 { 0 } else { clampi((y - grid.y0) / grid.hy, grid.ny) };
    if let Some(node) = grid.node_at(ix, iy) {
        return node;
    }
    // Masked-out cell: fall back to brute-force nearest retained node.
    let mut best = 0usize;
    let mut bd = f64::INFINITY;
    for node in 0..grid.n_nodes() {
        let (nx, ny) = grid.coords(node);
        let d2 = (x - nx) * (x - nx) + (y - ny) * (y - ny);
        if d2 < bd {
            bd = d2;
            best = node;
        }
    }
    best
}

/// Risk structure derived from the coefficients: r = gamma/beta, its range,
/// the near-minimum node mask, and the pointwise indicator N beta / (|O| gamma).
#[derive(Debug, Clone)]
pub struct RiskData {
    pub r: Field,
    pub r_min: f64,
    pub r_max: f64,
    /// Nodes with r within tolerance of r_min (grid stand-in for the
    /// lowest-risk set).
    pub risk_mask: Vec<bool>,
    /// Pointwise reproduction indicator N beta / (|Omega| gamma), |Omega|
    /// being the grid quadrature measure.
    pub indicator: Field,
    /// Tolerance actually used for the mask.
    pub tol_used: f64,
}

impl RiskData {
    /// Build risk data. `tol` overrides the default mask tolerance
    /// `1e-8 (r_max - r_min) + 4 h^2 max|Lap r|` (curvature-scaled grid slack).
    pub fn build(
        grid: &Grid,
        beta: &Field,
        gamma: &Field,
        n_total: f64,
        tol: Option<f64>,
    ) -> Result<RiskData> {
        grid.check_field(beta)?;
        grid.check_field(gamma)?;
        let n = grid.n_nodes();
        let r_values: Vec<f64> = (0..n).map(|i| gamma.values[i] / beta.values[i]).collect();
        let r_min = r_values.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = r_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol_used = tol.unwrap_or_else(|| default_risk_tol(grid, &r_values, r_min, r_max));
        let risk_mask: Vec<bool> = r_values.iter().map(|&v| v <= r_min + tol_used).collect();
        let omega = grid.measure_h();
        let indicator = Field::from_values(
            grid,
            (0..n)
                .map(|i| n_total * beta.values[i] / (omega * gamma.values[i]))
                .collect(),
        );
        Ok(RiskData {
            r: Field::from_values(grid, r_values),
            r_min,
            r_max,
            risk_mask,
            indicator,
            tol_used,
        })
    }

    /// Quadrature measure of the risk mask.
    pub fn risk_measure(&self, grid: &Grid) -> f64 {
        grid.weight * self.risk_mask.iter().filter(|&&m| m).count() as f64
    }

    /// r^{1/q} as a field (lowest sustainable susceptible density scale).
    pub fn r_pow(&self, grid: &Grid, inv_q: f64) -> Field {
        Field::from_values(grid, self.r.values.iter().map(|&v| v.powf(inv_q)).collect())
    }
}

/// Default mask tolerance: relative floor plus a curvature-scaled grid slack,
/// so nodes adjacent to a smooth interior minimum are captured without
/// sweeping in far-away plateaus.
fn default_risk_tol(grid: &Grid, r: &[f64], r_min: f64, r_max: f64) -> f64 {
    let mut lap = vec![0.0; r.len()];
    grid.apply_laplacian(r, &mut lap);
    let max_curv = lap.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = grid.h_min();
    1e-8 * (r_max - r_min) + 4.0 * h * h * max_curv
}

/// Standalone mask of nodes with r within `tol` of its minimum.
pub fn risk_set(grid: &Grid, r: &Field, tol: f64) -> Result<Vec<bool>> {
    grid.check_field(r)?;
    let r_min = r.values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(r.values.iter().map(|&v| v <= r_min + tol).collect())
}

/// Bundle of evaluated coefficients plus risk data, built once per scenario.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub beta: Field,
    pub gamma: Field,
    pub risk: RiskData,
}

impl Coefficients {
    pub fn build(
        grid: &Grid,
        beta_form: &CoefficientForm,
        gamma_form: &CoefficientForm,
        n_total: f64,
        risk_tol: Option<f64>,
    ) -> Result<Coefficients> {
        let beta = evaluate_coefficient(beta_form, grid, "beta")?;
        let gamma = evaluate_coefficient(gamma_form, grid, "gamma")?;
        let risk = RiskData::build(grid, &beta, &gamma, n_total, risk_tol)?;
        Ok(Coefficients { beta, gamma, risk })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;

    fn disk(n: usize) -> Grid {
        Grid::build(&DomainSpec::Disk { radius: 1.0, n }).unwrap()
    }

    #[test]
    fn sim1_beta_range_and_min_locations() {
        let g = disk(65);
        let beta = evaluate_coefficient(&CoefficientForm::Sim1Beta, &g, "beta").unwrap();
        let gamma = evaluate_coefficient(&CoefficientForm::Sim1Gamma, &g, "gamma").unwrap();
        let lo = beta.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = beta.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo > 0.5 - 1e-3 && lo < 0.52, "beta min {lo}");
        assert!(hi > 2.48 && hi <= 2.5, "beta max {hi}");
        let risk = RiskData::build(&g, &beta, &gamma, 1.0, Some(1e-6)).unwrap();
        assert!((risk.r_min - 0.4).abs() < 1e-3);
        assert!((risk.r_max - 2.0).abs() < 1e-2);
        // Exactly the two nodes nearest (0.5, 0.5) and (-0.5, -0.5).
        let hits: Vec<usize> =
            (0..g.n_nodes()).filter(|&i| risk.risk_mask[i]).collect();
        assert_eq!(hits.len(), 2, "mask: {hits:?}");
        for &i in &hits {
            let (x, y) = g.coords(i);
            let near_a = (x - 0.5).abs() < g.hx && (y - 0.5).abs() < g.hy;
            let near_b = (x + 0.5).abs() < g.hx && (y + 0.5).abs() < g.hy;
            assert!(near_a || near_b, "unexpected risk node at ({x}, {y})");
        }
    }

    #[test]
    fn sim2_risk_set_has_four_components() {
        // Resolution 72 puts x = 0.625 exactly on a cell center and 0, 0.25 on
        // cell faces, so the whole minimum set lies on grid nodes.
        let g = disk(72);
        let beta = evaluate_coefficient(&CoefficientForm::Sim2Beta, &g, "beta").unwrap();
        let gamma = evaluate_coefficient(&CoefficientForm::Sim2Gamma, &g, "gamma").unwrap();
        let risk = RiskData::build(&g, &beta, &gamma, 1.0, Some(1e-6)).unwrap();
        assert_eq!(risk.r_min, 0.5);
        let mut square = 0;
        let mut seg_v = 0;
        let mut seg_h = 0;
        let mut corner = 0;
        for i in 0..g.n_nodes() {
            if !risk.risk_mask[i] {
                continue;
            }
            let (x, y) = g.coords(i);
            let on625 = |v: f64| (v - 0.625).abs() < 1e-12;
            let in_sq = |v: f64| v > 0.0 && v < 0.25;
            if in_sq(x) && in_sq(y) {
                square += 1;
            } else if on625(x) && in_sq(y) {
                seg_v += 1;
            } else if on625(y) && in_sq(x) {
                seg_h += 1;
            } else if on625(x) && on625(y) {
                corner += 1;
            } else {
                panic!("risk node outside the expected set at ({x}, {y})");
            }
        }
        assert_eq!(square, 81);
        assert_eq!(seg_v, 9);
        assert_eq!(seg_h, 9);
        assert_eq!(corner, 1);
    }

    #[test]
    fn piecewise_f_is_continuous() {
        for bp in [0.0, 0.25, 0.5] {
            let left = piecewise_f(bp - 1e-12);
            let right = piecewise_f(bp + 1e-12);
            assert!((left - right).abs() < 1e-9, "jump at {bp}: {left} vs {right}");
        }
        assert_eq!(piecewise_f(0.625), 0.5);
        assert_eq!(piecewise_f(0.1), 0.5);
    }

    #[test]
    fn constant_r_marks_every_node() {
        let g = disk(21);
        let beta = Field::constant(&g, 2.0);
        let gamma = Field::constant(&g, 1.0);
        let risk = RiskData::build(&g, &beta, &gamma, 3.0, None).unwrap();
        assert!(risk.risk_mask.iter().all(|&m| m));
        assert_eq!(risk.r_min, risk.r_max);
        // Indicator N beta / (|O| gamma) is constant.
        let expected = 3.0 * 2.0 / g.measure_h();
        for &v in &risk.indicator.values {
            assert!((v - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn nonpositive_coefficient_rejected() {
        let g = disk(9);
        let err = evaluate_coefficient(&CoefficientForm::Constant(-1.0), &g, "beta");
        assert!(err.is_err());
        let msg = format!("{}", err.unwrap_err());
        assert!(msg.contains("beta"), "message should name the coefficient: {msg}");
    }

    #[test]
    fn table_round_trip_and_errors() {
        let g = Grid::build(&DomainSpec::Interval { length: 1.0, n: 8 }).unwrap();
        let dir = std::env::temp_dir().join("episteady_fields_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("coef.csv");
        // Write one row per node, shuffled order, plus a duplicate farther away.
        let mut rows = Vec::new();
        for i in (0..g.n_nodes()).rev() {
            let (x, _) = g.coords(i);
            rows.push(format!("{x},{}", 1.0 + i as f64));
        }
        rows.push(format!("{},{}", 0.99, 99.0)); // nearer to last node? farther than exact row
        let text = format!("x,value\n{}\n", rows.join("\n"));
        std::fs::write(&path, text).unwrap();
        let f = read_coefficient_table(&path, &g).unwrap();
        for i in 0..g.n_nodes() {
            assert_eq!(f.values[i], 1.0 + i as f64);
        }
        // Bad header.
        std::fs::write(&path, "lon,value\n0.5,1\n").unwrap();
        assert!(read_coefficient_table(&path, &g).is_err());
        // Missing nodes.
        std::fs::write(&path, "x,value\n0.0625,1.0\n").unwrap();
        let err = read_coefficient_table(&path, &g).unwrap_err();
        assert!(format!("{err}").contains("without a value"));
    }
}
