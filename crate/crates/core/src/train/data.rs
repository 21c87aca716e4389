use std::fmt;
use std::path::Path;
use std::str::FromStr;

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};

use crate::error::{Error, Result};
use crate::model::fmt17;

/// Samples `(x^(k), y^(k))` over a box domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub domain: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>, domain: Vec<(f64, f64)>) -> Result<Self> {
        let data = Self { inputs, targets, domain };
        data.validate()?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.domain.len()
    }

    /// Affinely maps the targets onto `[-1, 1]` (min to −1, max to 1).
    /// Constant targets map to 0.
    pub fn normalized(&self) -> Self {
        let lo = self.targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let targets = if hi > lo {
            self.targets.iter().map(|y| (2.0 * (y - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)).collect()
        } else {
            vec![0.0; self.targets.len()]
        };
        Self { inputs: self.inputs.clone(), targets, domain: self.domain.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::InvalidConfig(format!(
                "{} inputs but {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        for (k, x) in self.inputs.iter().enumerate() {
            if x.len() != self.m() {
                return Err(Error::DimensionMismatch { expected: (self.m(), 1), found: (x.len(), 1) });
            }
            for (v, (lo, hi)) in x.iter().zip(&self.domain) {
                if !v.is_finite() || v < lo || v > hi {
                    return Err(Error::InvalidConfig(format!("sample {} input {v} outside [{lo}, {hi}]", k + 1)));
                }
            }
        }
        if self.targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("dataset targets"));
        }
        Ok(())
    }

    /// CSV with header `x1,…,xm,y`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (1..=self.m()).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let mut row: Vec<String> = x.iter().map(|v| fmt17(*v)).collect();
            row.push(fmt17(*y));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is ASCII"))
    }

    /// Parses the CSV layout of [`Dataset::to_csv`]. The domain is the
    /// given one, or the default `[-1, 1]^m`.
    pub fn from_csv(text: &str, domain: Option<Vec<(f64, f64)>>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let m = header.len().saturating_sub(1);
        let expected: Vec<String> = (1..=m).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
        if m == 0 || header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
            return Err(Error::InvalidConfig(format!("dataset header must be x1,…,xm,y; got {:?}", header)));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("bad number {v:?}"))))
                .collect::<Result<_>>()?;
            targets.push(vals[m]);
            inputs.push(vals[..m].to_vec());
        }
        Self::new(inputs, targets, domain.unwrap_or_else(|| vec![(-1.0, 1.0); m]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn load(path: &Path, domain: Option<Vec<(f64, f64)>>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, domain)
    }
}

/// Target function of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// `2x + 3x² + x³ + 10x⁶ + 8x⁷ − 3x⁹ + 5x¹⁰ − 13x¹²`.
    Eq14,
    /// `(x1² + x2 − 3)² + (x1 + x2² − 1)²`.
    Eq17,
    /// Expression in `x1, …, xm` (`x` is an alias of `x1`), evaluated with
    /// the `evalexpr` grammar.
    Expr(String),
}

/// Coefficients `(power, coefficient)` of the univariate polynomial target.
pub const EQ14_TERMS: [(i32, f64); 8] =
    [(1, 2.0), (2, 3.0), (3, 1.0), (6, 10.0), (7, 8.0), (9, -3.0), (10, 5.0), (12, -13.0)];

pub fn eq14(x: f64) -> f64 {
    EQ14_TERMS.iter().map(|&(p, c)| c * x.powi(p)).sum()
}

pub fn eq17(x1: f64, x2: f64) -> f64 {
    (x1 * x1 + x2 - 3.0).powi(2) + (x1 + x2 * x2 - 1.0).powi(2)
}

impl Target {
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Self::Eq14 => Some(1),
            Self::Eq17 => Some(2),
            Self::Expr(_) => None,
        }
    }

    fn compile(&self) -> Result<Option<Node<DefaultNumericTypes>>> {
        match self {
            Self::Expr(e) => evalexpr::build_operator_tree::<DefaultNumericTypes>(e)
                .map(Some)
                .map_err(|err| Error::InvalidExpression { expr: e.clone(), reason: err.to_string() }),
            _ => Ok(None),
        }
    }

    /// Evaluates the target at every input.
    pub fn evaluate_all(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let node = self.compile()?;
        inputs
            .iter()
            .map(|x| match (self, &node) {
                (Self::Eq14, _) => Ok(eq14(x[0])),
                (Self::Eq17, _) => Ok(eq17(x[0], x[1])),
                (Self::Expr(e), Some(node)) => eval_expr(e, node, x),
                (Self::Expr(_), None) => unreachable!("expressions always compile to a node"),
            })
            .collect()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate_all(&[x.to_vec()])?[0])
    }
}

fn eval_expr(expr: &str, node: &Node<DefaultNumericTypes>, x: &[f64]) -> Result<f64> {
    let bad = |reason: String| Error::InvalidExpression { expr: expr.to_string(), reason };
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    for (i, v) in x.iter().enumerate() {
        ctx.set_value(format!("x{}", i + 1), Value::from_float(*v)).map_err(|e| bad(e.to_string()))?;
    }
    if let Some(&v) = x.first() {
        ctx.set_value("x".into(), Value::from_float(v)).map_err(|e| bad(e.to_string()))?;
    }
    let y = node.eval_number_with_context(&ctx).map_err(|e| bad(e.to_string()))?;
    if !y.is_finite() {
        return Err(bad(format!("non-finite value at {x:?}")));
    }
    Ok(y)
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Eq14 => f.write_str("eq14"),
            Self::Eq17 => f.write_str("eq17"),
            Self::Expr(e) => write!(f, "expr:{e}"),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    /// `eq14`, `eq17`, or an expression (optionally prefixed `expr:`).
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "eq14" => Self::Eq14,
            "eq17" => Self::Eq17,
            other => Self::Expr(other.strip_prefix("expr:").unwrap_or(other).to_string()),
        })
    }
}

/// Evenly spaced inclusive grid: `points[i]` values along input `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: Vec<(f64, f64)>,
    pub points: Vec<usize>,
}

impl Grid {
    pub fn uniform(domain: Vec<(f64, f64)>, points: usize) -> Self {
        let m = domain.len();
        Self { domain, points: vec![points; m] }
    }

    /// Grid inputs with the first coordinate varying slowest.
    pub fn inputs(&self) -> Result<Vec<Vec<f64>>> {
        if self.domain.is_empty() || self.points.len() != self.domain.len() {
            return Err(Error::InvalidConfig("grid needs one point count per input".into()));
        }
        if self.points.contains(&0) {
            return Err(Error::InvalidConfig("grid point counts must be positive".into()));
        }
        let axes: Vec<Vec<f64>> = self
            .domain
            .iter()
            .zip(&self.points)
            .map(|(&(lo, hi), &p)| {
                if p == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    // Pin the end point so the grid is exactly inclusive.
                    (0..p).map(|i| if i + 1 == p { hi } else { lo + (hi - lo) * i as f64 / (p - 1) as f64 }).collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

pub fn make_dataset(target: &Target, grid: &Grid) -> Result<Dataset> {
    if let Some(m) = target.input_dim() {
        if m != grid.domain.len() {
            return Err(Error::InvalidConfig(format!(
                "target {target} takes {m} inputs, grid has {}",
                grid.domain.len()
            )));
        }
    }
    let inputs = grid.inputs()?;
    let targets = target.evaluate_all(&inputs)?;
    Dataset::new(inputs, targets, grid.domain.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_values() {
        assert_eq!(eq14(0.0), 0.0);
        // Direct polynomial evaluation at 1: sum of the coefficients.
        assert_eq!(eq14(1.0), 2.0 + 3.0 + 1.0 + 10.0 + 8.0 - 3.0 + 5.0 - 13.0);
        assert_eq!(eq14(1.0), 13.0);
        assert_eq!(eq17(0.0, 0.0), 10.0);
    }

    #[test]
    fn normalization_spans_unit_interval() {
        let data = make_dataset(&Target::Eq14, &Grid::uniform(vec![(-1.0, 1.0)], 41)).unwrap();
        let norm = data.normalized();
        let lo = norm.targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = norm.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (-1.0, 1.0));
        // The map is affine, so ratios of differences survive.
        let d = |t: &[f64], a: usize, b: usize| t[a] - t[b];
        let r0 = d(&data.targets, 3, 7) / d(&data.targets, 30, 12);
        let r1 = d(&norm.targets, 3, 7) / d(&norm.targets, 30, 12);
        assert!((r0 - r1).abs() < 1e-12);
        let flat = Dataset::new(vec![vec![0.0], vec![0.5]], vec![2.0, 2.0], vec![(-1.0, 1.0)]).unwrap();
        assert_eq!(flat.normalized().targets, vec![0.0, 0.0]);
    }

    #[test]
    fn expression_targets() {
        let t: Target = "x^2 + 2*x1".parse().unwrap();
        assert!((t.evaluate(&[0.5]).unwrap() - 1.25).abs() < 1e-15);
        let t: Target = "math::sin(x1) * x2".parse().unwrap();
        assert!((t.evaluate(&[0.3, 2.0]).unwrap() - 2.0 * 0.3f64.sin()).abs() < 1e-15);
        assert!(matches!("x1 +".parse::<Target>().unwrap().evaluate(&[0.0]), Err(Error::InvalidExpression { .. })));
        assert!(matches!("y * 2".parse::<Target>().unwrap().evaluate(&[0.0]), Err(Error::InvalidExpression { .. })));
    }

    #[test]
    fn grids_are_inclusive_and_ordered() {
        let g = Grid::uniform(vec![(-1.0, 1.0)], 200);
        let xs = g.inputs().unwrap();
        assert_eq!(xs.len(), 200);
        assert_eq!(xs[0][0], -1.0);
        assert_eq!(xs[199][0], 1.0);
        let g = Grid::uniform(vec![(-1.0, 1.0), (0.0, 2.0)], 50);
        let xs = g.inputs().unwrap();
        assert_eq!(xs.len(), 2500);
        assert_eq!(xs[1], vec![-1.0, 2.0 / 49.0]);
        assert_eq!(xs[50][0], -1.0 + 2.0 / 49.0);
    }

    #[test]
    fn csv_round_trip() {
        let d = make_dataset(&Target::Eq17, &Grid::uniform(vec![(-1.0, 1.0); 2], 4)).unwrap();
        let text = d.to_csv().unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        assert_eq!(Dataset::from_csv(&text, None).unwrap(), d);
        assert!(Dataset::from_csv("a,b\n1,2\n", None).is_err());
    }

    #[test]
    fn rejects_inputs_outside_domain() {
        assert!(Dataset::new(vec![vec![2.0]], vec![0.0], vec![(-1.0, 1.0)]).is_err());
        assert!(make_dataset(&Target::Eq17, &Grid::uniform(vec![(-1.0, 1.0)], 3)).is_err());
    }
}
