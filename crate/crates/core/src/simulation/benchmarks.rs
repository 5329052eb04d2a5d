//! Published Monte Carlo summaries for the default design (n = 1000,
//! Se = 0.95, Sp = 0.97) that study presets are compared against.

/// A target value with an acceptance band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Band {
    /// |achieved − target| ≤ tol.
    Absolute(f64),
    /// |achieved − target| ≤ tol·|target|.
    Relative(f64),
    /// achieved < bound.
    Below,
    /// lower ≤ achieved ≤ upper, with `target` ignored.
    Within(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub achieved: f64,
    pub target: f64,
    pub band: Band,
}

impl Check {
    pub fn new(label: impl Into<String>, achieved: f64, target: f64, band: Band) -> Self {
        Self { label: label.into(), achieved, target, band }
    }

    pub fn passed(&self) -> bool {
        let a = self.achieved;
        if !a.is_finite() {
            return false;
        }
        match self.band {
            Band::Absolute(tol) => (a - self.target).abs() <= tol,
            Band::Relative(tol) => (a - self.target).abs() <= tol * self.target.abs(),
            Band::Below => a < self.target,
            Band::Within(lo, hi) => lo <= a && a <= hi,
        }
    }

    pub fn describe_target(&self) -> String {
        match self.band {
            Band::Absolute(tol) => format!("{:.4} ± {tol}", self.target),
            Band::Relative(tol) => format!("{:.4} ± {:.0}%", self.target, tol * 100.0),
            Band::Below => format!("< {:.4}", self.target),
            Band::Within(lo, hi) => format!("in [{lo}, {hi}]"),
        }
    }
}

/// Pool sizes with published results.
pub const POOL_SIZES: [usize; 3] = [1, 2, 4];

/// Selective coverage of the null coefficients 4 and 6 at the median-AIC penalty, by pool size.
pub const SELECTIVE_NULL_COVERAGE: [f64; 3] = [0.949, 0.941, 0.942];
/// Naive coverage of the null coefficients, by pool size.
pub const NAIVE_NULL_COVERAGE: [f64; 3] = [0.928, 0.912, 0.901];
/// Mean selective interval width for coefficient 4, by pool size.
pub const SELECTIVE_NULL_WIDTH: [f64; 3] = [2.5, 2.8, 3.5];
/// Mean naive interval width for coefficient 4, by pool size.
pub const NAIVE_NULL_WIDTH: [f64; 3] = [0.9, 1.0, 1.1];
/// Coverage band half-width (proportion) for the coverage targets above.
pub const COVERAGE_TOL: f64 = 0.025;
/// Relative band for mean widths.
pub const WIDTH_TOL: f64 = 0.15;

/// Misspecified assay (true 0.90/0.92, assumed 0.95/0.97), m = 1: selective
/// coverage of coefficient 2 stays below this bound.
pub const MISSPEC_SIGNAL_COVERAGE_BOUND: f64 = 0.25;
/// Misspecified assay, m = 1: selective coverage of coefficient 4.
pub const MISSPEC_NULL_COVERAGE: f64 = 0.953;

/// Splitting at m = 2: coverage of coefficient 2 and mean width for coefficient 4.
pub const SPLIT_SIGNAL_COVERAGE: f64 = 0.958;
pub const SPLIT_NULL_WIDTH: f64 = 1.7;

/// Type I error band for the selective method across the penalty grid.
pub const SELECTIVE_TYPE_I_BAND: (f64, f64) = (0.03, 0.07);
/// The naive method exceeds this Type I error over the top quartile of the grid at m = 4.
pub const NAIVE_TYPE_I_FLOOR: f64 = 0.08;
