//! Sampled surfaces: weighted point clouds in R^n x R.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::index::KdIndex;
use crate::metric::{parabolic_diameter, StBox, StPoint};

/// A weighted sample of a closed set in R^n x R.
///
/// Points are stored flat: spatial coordinates of point `i` occupy
/// `xs[i*n .. (i+1)*n]`.
pub struct Surface {
    pub n: usize,
    pub spacing: f64,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub ws: Vec<f64>,
    pub warnings: Vec<String>,
    index: OnceLock<KdIndex>,
    diam: OnceLock<f64>,
}

impl Clone for Surface {
    fn clone(&self) -> Self {
        Surface::new(self.n, self.spacing, self.xs.clone(), self.ts.clone(), self.ws.clone())
            .map(|mut s| {
                s.warnings = self.warnings.clone();
                s
            })
            .expect("cloning a valid surface")
    }
}

impl std::fmt::Debug for Surface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Surface")
            .field("n", &self.n)
            .field("spacing", &self.spacing)
            .field("len", &self.len())
            .field("warnings", &self.warnings)
            .finish()
    }
}

impl Surface {
    pub fn new(n: usize, spacing: f64, xs: Vec<f64>, ts: Vec<f64>, ws: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("spatial dimension n must be at least 1".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Input(format!("spacing must be positive, got {spacing}")));
        }
        if xs.len() != ts.len() * n || ws.len() != ts.len() {
            return Err(Error::Input("coordinate, time and weight arrays disagree in length".into()));
        }
        if ts.is_empty() {
            return Err(Error::Input("surface has no points".into()));
        }
        if xs.iter().chain(&ts).chain(&ws).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite coordinate or weight".into()));
        }
        if ws.iter().any(|w| *w < 0.0) {
            return Err(Error::Input("negative weight".into()));
        }
        Ok(Surface { n, spacing, xs, ts, ws, warnings: Vec::new(), index: OnceLock::new(), diam: OnceLock::new() })
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.n..(i + 1) * self.n]
    }

    pub fn point(&self, i: usize) -> StPoint {
        StPoint::new(self.x(i).to_vec(), self.ts[i])
    }

    pub fn index(&self) -> &KdIndex {
        self.index.get_or_init(|| KdIndex::from_points(self.n, &self.xs, &self.ts))
    }

    pub fn bbox(&self) -> StBox {
        let mut b = StBox::empty(self.n);
        for i in 0..self.len() {
            b.extend(self.x(i), self.ts[i]);
        }
        b
    }

    /// Exact parabolic diameter of the whole sample.
    pub fn diam(&self) -> f64 {
        *self.diam.get_or_init(|| {
            let ids: Vec<u32> = (0..self.len() as u32).collect();
            self.diam_of(&ids)
        })
    }

    pub fn diam_of(&self, ids: &[u32]) -> f64 {
        parabolic_diameter(ids, |i| (self.x(i as usize), self.ts[i as usize]))
    }

    pub fn total_weight(&self) -> f64 {
        self.ws.iter().sum()
    }

    /// Sorted distinct time values.
    pub fn time_rows(&self) -> Vec<f64> {
        let mut t = self.ts.clone();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.dedup();
        t
    }

    /// Check the sampling invariants; returns human-readable problems.
    ///
    /// The header spacing is compared with the median nearest-neighbour
    /// distance; a factor above 4 either way is reported.
    pub fn sampling_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.len() < 2 {
            return out;
        }
        let idx = self.index();
        let step = (self.len() / 2000).max(1);
        let mut nn = Vec::new();
        let mut too_close = 0usize;
        for i in (0..self.len()).step_by(step) {
            let best = idx.nearest_excluding(self.x(i), self.ts[i], i as u32).map(|b| b.1).unwrap_or(f64::INFINITY);
            if best < self.spacing / 10.0 {
                too_close += 1;
            }
            nn.push(best);
        }
        nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = nn[nn.len() / 2];
        if med > 4.0 * self.spacing || med < self.spacing / 4.0 {
            out.push(format!("header spacing {} inconsistent with median nearest-neighbour distance {}", self.spacing, med));
        }
        if too_close > 0 {
            out.push(format!("{too_close} sampled points have a neighbour closer than spacing/10"));
        }
        out
    }

    /// Sub-surface of the given point ids (keeps spacing).
    pub fn subset(&self, ids: &[u32]) -> Result<Surface> {
        let mut xs = Vec::with_capacity(ids.len() * self.n);
        let mut ts = Vec::with_capacity(ids.len());
        let mut ws = Vec::with_capacity(ids.len());
        for &i in ids {
            xs.extend_from_slice(self.x(i as usize));
            ts.push(self.ts[i as usize]);
            ws.push(self.ws[i as usize]);
        }
        Surface::new(self.n, self.spacing, xs, ts, ws)
    }
}
