//! Semantic layout masks for a human–object pair and their projection.
//!
//! Both boxes are drawn into an `S x S` grid covering the pair's union box
//! padded to a square around its center. A cell belongs to a box when the
//! cell center lies inside it (half-open on the far edges); its value is the
//! category code `(c + 1) / (C + 1)`. Since each channel is a single filled
//! rectangle, the projection `σ(W · mask + b)` is evaluated from per-row
//! integral images of `W` in `O(d)` per pair instead of `O(d · S²)`.

use crate::datamodel::{BoundingBox, Vocabulary};
use crate::error::{Error, Result};
use crate::params::{names, ParameterStore};
use crate::tape::{sigmoid, Mat};

/// Half-open cell range `rows × cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl CellRect {
    pub fn is_empty(&self) -> bool {
        self.row0 >= self.row1 || self.col0 >= self.col1
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.row0..self.row1).contains(&r) && (self.col0..self.col1).contains(&c)
    }
}

/// Compact description of a mask pair: one rectangle and one value per
/// channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskLayout {
    pub size: usize,
    pub human: CellRect,
    pub object: CellRect,
    pub human_value: f64,
    pub object_value: f64,
}

/// Dense masks, row-major `size x size` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMaskPair {
    pub size: usize,
    pub human: Vec<f64>,
    pub object: Vec<f64>,
}

impl SemanticMaskPair {
    /// `[human; object]`, length `2·S²`.
    pub fn flat(&self) -> Vec<f64> {
        self.human.iter().chain(&self.object).copied().collect()
    }
}

/// Injective category code in `(0, 1]`.
pub fn category_code(category: usize, num_categories: usize) -> f64 {
    (category as f64 + 1.0) / (num_categories as f64 + 1.0)
}

fn span(lo: f64, hi: f64, origin: f64, side: f64, size: usize) -> (usize, usize) {
    let s = size as f64;
    let a = (lo - origin) / side * s;
    let b = (hi - origin) / side * s;
    let start = (a - 0.5).ceil().clamp(0.0, s) as usize;
    let end = (b - 0.5).ceil().clamp(0.0, s) as usize;
    (start, end.max(start))
}

pub fn mask_layout(
    human_box: &BoundingBox,
    object_box: &BoundingBox,
    human_category: usize,
    object_category: usize,
    num_categories: usize,
    size: usize,
) -> Result<MaskLayout> {
    for b in [human_box, object_box] {
        if let Some(why) = b.violation() {
            return Err(Error::Domain(format!("mask box {b:?}: {why}")));
        }
        if !(b.area() > 0.0) {
            return Err(Error::Domain(format!("mask box {b:?} has zero area")));
        }
    }
    if human_category >= num_categories || object_category >= num_categories {
        return Err(Error::Index(format!(
            "category outside vocabulary of {num_categories}"
        )));
    }
    if size == 0 {
        return Err(Error::Contract("mask size must be positive".into()));
    }
    let u = human_box.union(object_box);
    let side = u.width().max(u.height());
    let (cx, cy) = u.center();
    let (x0, y0) = (cx - side / 2.0, cy - side / 2.0);
    let rect = |b: &BoundingBox| {
        let (row0, row1) = span(b.y_tl, b.y_br, y0, side, size);
        let (col0, col1) = span(b.x_tl, b.x_br, x0, side, size);
        CellRect { row0, row1, col0, col1 }
    };
    Ok(MaskLayout {
        size,
        human: rect(human_box),
        object: rect(object_box),
        human_value: category_code(human_category, num_categories),
        object_value: category_code(object_category, num_categories),
    })
}

impl MaskLayout {
    pub fn dense(&self) -> SemanticMaskPair {
        let s = self.size;
        let fill = |rect: &CellRect, v: f64| {
            let mut m = vec![0.0; s * s];
            for r in rect.row0..rect.row1 {
                for c in rect.col0..rect.col1 {
                    m[r * s + c] = v;
                }
            }
            m
        };
        SemanticMaskPair {
            size: s,
            human: fill(&self.human, self.human_value),
            object: fill(&self.object, self.object_value),
        }
    }
}

/// Dense semantic masks for a pair.
pub fn build_semantic_masks(
    human_box: &BoundingBox,
    object_box: &BoundingBox,
    human_category: usize,
    object_category: usize,
    vocab: &Vocabulary,
    size: usize,
) -> Result<SemanticMaskPair> {
    Ok(mask_layout(
        human_box,
        object_box,
        human_category,
        object_category,
        vocab.num_objects(),
        size,
    )?
    .dense())
}

/// Reference projection `σ(W · flat + b)` over the dense masks.
pub fn project_masks(masks: &SemanticMaskPair, store: &ParameterStore) -> Result<Vec<f64>> {
    let w = store.get(names::MASK_WEIGHT)?;
    let b = store.get(names::MASK_BIAS)?;
    let flat = masks.flat();
    if w.ncols() != flat.len() {
        return Err(Error::Contract(format!(
            "mask weight expects {} cells, got {}",
            w.ncols(),
            flat.len()
        )));
    }
    let z = w.dot(&ndarray::Array1::from(flat));
    Ok(z.iter().zip(b.row(0)).map(|(z, b)| sigmoid(z + b)).collect())
}

/// Integral-image form of the mask projection weights.
#[derive(Debug, Clone)]
pub struct MaskProjector {
    size: usize,
    out: usize,
    integral: Vec<f64>,
    bias: Vec<f64>,
}

impl MaskProjector {
    pub fn new(store: &ParameterStore, size: usize) -> Result<Self> {
        let mut p = MaskProjector {
            size,
            out: 0,
            integral: Vec::new(),
            bias: Vec::new(),
        };
        p.refresh(store)?;
        Ok(p)
    }

    /// Recomputes the integral images after a weight update.
    pub fn refresh(&mut self, store: &ParameterStore) -> Result<()> {
        let w = store.get(names::MASK_WEIGHT)?;
        let s = self.size;
        if w.ncols() != 2 * s * s {
            return Err(Error::Contract(format!(
                "mask weight has {} columns, expected {}",
                w.ncols(),
                2 * s * s
            )));
        }
        let stride = s + 1;
        let plane = stride * stride;
        self.out = w.nrows();
        self.integral.clear();
        self.integral.resize(self.out * 2 * plane, 0.0);
        for (j, row) in w.rows().into_iter().enumerate() {
            let row = row.as_slice().expect("standard layout");
            for ch in 0..2 {
                let cells = &row[ch * s * s..(ch + 1) * s * s];
                let dst = &mut self.integral[(j * 2 + ch) * plane..(j * 2 + ch + 1) * plane];
                for (r, src) in cells.chunks_exact(s).enumerate() {
                    let (above, below) = dst.split_at_mut((r + 1) * stride);
                    let above = &above[r * stride + 1..];
                    let mut run = 0.0;
                    for ((d, &a), &x) in below[1..stride].iter_mut().zip(above).zip(src) {
                        run += x;
                        *d = a + run;
                    }
                }
            }
        }
        self.bias = store.get(names::MASK_BIAS)?.iter().copied().collect();
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        self.out
    }

    fn rect_sum(&self, j: usize, ch: usize, r: &CellRect) -> f64 {
        if r.is_empty() {
            return 0.0;
        }
        let stride = self.size + 1;
        let base = (j * 2 + ch) * stride * stride;
        let at = |row: usize, col: usize| self.integral[base + row * stride + col];
        at(r.row1, r.col1) - at(r.row0, r.col1) - at(r.row1, r.col0) + at(r.row0, r.col0)
    }

    /// `W · mask + b` without the squashing.
    pub fn preactivation(&self, layout: &MaskLayout) -> Result<Vec<f64>> {
        if layout.size != self.size {
            return Err(Error::Contract(format!(
                "layout size {} vs projector size {}",
                layout.size, self.size
            )));
        }
        Ok((0..self.out)
            .map(|j| {
                self.bias[j]
                    + layout.human_value * self.rect_sum(j, 0, &layout.human)
                    + layout.object_value * self.rect_sum(j, 1, &layout.object)
            })
            .collect())
    }

    pub fn project(&self, layout: &MaskLayout) -> Result<Vec<f64>> {
        Ok(self.preactivation(layout)?.into_iter().map(sigmoid).collect())
    }
}

/// Accumulates gradients of the mask projection with respect to its
/// weights, given pre-activation gradients per pair. Rectangle updates go
/// into a difference array; a 2-D prefix sum recovers the dense gradient.
#[derive(Debug, Clone)]
pub struct MaskGradAccumulator {
    size: usize,
    out: usize,
    diff: Vec<f64>,
    bias: Vec<f64>,
    touched: bool,
}

impl MaskGradAccumulator {
    pub fn new(size: usize, out: usize) -> Self {
        let plane = (size + 1) * (size + 1);
        MaskGradAccumulator {
            size,
            out,
            diff: vec![0.0; out * 2 * plane],
            bias: vec![0.0; out],
            touched: false,
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.touched
    }

    pub fn clear(&mut self) {
        self.diff.fill(0.0);
        self.bias.fill(0.0);
        self.touched = false;
    }

    /// Adds `∂L/∂z` for one pair.
    pub fn add(&mut self, layout: &MaskLayout, dz: &[f64]) {
        assert_eq!(dz.len(), self.out, "one gradient entry per output");
        let stride = self.size + 1;
        let plane = stride * stride;
        self.touched = true;
        for (j, &g) in dz.iter().enumerate() {
            self.bias[j] += g;
            for (ch, rect, v) in [
                (0, &layout.human, layout.human_value),
                (1, &layout.object, layout.object_value),
            ] {
                if rect.is_empty() {
                    continue;
                }
                let a = g * v;
                let d = &mut self.diff[(j * 2 + ch) * plane..];
                d[rect.row0 * stride + rect.col0] += a;
                d[rect.row0 * stride + rect.col1] -= a;
                d[rect.row1 * stride + rect.col0] -= a;
                d[rect.row1 * stride + rect.col1] += a;
            }
        }
    }

    /// Dense gradient of output `j`, channel `ch` into `out` (`size²` cells).
    fn plane_grad(&self, j: usize, ch: usize, out: &mut [f64]) {
        let s = self.size;
        let stride = s + 1;
        let plane = stride * stride;
        let d = &self.diff[(j * 2 + ch) * plane..(j * 2 + ch + 1) * plane];
        for r in 0..s {
            let (done, rest) = out.split_at_mut(r * s);
            let prev = if r == 0 { None } else { Some(&done[(r - 1) * s..]) };
            let cur = &mut rest[..s];
            let mut run = 0.0;
            for (c, (o, &x)) in cur.iter_mut().zip(&d[r * stride..r * stride + s]).enumerate() {
                run += x;
                *o = run + prev.map_or(0.0, |p| p[c]);
            }
        }
    }

    /// Dense `(weight, bias)` gradients.
    pub fn dense(&self) -> (Mat, Mat) {
        let s = self.size;
        let mut w = Mat::zeros((self.out, 2 * s * s));
        for (j, mut row) in w.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for (ch, dst) in row.chunks_exact_mut(s * s).enumerate() {
                self.plane_grad(j, ch, dst);
            }
        }
        let b = Mat::from_shape_vec((1, self.out), self.bias.clone()).expect("bias row");
        (w, b)
    }

    /// In-place `param -= scale · grad` on the mask weight and bias.
    pub fn apply_sgd(&self, store: &mut ParameterStore, scale: f64) -> Result<()> {
        if !self.touched {
            return Ok(());
        }
        let s = self.size;
        let mut buf = vec![0.0; s * s];
        {
            let w = store.get_mut(names::MASK_WEIGHT)?;
            if w.dim() != (self.out, 2 * s * s) {
                return Err(Error::Contract(format!(
                    "mask weight has shape {:?}, accumulator expects {:?}",
                    w.dim(),
                    (self.out, 2 * s * s)
                )));
            }
            for (j, mut row) in w.rows_mut().into_iter().enumerate() {
                let row = row.as_slice_mut().expect("standard layout");
                for (ch, dst) in row.chunks_exact_mut(s * s).enumerate() {
                    self.plane_grad(j, ch, &mut buf);
                    dst.iter_mut().zip(&buf).for_each(|(w, g)| *w -= scale * g);
                }
            }
        }
        let b = store.get_mut(names::MASK_BIAS)?;
        for (bj, g) in b.iter_mut().zip(&self.bias) {
            *bj -= scale * g;
        }
        Ok(())
    }
}
