//! Layer encoder and decoder.
//!
//! A flat weight vector is split into consecutive pairs. Pairs are assigned
//! to distance rings around the centroid, pulled toward the centroid by the
//! ring's scale factor so that every pair lands in the inner disk of radius
//! `l/2`, and replaced by the index of the nearest codebook point. The stored
//! index is `θ = m·U + λ` where `m` is the ring and `λ` the codebook point.

use std::fmt;
use std::sync::{Arc, OnceLock};

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitpack::{bit_width_for, pack_bits, packed_len, unpack_bits};
use crate::ergodic::{build_codebook, direction_vector, trajectory_point, Codebook, CodebookConfig, DirectionMode, Point};
use crate::error::{Error, Result};
use crate::kdtree::dist2;

/// User-facing encoder parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeParams {
    pub l: f64,
    pub u: u32,
    pub max_class: u16,
    #[serde(default)]
    pub direction: DirectionMode,
}

impl Default for EncodeParams {
    fn default() -> Self {
        EncodeParams {
            l: 0.1,
            u: 225,
            max_class: 3,
            direction: DirectionMode::GridShear,
        }
    }
}

impl EncodeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::domain(format!("box side l must be positive, got {}", self.l)));
        }
        if self.u == 0 {
            return Err(Error::domain("index bound U must be at least 1"));
        }
        if (self.max_class as u64 + 1) * self.u as u64 > 1u64 << 32 {
            return Err(Error::domain("(max_class + 1) * U must fit in 32 bits"));
        }
        Ok(())
    }
}

/// Which acceleration paths the encoder uses.
///
/// All modes produce identical θ streams; they differ only in speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Whole-array scaling plus k-d tree queries, spread over the rayon pool.
    #[default]
    Full,
    /// Whole-array scaling, exhaustive scan of the stored codebook.
    NoKd,
    /// Per-group scalar loop with k-d tree queries.
    NoMatrix,
    /// Per-group scalar loop; each query walks the trajectory from `λ = 0`
    /// without a prebuilt index.
    Naive,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Full => "full",
            SearchMode::NoKd => "no-kd",
            SearchMode::NoMatrix => "no-matrix",
            SearchMode::Naive => "naive",
        })
    }
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SearchMode::Full),
            "no-kd" => Ok(SearchMode::NoKd),
            "no-matrix" => Ok(SearchMode::NoMatrix),
            "naive" => Ok(SearchMode::Naive),
            other => Err(Error::domain(format!("unknown search mode {other:?}"))),
        }
    }
}

/// Pairs formed from a flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub points: Vec<Point>,
    pub padded: bool,
    /// Value appended to odd-length input; 0 when not padded.
    pub pad_value: f64,
}

/// Splits `weights` into consecutive non-overlapping pairs.
///
/// An odd trailing weight is paired with the x-centroid of the pairs formed
/// when that weight is duplicated, so padding sits near the layer centre.
pub fn group_pairs(weights: &[f32]) -> Result<Grouping> {
    if let Some((index, &w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite()) {
        return Err(Error::NonFinite {
            index,
            value: w as f64,
        });
    }
    let mut points: Vec<Point> = weights
        .chunks_exact(2)
        .map(|c| [c[0] as f64, c[1] as f64])
        .collect();
    let mut pad_value = 0.0;
    let padded = weights.len() % 2 == 1;
    if padded {
        let last = *weights.last().unwrap() as f64;
        let sum_x: f64 = points.iter().map(|p| p[0]).sum::<f64>() + last;
        pad_value = sum_x / (points.len() + 1) as f64;
        points.push([last, pad_value]);
    }
    Ok(Grouping {
        points,
        padded,
        pad_value,
    })
}

#[inline]
fn centroid_distance(p: Point, c: Point) -> f64 {
    dist2(p, c).sqrt()
}

/// Centroid of `points` and the largest distance from it.
pub fn analyze(points: &[Point]) -> Result<(Point, f64)> {
    if points.is_empty() {
        return Err(Error::domain("analyze needs at least one point"));
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    let c = [sx / n, sy / n];
    let l_f = points
        .iter()
        .map(|&p| centroid_distance(p, c))
        .fold(0.0, f64::max);
    Ok((c, l_f))
}

/// Ring index for a pair at distance `d` from the centroid.
///
/// Ring 0 is the disk of radius `l/2`; ring `m ≥ 1` holds distances up to
/// `l/2 + (l_f/M)·m`.
pub fn categorize(d: f64, l: f64, l_f: f64, max_class: u16) -> Result<u16> {
    let half = l / 2.0;
    if d <= half {
        return Ok(0);
    }
    let slack = 1e-9 * (half + l_f);
    if d > half + l_f + slack {
        return Err(Error::Consistency(format!(
            "distance {d} exceeds l/2 + l_f = {}",
            half + l_f
        )));
    }
    if max_class == 0 {
        return Err(Error::Consistency(format!(
            "distance {d} outside the inner disk (l/2 = {half}) with no outer rings"
        )));
    }
    let ring = l_f / max_class as f64;
    for m in 1..=max_class {
        if d <= half + ring * m as f64 {
            return Ok(m);
        }
    }
    Ok(max_class)
}

/// `s_m = (l/2)/(l/2 + (l_f/M)·m)`; 1 for the inner ring or a degenerate layer.
pub fn scale_factor(m: u16, l: f64, l_f: f64, max_class: u16) -> Result<f64> {
    if m > max_class {
        return Err(Error::domain(format!("category {m} exceeds max_class {max_class}")));
    }
    if m == 0 || l_f == 0.0 {
        return Ok(1.0);
    }
    let half = l / 2.0;
    Ok(half / (half + (l_f / max_class as f64) * m as f64))
}

/// Per-group ring assignment and scale factor list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePlan {
    pub categories: Array1<u16>,
    pub scales: Array1<f64>,
}

impl ScalePlan {
    /// Categorises every row of `centered` (points minus centroid).
    pub fn compute(centered: &Array2<f64>, config: &CodebookConfig) -> Result<Self> {
        let table = scale_table(config)?;
        let categories = centered
            .axis_iter(Axis(0))
            .map(|r| {
                let d = (r[0] * r[0] + r[1] * r[1]).sqrt();
                categorize(d, config.l, config.l_f, config.max_class)
            })
            .collect::<Result<Array1<u16>>>()?;
        let scales = categories.mapv(|m| table[m as usize]);
        Ok(ScalePlan { categories, scales })
    }
}

fn scale_table(config: &CodebookConfig) -> Result<Vec<f64>> {
    (0..=config.max_class)
        .map(|m| scale_factor(m, config.l, config.l_f, config.max_class))
        .collect()
}

/// `(√2·l/⌊√U⌋)/s_m`: per-weight decode error bound for ring `m`.
pub fn error_bound(config: &CodebookConfig, m: u16) -> Result<f64> {
    Ok(config.covering_radius() / scale_factor(m, config.l, config.l_f, config.max_class)?)
}

#[derive(Default)]
struct CodebookCache(OnceLock<Arc<Codebook>>);

impl Clone for CodebookCache {
    fn clone(&self) -> Self {
        let cache = CodebookCache::default();
        if let Some(cb) = self.0.get() {
            let _ = cache.0.set(Arc::clone(cb));
        }
        cache
    }
}

impl fmt::Debug for CodebookCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0.get().is_some() { "cached" } else { "empty" })
    }
}

/// One compressed tensor: the packed θ stream plus everything needed to
/// rebuild its codebook.
#[derive(Debug, Clone)]
pub struct EncodedLayer {
    name: String,
    shape: Vec<u64>,
    element_count: u64,
    padded: bool,
    config: CodebookConfig,
    pad_value: f64,
    bit_width: u8,
    payload: Vec<u8>,
    cache: CodebookCache,
}

impl PartialEq for EncodedLayer {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.element_count == other.element_count
            && self.padded == other.padded
            && self.config == other.config
            && self.pad_value.to_bits() == other.pad_value.to_bits()
            && self.bit_width == other.bit_width
            && self.payload == other.payload
    }
}

impl EncodedLayer {
    /// Assembles a layer from stored fields, checking every structural
    /// invariant including the θ range.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        name: String,
        shape: Vec<u64>,
        element_count: u64,
        padded: bool,
        config: CodebookConfig,
        pad_value: f64,
        bit_width: u8,
        payload: Vec<u8>,
    ) -> Result<Self> {
        config.validate()?;
        if padded != (element_count % 2 == 1) {
            return Err(Error::format(0, "padded flag disagrees with element count"));
        }
        let layer = EncodedLayer {
            name,
            shape,
            element_count,
            padded,
            config,
            pad_value,
            bit_width,
            payload,
            cache: CodebookCache::default(),
        };
        let expected = packed_len(layer.group_count(), bit_width);
        if layer.payload.len() != expected {
            return Err(Error::format(
                0,
                format!(
                    "payload is {} bytes, expected {expected}",
                    layer.payload.len()
                ),
            ));
        }
        layer.thetas()?;
        Ok(layer)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn element_count(&self) -> u64 {
        self.element_count
    }

    pub fn padded(&self) -> bool {
        self.padded
    }

    pub fn config(&self) -> &CodebookConfig {
        &self.config
    }

    pub fn pad_value(&self) -> f64 {
        self.pad_value
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn group_count(&self) -> usize {
        (self.element_count as usize).div_ceil(2)
    }

    /// Unpacks the θ stream, rejecting any value outside `[0, (M+1)·U)`.
    pub fn thetas(&self) -> Result<Vec<u32>> {
        if !(1..=32).contains(&self.bit_width) {
            return Err(Error::format(0, format!("bit width {} out of range", self.bit_width)));
        }
        let thetas = unpack_bits(&self.payload, self.bit_width, self.group_count())?;
        let bound = self.config.theta_bound();
        if let Some((g, &t)) = thetas.iter().enumerate().find(|(_, &t)| t as u64 >= bound) {
            return Err(Error::format(
                0,
                format!("theta {t} of group {g} is not below (M+1)*U = {bound}"),
            ));
        }
        Ok(thetas)
    }

    /// The layer's codebook, built on first use and cached.
    pub fn codebook(&self) -> Result<Arc<Codebook>> {
        if let Some(cb) = self.cache.0.get() {
            return Ok(Arc::clone(cb));
        }
        let cb = Arc::new(build_codebook(&self.config)?);
        Ok(Arc::clone(self.cache.0.get_or_init(|| cb)))
    }

    pub fn is_codebook_cached(&self) -> bool {
        self.cache.0.get().is_some()
    }
}

pub fn encode_layer(
    weights: &[f32],
    name: &str,
    shape: &[u64],
    params: &EncodeParams,
) -> Result<EncodedLayer> {
    encode_layer_with(weights, name, shape, params, SearchMode::Full)
}

/// Encodes one layer using the given acceleration path.
pub fn encode_layer_with(
    weights: &[f32],
    name: &str,
    shape: &[u64],
    params: &EncodeParams,
    mode: SearchMode,
) -> Result<EncodedLayer> {
    params.validate()?;
    let grouping = group_pairs(weights)?;
    let (centroid, l_f) = if grouping.points.is_empty() {
        ([0.0, 0.0], 0.0)
    } else {
        analyze(&grouping.points)?
    };
    let config = CodebookConfig {
        l: params.l,
        u: params.u,
        max_class: params.max_class,
        direction: params.direction,
        centroid,
        l_f,
    };
    let codebook = build_codebook(&config)?;
    let thetas = match mode {
        SearchMode::Full => thetas_matrix(&grouping.points, &codebook, true)?,
        SearchMode::NoKd => thetas_matrix(&grouping.points, &codebook, false)?,
        SearchMode::NoMatrix => thetas_scalar(&grouping.points, &codebook, true)?,
        SearchMode::Naive => thetas_scalar(&grouping.points, &codebook, false)?,
    };
    let bit_width = bit_width_for(thetas.iter().copied().max().unwrap_or(0));
    let payload = pack_bits(&thetas, bit_width)?;
    let cache = CodebookCache::default();
    let _ = cache.0.set(Arc::new(codebook));
    Ok(EncodedLayer {
        name: name.to_string(),
        shape: shape.to_vec(),
        element_count: weights.len() as u64,
        padded: grouping.padded,
        config,
        pad_value: grouping.pad_value,
        bit_width,
        payload,
        cache,
    })
}

/// Whole-array path: centre, categorise, scale all groups at once, then query.
fn thetas_matrix(points: &[Point], codebook: &Codebook, use_kd: bool) -> Result<Vec<u32>> {
    let config = codebook.config();
    let g = points.len();
    let flat: Vec<f64> = points.iter().flat_map(|p| *p).collect();
    let w = Array2::from_shape_vec((g, 2), flat).expect("g x 2 layout");
    let c = Array1::from(config.centroid.to_vec());
    let centered = &w - &c;
    let plan = ScalePlan::compute(&centered, config)?;
    let scaled = centered * &plan.scales.view().insert_axis(Axis(1)) + &c;
    let u = config.u;
    let rows: Vec<Point> = scaled.axis_iter(Axis(0)).map(|r| [r[0], r[1]]).collect();
    let lambdas: Vec<usize> = if use_kd {
        rows.par_iter().map(|&q| codebook.nearest(q).0).collect()
    } else {
        rows.iter().map(|&q| codebook.nearest_scan(q).0).collect()
    };
    Ok(plan
        .categories
        .iter()
        .zip(lambdas)
        .map(|(&m, lambda)| m as u32 * u + lambda as u32)
        .collect())
}

/// Scalar reference path: one group at a time.
fn thetas_scalar(points: &[Point], codebook: &Codebook, use_kd: bool) -> Result<Vec<u32>> {
    let config = codebook.config();
    let [cx, cy] = config.centroid;
    let direction = direction_vector(config.u, config.l, config.direction)?;
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        let d = (dx * dx + dy * dy).sqrt();
        let m = categorize(d, config.l, config.l_f, config.max_class)?;
        let s = scale_factor(m, config.l, config.l_f, config.max_class)?;
        let q = [dx * s + cx, dy * s + cy];
        let lambda = if use_kd {
            codebook.nearest(q).0 as u32
        } else {
            let mut best = (0u32, f64::INFINITY);
            for lambda in 0..config.u {
                let d = dist2(trajectory_point(lambda, &direction, config), q);
                if d < best.1 {
                    best = (lambda, d);
                }
            }
            best.0
        };
        out.push(m as u32 * config.u + lambda);
    }
    Ok(out)
}

/// Restores the pair stored under `θ`: `(p_λ − C)/s_m + C`.
pub fn decode_theta(theta: u32, config: &CodebookConfig, codebook: &Codebook) -> Result<Point> {
    if theta as u64 >= config.theta_bound() {
        return Err(Error::format(
            0,
            format!("theta {theta} is not below (M+1)*U = {}", config.theta_bound()),
        ));
    }
    let m = (theta / config.u) as u16;
    let lambda = (theta % config.u) as usize;
    let s = scale_factor(m, config.l, config.l_f, config.max_class)?;
    let p = codebook.point(lambda);
    let [cx, cy] = config.centroid;
    Ok([(p[0] - cx) / s + cx, (p[1] - cy) / s + cy])
}

/// Decodes a layer back to `element_count` weights in original order.
pub fn decode_layer(enc: &EncodedLayer) -> Result<Vec<f32>> {
    let codebook = enc.codebook()?;
    let thetas = enc.thetas()?;
    let config = enc.config();
    let table = scale_table(config)?;
    let [cx, cy] = config.centroid;
    let n = enc.element_count() as usize;
    let mut out = Vec::with_capacity(n + 1);
    for &t in &thetas {
        let m = (t / config.u) as usize;
        let p = codebook.point((t % config.u) as usize);
        let s = table[m];
        out.push(((p[0] - cx) / s + cx) as f32);
        out.push(((p[1] - cy) / s + cy) as f32);
    }
    out.truncate(n);
    Ok(out)
}
