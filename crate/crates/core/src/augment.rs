//! Stochastic sensor-noise transforms with batch-constant parameters.
//!
//! A training batch draws exactly one [`AugDraw`] from the four-operator pool
//! (jitter, scale, rotate, dropout). The draw depends only on the policy's
//! master seed and the global batch index. Element-level jitter noise comes
//! from a separate substream keyed by (seed, batch, window) so every window
//! gets fresh noise while sharing the batch's parameters.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::Signal;
use crate::rng::{substream, tag};

/// Seed used for transform selection unless configured otherwise.
pub const DEFAULT_AUG_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    /// Masked axes are zeroed over the whole window.
    FullChannel,
    /// Masked axes are zeroed over one contiguous span.
    Span,
}

/// Half-open uniform range `[lo, hi)`; `lo == hi` is a point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..self.hi)
        }
    }
}

/// The transform pool and its parameter distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub name: String,
    /// Jitter standard deviation, g.
    pub jitter_sigma: Range,
    pub scale: Range,
    /// Each of yaw, pitch and roll, degrees.
    pub rotation_deg: Range,
    /// Per-axis masking probability.
    pub p_drop: f64,
    pub dropout_mode: DropoutMode,
    /// Fraction of the window covered in span mode.
    pub span_fraction: Range,
    pub seed: u64,
}

impl AugPolicy {
    /// σ ∼ U(0.01, 0.05) g, s ∼ U(0.8, 1.2), ±15°, whole-axis dropout p = 0.2.
    pub fn pool_v1() -> Self {
        AugPolicy {
            name: "pool-v1".into(),
            jitter_sigma: Range::new(0.01, 0.05),
            scale: Range::new(0.8, 1.2),
            rotation_deg: Range::new(-15.0, 15.0),
            p_drop: 0.20,
            dropout_mode: DropoutMode::FullChannel,
            span_fraction: Range::new(0.2, 0.6),
            seed: DEFAULT_AUG_SEED,
        }
    }

    /// σ ∼ U(0.02, 0.04) g, s ∼ U(0.9, 1.2), ±15°, axis dropout over 20–60 % spans.
    pub fn pool_v2() -> Self {
        AugPolicy {
            name: "pool-v2".into(),
            jitter_sigma: Range::new(0.02, 0.04),
            scale: Range::new(0.9, 1.2),
            rotation_deg: Range::new(-15.0, 15.0),
            p_drop: 0.20,
            dropout_mode: DropoutMode::Span,
            span_fraction: Range::new(0.2, 0.6),
            seed: DEFAULT_AUG_SEED,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "pool-v1" => Ok(Self::pool_v1()),
            "pool-v2" => Ok(Self::pool_v2()),
            other => Err(Error::invalid(format!(
                "unknown augmentation preset '{other}' (expected pool-v1 or pool-v2)"
            ))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (what, r) in [
            ("jitter_sigma", self.jitter_sigma),
            ("scale", self.scale),
            ("rotation_deg", self.rotation_deg),
            ("span_fraction", self.span_fraction),
        ] {
            if !(r.lo <= r.hi) || !r.lo.is_finite() || !r.hi.is_finite() {
                return Err(Error::invalid(format!("{what} range is empty")));
            }
        }
        if self.jitter_sigma.lo < 0.0 {
            return Err(Error::invalid("jitter sigma must be non-negative"));
        }
        if self.scale.lo <= 0.0 {
            return Err(Error::invalid("scale factors must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::invalid("p_drop must lie in [0, 1]"));
        }
        if self.span_fraction.lo < 0.0 || self.span_fraction.hi > 1.0 {
            return Err(Error::invalid("span fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The transform for global batch `batch_index`.
    pub fn draw(&self, batch_index: u64) -> AugDraw {
        draw(self, batch_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugTag {
    Jitter,
    Scale,
    Rotate,
    Dropout,
}

impl AugTag {
    pub const ALL: [AugTag; 4] = [AugTag::Jitter, AugTag::Scale, AugTag::Rotate, AugTag::Dropout];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AugTag::Jitter => "jitter",
            AugTag::Scale => "scale",
            AugTag::Rotate => "rotate",
            AugTag::Dropout => "dropout",
        }
    }
}

impl fmt::Display for AugTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown transform '{s}'")))
    }
}

/// Contiguous dropout span: covered fraction and where it starts within the
/// free range, both in `[0, 1]`, resolved against the window length at apply time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanDraw {
    pub fraction: f64,
    pub offset: f64,
}

impl SpanDraw {
    /// `(start, len)` in samples for a window of `n` samples.
    pub fn resolve(&self, n: usize) -> (usize, usize) {
        let len = ((self.fraction * n as f64).round() as usize).min(n);
        let free = n - len;
        let start = ((self.offset * (free + 1) as f64).floor() as usize).min(free);
        (start, len)
    }
}

/// One sampled transform with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase")]
pub enum AugDraw {
    Jitter { sigma: f64 },
    Scale { factor: f64 },
    /// Euler angles in degrees.
    Rotate { yaw: f64, pitch: f64, roll: f64 },
    Dropout { axes: [bool; 3], span: Option<SpanDraw> },
}

impl AugDraw {
    pub fn tag(&self) -> AugTag {
        match self {
            AugDraw::Jitter { .. } => AugTag::Jitter,
            AugDraw::Scale { .. } => AugTag::Scale,
            AugDraw::Rotate { .. } => AugTag::Rotate,
            AugDraw::Dropout { .. } => AugTag::Dropout,
        }
    }

    /// Whether every parameter lies inside the policy's ranges.
    pub fn within(&self, policy: &AugPolicy) -> bool {
        match *self {
            AugDraw::Jitter { sigma } => policy.jitter_sigma.contains(sigma),
            AugDraw::Scale { factor } => policy.scale.contains(factor),
            AugDraw::Rotate { yaw, pitch, roll } => [yaw, pitch, roll]
                .iter()
                .all(|&a| policy.rotation_deg.contains(a)),
            AugDraw::Dropout { span, .. } => match (policy.dropout_mode, span) {
                (DropoutMode::FullChannel, None) => true,
                (DropoutMode::Span, Some(s)) => {
                    policy.span_fraction.contains(s.fraction) && (0.0..=1.0).contains(&s.offset)
                }
                _ => false,
            },
        }
    }
}

/// Samples the transform for one batch. Fully determined by
/// `(policy.seed, batch_index)`.
pub fn draw(policy: &AugPolicy, batch_index: u64) -> AugDraw {
    let mut rng = substream(policy.seed, &[tag::AUG_DRAW, batch_index]);
    draw_from(policy, &mut rng)
}

/// Samples a transform from an explicit generator.
pub fn draw_from(policy: &AugPolicy, rng: &mut impl Rng) -> AugDraw {
    let tag = AugTag::ALL[rng.gen_range(0..4)];
    draw_tagged(policy, tag, rng)
}

/// Samples the parameters of a given transform.
pub fn draw_tagged(policy: &AugPolicy, tag: AugTag, rng: &mut impl Rng) -> AugDraw {
    match tag {
        AugTag::Jitter => AugDraw::Jitter {
            sigma: policy.jitter_sigma.sample(rng),
        },
        AugTag::Scale => AugDraw::Scale {
            factor: policy.scale.sample(rng),
        },
        AugTag::Rotate => AugDraw::Rotate {
            yaw: policy.rotation_deg.sample(rng),
            pitch: policy.rotation_deg.sample(rng),
            roll: policy.rotation_deg.sample(rng),
        },
        AugTag::Dropout => {
            let axes = [0; 3].map(|_| rng.gen_bool(policy.p_drop));
            let span = match policy.dropout_mode {
                DropoutMode::FullChannel => None,
                DropoutMode::Span => Some(SpanDraw {
                    fraction: policy.span_fraction.sample(rng),
                    offset: rng.gen_range(0.0..1.0),
                }),
            };
            AugDraw::Dropout { axes, span }
        }
    }
}

/// Noise substream for window `window_index` of batch `batch_index`.
pub fn noise_stream(seed: u64, batch_index: u64, window_index: u64) -> ChaCha8Rng {
    substream(seed, &[tag::AUG_NOISE, batch_index, window_index])
}

/// Adds i.i.d. `N(0, σ²)` noise to every element.
pub fn jitter(a: &Signal, sigma: f64, rng: &mut impl Rng) -> Signal {
    jitter_per_axis(a, [sigma; 3], rng)
}

fn jitter_per_axis(a: &Signal, sigma: [f64; 3], rng: &mut impl Rng) -> Signal {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = a.clone();
    for row in out.rows_mut() {
        for k in 0..3 {
            // Always consume the draw so the stream layout is independent of σ.
            let z: f64 = normal.sample(rng);
            row[k] += sigma[k] * z;
        }
    }
    out
}

pub fn scale(a: &Signal, s: f64) -> Result<Signal> {
    if !(s > 0.0) {
        return Err(Error::invalid(format!("scale factor must be positive, got {s}")));
    }
    Ok(a.map(|r| [s * r[0], s * r[1], s * r[2]]))
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)`, angles in degrees.
pub fn rotation_matrix(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.to_radians().sin_cos();
    let (sp, cp) = pitch.to_radians().sin_cos();
    let (sr, cr) = roll.to_radians().sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn mat_t_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[0][i] * v[0] + m[1][i] * v[1] + m[2][i] * v[2])
}

/// Rotates every timestep by one yaw–pitch–roll matrix.
pub fn rotate(a: &Signal, yaw: f64, pitch: f64, roll: f64) -> Signal {
    let r = rotation_matrix(yaw, pitch, roll);
    a.map(|v| mat_vec(&r, v))
}

/// Zeroes the masked axes, over the whole window or over `span` only.
pub fn channel_dropout(a: &Signal, axes: [bool; 3], span: Option<SpanDraw>) -> Signal {
    let (start, len) = span.map_or((0, a.len()), |s| s.resolve(a.len()));
    let mut out = a.clone();
    for row in &mut out.rows_mut()[start..start + len] {
        for k in 0..3 {
            if axes[k] {
                row[k] = 0.0;
            }
        }
    }
    out
}

/// Applies a draw with jitter σ in the signal's own units.
pub fn apply(a: &Signal, draw: &AugDraw, rng: &mut impl Rng) -> Signal {
    apply_in_units(a, draw, rng, [1.0; 3])
}

/// Applies a draw to a normalized signal. Jitter σ is given in g and divided
/// by the per-axis σ that normalized the window.
pub fn apply_normalized(a: &Signal, draw: &AugDraw, rng: &mut impl Rng, axis_sigma: [f64; 3]) -> Signal {
    apply_in_units(a, draw, rng, axis_sigma.map(|s| 1.0 / s))
}

fn apply_in_units(a: &Signal, draw: &AugDraw, rng: &mut impl Rng, jitter_gain: [f64; 3]) -> Signal {
    match *draw {
        AugDraw::Jitter { sigma } => jitter_per_axis(a, jitter_gain.map(|g| g * sigma), rng),
        AugDraw::Scale { factor } => a.map(|r| r.map(|v| factor * v)),
        AugDraw::Rotate { yaw, pitch, roll } => rotate(a, yaw, pitch, roll),
        AugDraw::Dropout { axes, span } => channel_dropout(a, axes, span),
    }
}

/// Transposed Jacobian of a draw applied to an upstream gradient:
/// identity for jitter, `s·g` for scaling, `Rᵀ g` for rotation and the mask
/// for dropout.
pub fn vjp(draw: &AugDraw, grad_out: &Signal) -> Signal {
    match *draw {
        AugDraw::Jitter { .. } => grad_out.clone(),
        AugDraw::Scale { factor } => grad_out.map(|r| r.map(|v| factor * v)),
        AugDraw::Rotate { yaw, pitch, roll } => {
            let r = rotation_matrix(yaw, pitch, roll);
            grad_out.map(|g| mat_t_vec(&r, g))
        }
        AugDraw::Dropout { axes, span } => channel_dropout(grad_out, axes, span),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Signal {
        Signal::from_rows((0..50).map(|t| [t as f64, 1.0 - t as f64, 0.5 * t as f64]).collect())
    }

    #[test]
    fn draws_are_deterministic_and_bounded() {
        let p = AugPolicy::pool_v1();
        for b in 0..500 {
            let d = p.draw(b);
            assert_eq!(d, p.draw(b));
            assert!(d.within(&p), "{d:?}");
        }
        let v2 = AugPolicy::pool_v2();
        assert!((0..500).all(|b| v2.draw(b).within(&v2)));
    }

    #[test]
    fn identity_parameterizations() {
        let a = ramp();
        let mut rng = noise_stream(1, 0, 0);
        assert_eq!(jitter(&a, 0.0, &mut rng), a);
        assert_eq!(scale(&a, 1.0).unwrap(), a);
        assert_eq!(rotate(&a, 0.0, 0.0, 0.0), a);
        assert_eq!(channel_dropout(&a, [false; 3], None), a);
        assert!(scale(&a, 0.0).is_err());
        assert!(scale(&a, -1.0).is_err());
    }

    #[test]
    fn scale_doubles_exactly() {
        let a = ramp();
        let b = scale(&a, 2.0).unwrap();
        for (x, y) in a.rows().iter().zip(b.rows()) {
            for k in 0..3 {
                assert_eq!(y[k], 2.0 * x[k]);
            }
        }
    }

    #[test]
    fn full_channel_dropout_zeroes_column() {
        let a = ramp();
        let out = channel_dropout(&a, [true, false, false], None);
        for (o, r) in out.rows().iter().zip(a.rows()) {
            assert_eq!(o[0], 0.0);
            assert_eq!(o[1..], r[1..]);
        }
    }

    #[test]
    fn span_dropout_covers_fraction() {
        let a = Signal::from_rows(vec![[1.0; 3]; 50]);
        for offset in [0.0, 0.3, 0.999] {
            let span = SpanDraw { fraction: 0.4, offset };
            let out = channel_dropout(&a, [false, true, false], Some(span));
            let zeros: Vec<usize> = (0..50).filter(|&t| out.rows()[t][1] == 0.0).collect();
            assert_eq!(zeros.len(), 20);
            assert_eq!(zeros[19] - zeros[0], 19);
            assert!(out.axis(0).all(|v| v == 1.0));
        }
    }

    #[test]
    fn inverse_rotation_recovers() {
        let a = ramp();
        let back = rotate(&rotate(&a, 12.0, 0.0, 0.0), -12.0, 0.0, 0.0);
        assert!(back.max_abs_diff(&a) < 1e-9);
    }

    #[test]
    fn normalized_jitter_divides_by_sigma() {
        let a = Signal::zeros(50);
        let d = AugDraw::Jitter { sigma: 0.04 };
        let plain = apply(&a, &d, &mut noise_stream(3, 1, 2));
        let scaled = apply_normalized(&a, &d, &mut noise_stream(3, 1, 2), [2.0, 4.0, 0.5]);
        for (p, s) in plain.rows().iter().zip(scaled.rows()) {
            assert!((s[0] - p[0] / 2.0).abs() < 1e-15);
            assert!((s[1] - p[1] / 4.0).abs() < 1e-15);
            assert!((s[2] - p[2] * 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn presets_validate() {
        AugPolicy::pool_v1().validate().unwrap();
        AugPolicy::pool_v2().validate().unwrap();
        assert!(AugPolicy::preset("pool-v3").is_err());
        let mut bad = AugPolicy::pool_v1();
        bad.p_drop = 1.5;
        assert!(bad.validate().is_err());
    }
}
