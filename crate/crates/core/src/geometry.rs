//! Affine geometry on normalized electrode-grid coordinates.
//!
//! Coordinates live in `[-1, 1]^2`: `x` runs along the grid width (columns),
//! `y` along the height (rows), and pixel `(row 0, col 0)` sits at `(-1, -1)`.
//! A [`SalParams`] value describes the affine map `A = Sh * Sc * R * T` and the
//! sampling coordinates of output pixel `i` are `A_S * (x_t, y_t, 1)^T`, where
//! `A_S` is the top two rows of `A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of learnable affine coefficients.
pub const N_AFFINE: usize = 7;

/// Coefficient names in storage order.
pub const PARAM_NAMES: [&str; N_AFFINE] = ["tx", "ty", "phi", "sx", "sy", "shx", "shy"];

type Mat3 = [[f64; 3]; 3];

/// The seven interpretable affine coefficients: translation, rotation,
/// scaling and shearing.
///
/// Translations are in normalized units (a shift of 2.0 spans the whole grid
/// along that axis); `phi` is in radians and rotates about the grid center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalParams {
    pub tx: f64,
    pub ty: f64,
    pub phi: f64,
    pub sx: f64,
    pub sy: f64,
    pub shx: f64,
    pub shy: f64,
}

impl Default for SalParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl SalParams {
    pub const fn identity() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            phi: 0.0,
            sx: 1.0,
            sy: 1.0,
            shx: 0.0,
            shy: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; N_AFFINE] {
        [self.tx, self.ty, self.phi, self.sx, self.sy, self.shx, self.shy]
    }

    pub fn from_array(a: [f64; N_AFFINE]) -> Self {
        Self {
            tx: a[0],
            ty: a[1],
            phi: a[2],
            sx: a[3],
            sy: a[4],
            shx: a[5],
            shy: a[6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} is not finite ({v})")));
            }
        }
        if self.sx == 0.0 || self.sy == 0.0 {
            return Err(Error::InvalidParameter("scale factors must be nonzero".into()));
        }
        Ok(())
    }
}

/// Row-major 2x3 affine matrix `[[t11, t12, t13], [t21, t22, t23]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMatrix {
    pub theta: [[f64; 3]; 2],
}

impl AffineMatrix {
    pub const IDENTITY: AffineMatrix = AffineMatrix {
        theta: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let t = &self.theta;
        (
            t[0][0] * x + t[0][1] * y + t[0][2],
            t[1][0] * x + t[1][1] * y + t[1][2],
        )
    }

    /// Composition `self ∘ other`: applying the result equals applying
    /// `other` first, then `self`.
    pub fn then_after(&self, other: &AffineMatrix) -> AffineMatrix {
        let a = self.to_homogeneous();
        let b = other.to_homogeneous();
        AffineMatrix::from_homogeneous(&mat3_mul(&a, &b))
    }

    pub fn inverse(&self) -> Result<AffineMatrix> {
        let t = &self.theta;
        let det = t[0][0] * t[1][1] - t[0][1] * t[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidParameter("affine matrix is singular".into()));
        }
        let i00 = t[1][1] / det;
        let i01 = -t[0][1] / det;
        let i10 = -t[1][0] / det;
        let i11 = t[0][0] / det;
        Ok(AffineMatrix {
            theta: [
                [i00, i01, -(i00 * t[0][2] + i01 * t[1][2])],
                [i10, i11, -(i10 * t[0][2] + i11 * t[1][2])],
            ],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().flatten().all(|v| v.is_finite())
    }

    fn to_homogeneous(&self) -> Mat3 {
        [self.theta[0], self.theta[1], [0.0, 0.0, 1.0]]
    }

    fn from_homogeneous(m: &Mat3) -> Self {
        AffineMatrix { theta: [m[0], m[1]] }
    }
}

/// Grid axis. `X` runs along the width, `Y` along the height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Electrode array geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub ied_mm: f64,
    pub circumferential_axis: Axis,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, ied_mm: f64, circumferential_axis: Axis) -> Result<Self> {
        let g = GridSpec {
            height,
            width,
            ied_mm,
            circumferential_axis,
        };
        g.validate()?;
        Ok(g)
    }

    /// 7x24 bipolar array with 10 mm spacing, columns wrapping around the forearm.
    pub fn csl() -> Self {
        GridSpec {
            height: 7,
            width: 24,
            ied_mm: 10.0,
            circumferential_axis: Axis::X,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::DegenerateGrid(format!(
                "grid must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.ied_mm > 0.0 && self.ied_mm.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "inter-electrode distance must be positive, got {}",
                self.ied_mm
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.width,
            Axis::Y => self.height,
        }
    }

    /// Millimetres per normalized unit along `axis`.
    pub fn mm_per_unit(&self, axis: Axis) -> f64 {
        (self.extent(axis) as f64 - 1.0) * self.ied_mm / 2.0
    }

    /// One inter-electrode step expressed in normalized units along `axis`.
    pub fn step(&self, axis: Axis) -> f64 {
        2.0 / (self.extent(axis) as f64 - 1.0)
    }
}

/// Per-output-pixel sampling coordinates in normalized space, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub coords: Vec<(f64, f64)>,
}

impl SamplingGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

struct Factors {
    shear: Mat3,
    scale: Mat3,
    rot: Mat3,
    trans: Mat3,
}

impl Factors {
    fn new(p: &SalParams) -> Self {
        let (s, c) = p.phi.sin_cos();
        Factors {
            shear: [[1.0, p.shx, 0.0], [p.shy, 1.0, 0.0], [0.0, 0.0, 1.0]],
            scale: [[p.sx, 0.0, 0.0], [0.0, p.sy, 0.0], [0.0, 0.0, 1.0]],
            rot: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            trans: [[1.0, 0.0, p.tx], [0.0, 1.0, p.ty], [0.0, 0.0, 1.0]],
        }
    }

    fn product(&self) -> Mat3 {
        mat3_mul(&mat3_mul(&mat3_mul(&self.shear, &self.scale), &self.rot), &self.trans)
    }
}

/// Builds `Sh * Sc * R * T` and returns its top two rows.
pub fn compose_affine(p: &SalParams) -> Result<AffineMatrix> {
    p.validate()?;
    Ok(AffineMatrix::from_homogeneous(&Factors::new(p).product()))
}

/// Identity sampling coordinates for `g`, row-major.
pub fn target_grid(g: &GridSpec) -> SamplingGrid {
    let xs = linspace(g.width);
    let ys = linspace(g.height);
    let coords = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    SamplingGrid { coords }
}

fn linspace(n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / last).collect()
}

pub fn apply_affine(a: &AffineMatrix, g: &SamplingGrid) -> SamplingGrid {
    SamplingGrid {
        coords: g.coords.iter().map(|&(x, y)| a.apply(x, y)).collect(),
    }
}

/// Entry-wise derivatives of `A_S` with respect to each of the seven
/// coefficients, in [`PARAM_NAMES`] order.
pub fn param_jacobians(p: &SalParams) -> Result<[AffineMatrix; N_AFFINE]> {
    p.validate()?;
    let f = Factors::new(p);
    let (s, c) = p.phi.sin_cos();

    let d_trans_x: Mat3 = [[0.0, 0.0, 1.0], [0.0; 3], [0.0; 3]];
    let d_trans_y: Mat3 = [[0.0; 3], [0.0, 0.0, 1.0], [0.0; 3]];
    let d_rot: Mat3 = [[-s, -c, 0.0], [c, -s, 0.0], [0.0; 3]];
    let d_scale_x: Mat3 = [[1.0, 0.0, 0.0], [0.0; 3], [0.0; 3]];
    let d_scale_y: Mat3 = [[0.0; 3], [0.0, 1.0, 0.0], [0.0; 3]];
    let d_shear_x: Mat3 = [[0.0, 1.0, 0.0], [0.0; 3], [0.0; 3]];
    let d_shear_y: Mat3 = [[0.0; 3], [1.0, 0.0, 0.0], [0.0; 3]];

    let chain = |sh: &Mat3, sc: &Mat3, r: &Mat3, t: &Mat3| {
        AffineMatrix::from_homogeneous(&mat3_mul(&mat3_mul(&mat3_mul(sh, sc), r), t))
    };

    Ok([
        chain(&f.shear, &f.scale, &f.rot, &d_trans_x),
        chain(&f.shear, &f.scale, &f.rot, &d_trans_y),
        chain(&f.shear, &f.scale, &d_rot, &f.trans),
        chain(&f.shear, &d_scale_x, &f.rot, &f.trans),
        chain(&f.shear, &d_scale_y, &f.rot, &f.trans),
        chain(&d_shear_x, &f.scale, &f.rot, &f.trans),
        chain(&d_shear_y, &f.scale, &f.rot, &f.trans),
    ])
}

/// Converts a physical shift along `axis` into normalized translation units.
pub fn physical_to_normalized(shift_mm: f64, axis: Axis, g: &GridSpec) -> Result<f64> {
    let n = g.extent(axis);
    if n < 2 {
        return Err(Error::DegenerateGrid(format!("axis {axis:?} has extent {n}")));
    }
    Ok(2.0 * shift_mm / ((n as f64 - 1.0) * g.ied_mm))
}

/// Maps a normalized coordinate to fractional pixel index along an axis of `n` pixels.
#[inline]
pub fn normalized_to_index(v: f64, n: usize) -> f64 {
    (v + 1.0) * (n as f64 - 1.0) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &AffineMatrix, b: [[f64; 3]; 2], tol: f64) -> bool {
        a.theta
            .iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_and_translation() {
        let a = compose_affine(&SalParams::identity()).unwrap();
        assert_eq!(a, AffineMatrix::IDENTITY);

        let p = SalParams { tx: 0.5, ..SalParams::identity() };
        let a = compose_affine(&p).unwrap();
        assert_eq!(a.theta, [[1.0, 0.0, 0.5], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn quarter_turn() {
        let p = SalParams { phi: FRAC_PI_2, ..SalParams::identity() };
        let a = compose_affine(&p).unwrap();
        assert!(close(&a, [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0]], 1e-12));
        let (x, y) = a.apply(1.0, 0.0);
        assert!(x.abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let p = SalParams { ty: f64::NAN, ..SalParams::identity() };
        assert!(matches!(compose_affine(&p), Err(Error::InvalidParameter(_))));
        let p = SalParams { sx: 0.0, ..SalParams::identity() };
        assert!(compose_affine(&p).is_err());
    }

    #[test]
    fn target_grid_layouts() {
        let g = GridSpec::new(2, 2, 10.0, Axis::X).unwrap();
        assert_eq!(
            target_grid(&g).coords,
            vec![(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
        );

        let g = GridSpec::new(3, 3, 10.0, Axis::X).unwrap();
        assert_eq!(target_grid(&g).coords[4], (0.0, 0.0));

        let g = GridSpec::csl();
        let t = target_grid(&g);
        assert_eq!(t.len(), 168);
        assert!((t.coords[1].0 - t.coords[0].0 - 2.0 / 23.0).abs() < 1e-15);
        assert!((t.coords[24].1 - t.coords[0].1 - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn jacobians_at_identity() {
        let j = param_jacobians(&SalParams::identity()).unwrap();
        assert_eq!(j[0].theta, [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
        assert!(close(&j[2], [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0]], 1e-15));
    }

    #[test]
    fn physical_conversion() {
        let g = GridSpec::csl();
        let v = physical_to_normalized(10.0, Axis::X, &g).unwrap();
        assert!((v - 20.0 / 230.0).abs() < 1e-15);
        assert_eq!(physical_to_normalized(0.0, Axis::X, &g).unwrap(), 0.0);
        let v = physical_to_normalized(20.0, Axis::Y, &g).unwrap();
        assert!((v - 40.0 / 60.0).abs() < 1e-15);

        let degenerate = GridSpec { height: 1, width: 4, ied_mm: 10.0, circumferential_axis: Axis::X };
        assert!(matches!(
            physical_to_normalized(1.0, Axis::Y, &degenerate),
            Err(Error::DegenerateGrid(_))
        ));
    }

    #[test]
    fn inverse_round_trip() {
        let p = SalParams { tx: 0.1, ty: -0.2, phi: 0.3, sx: 1.1, sy: 0.9, shx: 0.1, shy: -0.05 };
        let a = compose_affine(&p).unwrap();
        let id = a.then_after(&a.inverse().unwrap());
        assert!(close(&id, AffineMatrix::IDENTITY.theta, 1e-12));
    }

    #[test]
    fn invalid_grid() {
        assert!(GridSpec::new(1, 5, 10.0, Axis::X).is_err());
        assert!(GridSpec::new(3, 5, 0.0, Axis::X).is_err());
    }
}
