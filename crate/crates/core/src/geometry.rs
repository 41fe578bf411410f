//! The four NV orientation frames of a diamond crystal and the cubic point
//! group that permutes them.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexFieldVector, Frame, RealFieldVector};

const ORTHONORMAL_TOL: f64 = 1e-12;

/// Unit ⟨111⟩ axes of the four NV sub-ensembles in crystal coordinates.
pub fn nv_axes() -> [Vector3<f64>; 4] {
    let s = 1.0 / 3f64.sqrt();
    [
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ]
}

/// Rotations from crystal coordinates into each NV frame plus the
/// crystal-to-lab rotation. Row 3 of each NV rotation is the NV axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOrientationSet", into = "RawOrientationSet")]
pub struct OrientationSet {
    rotations: [Matrix3<f64>; 4],
    crystal_to_lab: Matrix3<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOrientationSet {
    rotations: [[[f64; 3]; 3]; 4],
    crystal_to_lab: [[f64; 3]; 3],
}

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn from_rows(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

impl From<OrientationSet> for RawOrientationSet {
    fn from(o: OrientationSet) -> Self {
        Self {
            rotations: o.rotations.map(|m| to_rows(&m)),
            crystal_to_lab: to_rows(&o.crystal_to_lab),
        }
    }
}

impl TryFrom<RawOrientationSet> for OrientationSet {
    type Error = Error;

    fn try_from(raw: RawOrientationSet) -> Result<Self> {
        Self::new(
            raw.rotations.map(|r| from_rows(&r)),
            from_rows(&raw.crystal_to_lab),
        )
    }
}

impl Default for OrientationSet {
    fn default() -> Self {
        default_orientation_set()
    }
}

fn check_rotation(m: &Matrix3<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what}: non-finite entry")));
    }
    let err = (m * m.transpose() - Matrix3::identity()).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(Error::invalid(format!(
            "{what}: not orthonormal (|RR^T - I| = {err:.2e})"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::invalid(format!("{what}: determinant {det} != +1")));
    }
    Ok(())
}

impl OrientationSet {
    pub fn new(rotations: [Matrix3<f64>; 4], crystal_to_lab: Matrix3<f64>) -> Result<Self> {
        for (i, r) in rotations.iter().enumerate() {
            check_rotation(r, &format!("NV rotation {}", i + 1))?;
        }
        check_rotation(&crystal_to_lab, "crystal_to_lab")?;
        // Each NV axis must lie along a distinct ⟨111⟩ line.
        let family = nv_axes();
        let mut used = [false; 4];
        for (i, r) in rotations.iter().enumerate() {
            let z = r.row(2).transpose();
            let hit = family
                .iter()
                .position(|n| (n.dot(&z).abs() - 1.0).abs() <= ORTHONORMAL_TOL);
            match hit {
                Some(k) if !used[k] => used[k] = true,
                _ => {
                    return Err(Error::invalid(format!(
                        "NV rotation {}: axis {z:?} is not a distinct <111> direction",
                        i + 1
                    )))
                }
            }
        }
        Ok(Self {
            rotations,
            crystal_to_lab,
        })
    }

    /// Same set with a different crystal-to-lab rotation.
    pub fn with_crystal_to_lab(&self, crystal_to_lab: Matrix3<f64>) -> Result<Self> {
        Self::new(self.rotations, crystal_to_lab)
    }

    pub fn rotation(&self, i: usize) -> Result<&Matrix3<f64>> {
        check_index(i)?;
        Ok(&self.rotations[i - 1])
    }

    pub fn rotations(&self) -> &[Matrix3<f64>; 4] {
        &self.rotations
    }

    pub fn crystal_to_lab(&self) -> &Matrix3<f64> {
        &self.crystal_to_lab
    }

    /// NV axis `i` (1-based) in crystal coordinates.
    pub fn nv_axis(&self, i: usize) -> Result<Vector3<f64>> {
        Ok(self.rotation(i)?.row(2).transpose())
    }

    /// `ℛ_i b` for a field in crystal coordinates.
    pub fn to_nv_frame<T: Rotate>(&self, i: usize, b: &T) -> Result<T> {
        check_index(i)?;
        b.check_frame(Frame::Crystal)?;
        Ok(b.rotate(&self.rotations[i - 1], Frame::Nv(i as u8)))
    }

    /// `ℛ_iᵀ b` for a field in NV frame `i`.
    pub fn from_nv_frame<T: Rotate>(&self, i: usize, b: &T) -> Result<T> {
        check_index(i)?;
        b.check_frame(Frame::Nv(i as u8))?;
        Ok(b.rotate(&self.rotations[i - 1].transpose(), Frame::Crystal))
    }

    pub fn to_lab<T: Rotate>(&self, b: &T) -> Result<T> {
        b.check_frame(Frame::Crystal)?;
        Ok(b.rotate(&self.crystal_to_lab, Frame::Lab))
    }

    pub fn from_lab<T: Rotate>(&self, b: &T) -> Result<T> {
        b.check_frame(Frame::Lab)?;
        Ok(b.rotate(&self.crystal_to_lab.transpose(), Frame::Crystal))
    }
}

fn check_index(i: usize) -> Result<()> {
    if (1..=4).contains(&i) {
        Ok(())
    } else {
        Err(Error::OrientationOutOfRange(i))
    }
}

/// Field types that rotate as vectors.
pub trait Rotate: Sized {
    fn check_frame(&self, expected: Frame) -> Result<()>;
    fn rotate(&self, m: &Matrix3<f64>, frame: Frame) -> Self;
}

impl Rotate for RealFieldVector {
    fn check_frame(&self, expected: Frame) -> Result<()> {
        self.ensure_frame(expected)
    }

    fn rotate(&self, m: &Matrix3<f64>, frame: Frame) -> Self {
        RealFieldVector::from_vector(m * self.to_vector(), frame)
    }
}

impl Rotate for ComplexFieldVector {
    fn check_frame(&self, expected: Frame) -> Result<()> {
        self.real_part().ensure_frame(expected)
    }

    fn rotate(&self, m: &Matrix3<f64>, frame: Frame) -> Self {
        self.map(m, frame)
    }
}

/// The ⟨111⟩ orientation set with `crystal_to_lab = I`.
///
/// Each NV frame's x-axis is the normalized projection of crystal x onto the
/// plane normal to the NV axis (crystal y if that projection vanishes);
/// y completes a right-handed frame.
pub fn default_orientation_set() -> OrientationSet {
    let rotations = nv_axes().map(|z| {
        let mut x = Vector3::x() - z * z.x;
        if x.norm() < 1e-8 {
            x = Vector3::y() - z * z.y;
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
    });
    OrientationSet::new(rotations, Matrix3::identity()).expect("default orientation set is valid")
}

/// The 48 signed permutation matrices of the cubic point group `O_h`.
///
/// Every element maps the set of ⟨111⟩ lines onto itself, so an ensemble
/// spectrum cannot distinguish a field from any of its images.
pub fn cubic_point_group() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut out = Vec::with_capacity(48);
    for perm in PERMS {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            out.push(m);
        }
    }
    out
}
