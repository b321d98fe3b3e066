//! Serial revolute arms as axis/offset chains.
//!
//! Each link contributes `R(axis, q) · T(offset) · R(offset_rotation)`; the
//! chain is composed base to tip.

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};

use super::DefinitionError;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmLink {
    pub axis: Unit<Vector3<f64>>,
    pub offset: Vector3<f64>,
    pub offset_rotation: UnitQuaternion<f64>,
}

impl ArmLink {
    pub fn new(axis: [f64; 3], offset: [f64; 3]) -> Result<Self, DefinitionError> {
        ArmLink::with_rotation(axis, offset, UnitQuaternion::identity())
    }

    pub fn with_rotation(
        axis: [f64; 3],
        offset: [f64; 3],
        offset_rotation: UnitQuaternion<f64>,
    ) -> Result<Self, DefinitionError> {
        let v = Vector3::from(axis);
        if (v.norm() - 1.0).abs() > 1e-9 {
            return Err(DefinitionError::Invalid(format!(
                "joint axis {axis:?} is not unit length"
            )));
        }
        Ok(ArmLink {
            axis: Unit::new_unchecked(v),
            offset: Vector3::from(offset),
            offset_rotation,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmParams {
    pub links: Vec<ArmLink>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3D {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose3D {
    pub fn yaw(&self) -> f64 {
        self.orientation.euler_angles().2
    }
}

impl ArmParams {
    pub fn new(links: Vec<ArmLink>) -> Result<Self, DefinitionError> {
        if links.is_empty() {
            return Err(DefinitionError::Invalid(
                "arm needs at least one link".into(),
            ));
        }
        Ok(ArmParams { links })
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn fk(&self, joints: &[f64]) -> Result<Pose3D, DefinitionError> {
        if joints.len() != self.dof() {
            return Err(DefinitionError::DofMismatch {
                expected: self.dof(),
                found: joints.len(),
            });
        }
        let mut tf = Isometry3::identity();
        for (link, &q) in self.links.iter().zip(joints) {
            let joint = Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&link.axis, q),
            );
            let fixed =
                Isometry3::from_parts(Translation3::from(link.offset), link.offset_rotation);
            tf = tf * joint * fixed;
        }
        let mut q = tf.rotation;
        q.renormalize();
        Ok(Pose3D {
            position: tf.translation.vector,
            orientation: q,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_configuration_sums_offsets() {
        let arm = ArmParams::new(vec![
            ArmLink::new([0.0, 0.0, 1.0], [0.1, 0.0, 0.0]).unwrap(),
            ArmLink::new([0.0, 1.0, 0.0], [0.2, 0.0, 0.0]).unwrap(),
        ])
        .unwrap();
        let p = arm.fk(&[0.0, 0.0]).unwrap();
        assert!((p.position - Vector3::new(0.3, 0.0, 0.0)).norm() < 1e-15);
        assert!(p.orientation.angle() < 1e-15);
    }

    #[test]
    fn single_link_quarter_turn() {
        let arm =
            ArmParams::new(vec![ArmLink::new([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]).unwrap()]).unwrap();
        let p = arm.fk(&[PI / 2.0]).unwrap();
        assert!((p.position - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((p.yaw() - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn dof_mismatch() {
        let arm = ArmParams::new(vec![ArmLink::new([1.0, 0.0, 0.0], [0.0; 3]).unwrap()]).unwrap();
        assert!(matches!(
            arm.fk(&[0.0, 1.0]),
            Err(DefinitionError::DofMismatch {
                expected: 1,
                found: 2
            })
        ));
        assert!(ArmLink::new([1.0, 1.0, 0.0], [0.0; 3]).is_err());
    }
}
