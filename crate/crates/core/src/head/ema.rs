use super::MlpHead;
use crate::error::{Error, Result};

/// Slowly moving copy of the student head. It is only ever written through
/// [`ema_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherHead {
    head: MlpHead,
    pub lambda: f64,
}

impl TeacherHead {
    /// Starts as an exact copy of the student.
    pub fn from_student(student: &MlpHead, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            head: student.clone(),
            lambda,
        })
    }

    pub fn head(&self) -> &MlpHead {
        &self.head
    }

    pub fn into_head(self) -> MlpHead {
        self.head
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("EMA rate {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `θ_teacher ← λ θ_teacher + (1 - λ) θ_student`, elementwise.
pub fn ema_update(teacher: &mut TeacherHead, student: &MlpHead) -> Result<()> {
    let lambda = teacher.lambda;
    check_lambda(lambda)?;
    if (teacher.head.c, teacher.head.r) != (student.c, student.r) {
        return Err(Error::dims(
            "ema_update",
            format!("{}x{}", teacher.head.c, teacher.head.r),
            format!("{}x{}", student.c, student.r),
        ));
    }
    for (t, s) in teacher.head.params.iter_mut().zip(&student.params) {
        for (tv, &sv) in t.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *tv = (lambda * *tv as f64 + (1.0 - lambda) * sv as f64) as f32;
        }
    }
    Ok(())
}
