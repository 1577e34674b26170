//! `.causehead` checkpoints:
//!
//! ```text
//! "CAUH"  u32 version  u32 c  u32 r  u8 activation  f64 λ
//! student: f32 tensors W1 b1 W2 b2 Wp bp
//! teacher: f32 tensors W1 b1 W2 b2 Wp bp
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, MlpHead, TeacherHead};
use crate::error::{Error, Result};
use crate::features::format::Reader;
use crate::tensor::DenseMatrix;

pub const HEAD_MAGIC: &[u8; 4] = b"CAUH";
pub const HEAD_VERSION: u32 = 1;

pub fn write_head_checkpoint(student: &MlpHead, teacher: &TeacherHead, path: &Path) -> Result<()> {
    let t = teacher.head();
    if (t.c, t.r) != (student.c, student.r) {
        return Err(Error::dims("write_head_checkpoint", format!("{}x{}", student.c, student.r), format!("{}x{}", t.c, t.r)));
    }
    let mut out = Vec::new();
    out.extend_from_slice(HEAD_MAGIC);
    for v in [HEAD_VERSION, student.c as u32, student.r as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(match student.activation {
        Activation::Relu => 0,
        Activation::Identity => 1,
    });
    out.extend_from_slice(&teacher.lambda.to_le_bytes());
    for head in [student, t] {
        for p in &head.params {
            for v in p.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_head_checkpoint(path: &Path) -> Result<(MlpHead, TeacherHead)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(HEAD_MAGIC)?;
    r.version(HEAD_VERSION)?;
    let c = r.u32()? as usize;
    let rd = r.u32()? as usize;
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Identity,
        a => return Err(r.inconsistent(format!("unknown activation tag {a}"))),
    };
    let lambda = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let read_head = |r: &mut Reader| -> Result<MlpHead> {
        let mut head = MlpHead::zeros(c, rd);
        head.activation = activation;
        for (slot, (a, b)) in head.params.iter_mut().zip(MlpHead::shapes(c, rd)) {
            let data = r.f32_vec(a * b)?;
            *slot = DenseMatrix::new(a, b, data).map_err(|_| r.inconsistent("non-finite parameter"))?;
        }
        Ok(head)
    };
    let student = read_head(&mut r)?;
    let teacher = read_head(&mut r)?;
    r.finish()?;
    let mut t = TeacherHead::from_student(&teacher, lambda)?;
    t.lambda = lambda;
    Ok((student, t))
}
