//! Scalar abstraction over `f32` and `f64`.
//!
//! The whole numeric kernel is generic over [`Real`] so the same code path
//! serves both production training (f32) and the double-precision equivalence
//! and gradient suites. Keeping one code path is what makes those suites
//! meaningful: they exercise the exact arithmetic that ships.

use std::fmt::{Debug, Display};
use std::io::{Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::distr::uniform::SampleUniform;

pub trait Real:
    Float
    + SampleUniform
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoint headers so a file trained in one precision
    /// is never silently reinterpreted in another.
    const DTYPE: &'static str;

    /// Width of one serialized scalar in bytes.
    const WIDTH: usize;

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le<W: Write>(self, out: &mut W) -> std::io::Result<()>;

    fn read_le<R: Read>(inp: &mut R) -> std::io::Result<Self>;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const WIDTH: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le<W: Write>(self, out: &mut W) -> std::io::Result<()> {
        out.write_all(&self.to_le_bytes())
    }

    fn read_le<R: Read>(inp: &mut R) -> std::io::Result<Self> {
        let mut buf = [0u8; 4];
        inp.read_exact(&mut buf)?;
        Ok(f32::from_le_bytes(buf))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const WIDTH: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le<W: Write>(self, out: &mut W) -> std::io::Result<()> {
        out.write_all(&self.to_le_bytes())
    }

    fn read_le<R: Read>(inp: &mut R) -> std::io::Result<Self> {
        let mut buf = [0u8; 8];
        inp.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }
}
