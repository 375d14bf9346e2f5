//! FLOP accounting constants shared by the engine's instrumented kernels and
//! the closed-form estimate in [`crate::metrics`].
//!
//! | operation                                   | flops            |
//! |---------------------------------------------|------------------|
//! | multiply-accumulate (matmul, dot, sum sq.)  | 2 per MAC        |
//! | layer normalization                         | 5 per element    |
//! | AdaLN shift/scale modulation                | 5 per element    |
//! | softmax (incl. score scaling)               | 5 per score      |
//! | GELU                                        | 5 per element    |
//! | residual add, bias add, gate multiply       | 1 per element    |
//! | denoising update                            | 3 per element    |
//!
//! Not counted: timestep embedding, schedule coefficients, top-k sorting,
//! row gathers and scatters.

pub const FLOPS_PER_MAC: u64 = 2;
pub const NORM: u64 = 5;
pub const MODULATE: u64 = 5;
pub const SOFTMAX: u64 = 5;
pub const GELU: u64 = 5;
pub const ELEMENTWISE: u64 = 1;
pub const UPDATE: u64 = 3;

/// Running tally kept by the engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub macs: u64,
    /// Non-MAC flops, already weighted by the table above.
    pub other: u64,
}

impl OpCounter {
    pub fn flops(&self) -> u64 {
        FLOPS_PER_MAC * self.macs + self.other
    }

    pub(crate) fn mac(&mut self, n: usize) {
        self.macs += n as u64;
    }

    pub(crate) fn elementwise(&mut self, per_element: u64, n: usize) {
        self.other += per_element * n as u64;
    }
}

impl std::ops::AddAssign for OpCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.macs += rhs.macs;
        self.other += rhs.other;
    }
}
