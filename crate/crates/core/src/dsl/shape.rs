use core::fmt;

use super::{Binary, Equation, Operand, OperandRef, StatVariant, Unary};

/// Named dimension of an operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dim {
    Batch,
    /// `n_{i-1}`
    PrevWidth,
    /// `n_i`
    Width,
    /// `n_{i+1}`
    NextWidth,
    /// `n_L`
    OutWidth,
    One,
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dim::Batch => "B",
            Dim::PrevWidth => "n_{i-1}",
            Dim::Width => "n_i",
            Dim::NextWidth => "n_{i+1}",
            Dim::OutWidth => "n_L",
            Dim::One => "1",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: Dim,
    pub cols: Dim,
}

impl Shape {
    pub const SCALAR: Shape = Shape::new(Dim::One, Dim::One);

    pub const fn new(rows: Dim, cols: Dim) -> Self {
        Shape { rows, cols }
    }

    pub fn transposed(self) -> Self {
        Shape::new(self.cols, self.rows)
    }

    /// Shape of a leaf operand at hidden layer `i`.
    pub fn of(operand: OperandRef) -> Option<Shape> {
        if matches!(operand.stat, StatVariant::RunMean | StatVariant::RunStd) {
            return Some(Shape::SCALAR);
        }
        Some(match operand.operand {
            Operand::W | Operand::SgnW | Operand::R | Operand::S => {
                Shape::new(Dim::PrevWidth, Dim::Width)
            }
            Operand::RL => Shape::new(Dim::OutWidth, Dim::Width),
            Operand::HPre
            | Operand::H
            | Operand::GradH
            | Operand::GradHPre
            | Operand::Fa
            | Operand::FaAct
            | Operand::Dfa
            | Operand::DfaAct => Shape::new(Dim::Batch, Dim::Width),
            Operand::HPreNext | Operand::BNext => Shape::new(Dim::Batch, Dim::NextWidth),
            Operand::BL => Shape::new(Dim::Batch, Dim::OutWidth),
            Operand::Prev => return None,
        })
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\u{d7}{}", self.rows, self.cols)
    }
}

/// Sizes assigned to each [`Dim`].
///
/// [`ShapeEnv::symbolic`] gives every dimension its own size, so an equation
/// it accepts is valid for every concrete choice of widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShapeEnv {
    pub batch: usize,
    pub prev_width: usize,
    pub width: usize,
    pub next_width: usize,
    pub out_width: usize,
}

impl ShapeEnv {
    pub const fn symbolic() -> Self {
        ShapeEnv {
            batch: 1_000_003,
            prev_width: 1_000_033,
            width: 1_000_037,
            next_width: 1_000_039,
            out_width: 1_000_081,
        }
    }

    pub fn concrete(batch: usize, prev_width: usize, width: usize, next_width: usize, out_width: usize) -> Self {
        ShapeEnv {
            batch,
            prev_width,
            width,
            next_width,
            out_width,
        }
    }

    pub fn size(&self, dim: Dim) -> usize {
        match dim {
            Dim::Batch => self.batch,
            Dim::PrevWidth => self.prev_width,
            Dim::Width => self.width,
            Dim::NextWidth => self.next_width,
            Dim::OutWidth => self.out_width,
            Dim::One => 1,
        }
    }

    fn same(&self, a: Shape, b: Shape) -> bool {
        self.size(a.rows) == self.size(b.rows) && self.size(a.cols) == self.size(b.cols)
    }

    fn is_scalar(&self, s: Shape) -> bool {
        self.size(s.rows) == 1 && self.size(s.cols) == 1
    }
}

impl Default for ShapeEnv {
    fn default() -> Self {
        ShapeEnv::symbolic()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("shape mismatch at step {step}: {f} of {left} and {right}")]
    Mismatch {
        step: usize,
        f: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("result has shape {got}, expected B\u{d7}n_i")]
    FinalShape { got: Shape },
}

fn unary_shape(u: Unary, s: Shape) -> Shape {
    match u {
        Unary::Transpose => s.transposed(),
        _ => s,
    }
}

/// Result shape of `f(x, y)` under the broadcasting rules, or `None`.
pub(crate) fn binary_shape(env: &ShapeEnv, f: Binary, x: Shape, y: Shape) -> Option<Shape> {
    match f {
        Binary::KeepLeft => Some(x),
        Binary::MatMul => (env.size(x.cols) == env.size(y.rows)).then_some(Shape::new(x.rows, y.cols)),
        _ => {
            if env.same(x, y) || env.is_scalar(y) {
                Some(x)
            } else if env.is_scalar(x) {
                Some(y)
            } else {
                None
            }
        }
    }
}

/// Symbolic shape inference; the result must be `B x n_i`.
pub fn check_feasible(e: &Equation, env: &ShapeEnv) -> Result<Shape, ShapeError> {
    let mut prev: Option<Shape> = None;
    for (idx, step) in e.steps().iter().enumerate() {
        let leaf = |op: OperandRef| {
            if op.is_prev() {
                prev.expect("chained step has a previous result")
            } else {
                Shape::of(op).expect("leaf operand")
            }
        };
        let x = unary_shape(step.u1, leaf(step.op1));
        let y = unary_shape(step.u2, leaf(step.op2));
        let out = binary_shape(env, step.f, x, y).ok_or(ShapeError::Mismatch {
            step: idx + 1,
            f: step.f.name(),
            left: x,
            right: y,
        })?;
        prev = Some(out);
    }
    let got = prev.expect("nonempty equation");
    let target = Shape::new(Dim::Batch, Dim::Width);
    if env.same(got, target) {
        Ok(got)
    } else {
        Err(ShapeError::FinalShape { got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_equation;

    fn check(text: &str) -> Result<Shape, ShapeError> {
        check_feasible(&parse_equation(text).unwrap(), &ShapeEnv::symbolic())
    }

    #[test]
    fn grad_h_keeps_layer_shape() {
        assert_eq!(check("keep_left(ident(grad_h), ident(grad_h))"), Ok(Shape::new(Dim::Batch, Dim::Width)));
    }

    #[test]
    fn unequal_widths_mismatch_at_step_one() {
        match check("add(ident(g), ident(b_next))") {
            Err(ShapeError::Mismatch { step, left, right, .. }) => {
                assert_eq!(step, 1);
                assert_eq!(left, Shape::new(Dim::Batch, Dim::Width));
                assert_eq!(right, Shape::new(Dim::Batch, Dim::NextWidth));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scalar_broadcast() {
        assert!(check("div_elem(vnorm_2(g), shift[2](dfa.rmean))").is_ok());
        assert!(check("add(ident(w.rstd), ident(h))").is_ok());
    }

    #[test]
    fn b_next_cannot_reach_layer_shape() {
        assert!(matches!(
            check("keep_left(ident(b_next), ident(g))"),
            Err(ShapeError::FinalShape { .. })
        ));
        assert!(check("matmul(ident(b_next), transpose(w))").is_err());
    }

    #[test]
    fn matmul_and_transpose() {
        // (B x n_i)(n_i x n_{i-1})(n_{i-1} x n_i)
        assert!(check("matmul(ident(g), transpose(w)) |> matmul(ident(prev), ident(r))").is_ok());
        assert!(check("matmul(ident(b_l), ident(r_l))").is_ok());
        assert!(check("matmul(ident(g), ident(w))").is_err());
        assert!(check("matmul(ident(w.rmean), ident(g))").is_err());
    }

    #[test]
    fn concrete_env_allows_coincident_widths() {
        let e = parse_equation("add(ident(g), ident(b_next))").unwrap();
        assert!(check_feasible(&e, &ShapeEnv::concrete(4, 3, 5, 5, 2)).is_ok());
        assert!(check_feasible(&e, &ShapeEnv::concrete(4, 3, 5, 6, 2)).is_err());
    }
}
