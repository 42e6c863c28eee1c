use super::{DiffError, Tape, Var};
use ndarray::Array2;

/// Result of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(tensor, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Relative errors are taken against `max(|a|, |n|, REL_FLOOR)` so that
/// coordinates with vanishing gradients are judged on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Checks every coordinate of `params` with central differences of width `step`.
///
/// `loss` receives a fresh tape and one leaf per parameter tensor and must
/// return a scalar node.
pub fn check_gradients<F>(params: &[Array2<f64>], step: f64, loss: F) -> Result<GradCheck, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let eval = |values: &[Array2<f64>]| -> Result<(Tape, Vec<Var>, Var), DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = loss(&mut tape, &vars)?;
        Ok((tape, vars, root))
    };
    let (tape, vars, root) = eval(params)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Array2<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe: Vec<Array2<f64>> = params.to_vec();
    for (t, tensor) in params.iter().enumerate() {
        for idx in 0..tensor.len() {
            let base = tensor.as_slice().map_or_else(|| tensor.iter().nth(idx).copied().unwrap(), |s| s[idx]);
            let mut at = |delta: f64| -> Result<f64, DiffError> {
                probe[t].as_slice_mut().expect("standard layout")[idx] = base + delta;
                let (tape, _, root) = eval(&probe)?;
                tape.scalar(root)
            };
            let numeric = (at(step)? - at(-step)?) / (2.0 * step);
            probe[t].as_slice_mut().expect("standard layout")[idx] = base;
            let a = analytic[t].iter().nth(idx).copied().unwrap();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (t, idx);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn matrix(rows: usize, cols: usize, seed: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(i, j)| seed[(i * cols + j) % seed.len()] + 0.01 * (i + 2 * j) as f64)
    }

    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    type Loss = fn(&mut Tape, &[Var]) -> Result<Var, DiffError>;

    fn every_op_losses() -> Vec<(&'static str, Loss)> {
        vec![
            ("matmul", |t, v| {
                let bt = t.transpose(v[1]);
                let p = t.matmul(v[0], bt)?;
                Ok(t.frob_sq(p))
            }),
            ("add+mul", |t, v| {
                let s = t.add(v[0], v[1])?;
                let p = t.mul(s, v[0])?;
                Ok(t.sum(p))
            }),
            ("sub+div", |t, v| {
                let sq = t.mul(v[1], v[1])?;
                let den = t.offset(sq, 1.0);
                let d = t.div(v[0], den)?;
                let e = t.sub(d, v[1])?;
                Ok(t.frob_sq(e))
            }),
            ("relu+sigmoid", |t, v| {
                let r = t.relu(v[0]);
                let s = t.sigmoid(v[1]);
                let p = t.mul(r, s)?;
                Ok(t.sum(p))
            }),
            ("softmax", |t, v| {
                let s = t.row_softmax(v[0]);
                let p = t.mul(s, v[1])?;
                Ok(t.sum(p))
            }),
            ("exp+log", |t, v| {
                let e = t.exp(v[0]);
                let sq = t.mul(v[1], v[1])?;
                let shifted = t.offset(sq, 0.5);
                let l = t.log(shifted)?;
                let p = t.mul(e, l)?;
                Ok(t.mean(p))
            }),
            ("trace+scale", |t, v| {
                let vt = t.transpose(v[1]);
                let sq = t.matmul(vt, v[0])?;
                let s = t.scale(sq, 0.7);
                t.trace(s)
            }),
            ("concat+clamp", |t, v| {
                let c = t.concat_cols(&[v[0], v[1]])?;
                let k = t.clamp(c, -0.5, 0.5);
                Ok(t.frob_sq(k))
            }),
            ("broadcast", |t, v| {
                let rows = t.shape(v[1]).0;
                let row = t.gather_rows(v[1], &Arc::from(vec![0usize]))?;
                let col_idx: Arc<[usize]> = Arc::from((0..rows).collect::<Vec<_>>());
                let all = t.gather_rows(v[0], &col_idx)?;
                let b = t.add(all, row)?;
                let m = t.mul(b, row)?;
                Ok(t.mean(m))
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn every_op_matches_finite_differences(
            rows in 1usize..16,
            cols in 1usize..16,
            seed in prop::collection::vec(-2.0f64..2.0, 1..40),
        ) {
            let a = matrix(rows, cols, &seed);
            let b = matrix(rows, cols, &seed.iter().rev().map(|x| 0.5 * x - 0.1).collect::<Vec<_>>());
            // Keep clear of the ReLU and clamp kinks, where one-sided slopes differ.
            let smooth = |x: &f64| x.abs() > 1e-3 && (x.abs() - 0.5).abs() > 1e-3;
            prop_assume!(a.iter().chain(b.iter()).all(smooth));
            for (name, loss) in every_op_losses() {
                let report = check_gradients(&[a.clone(), b.clone()], STEP, loss).unwrap();
                prop_assert!(report.max_rel_err <= TOL, "{name}: {report:?}");
            }
        }

        #[test]
        fn sparse_matmul_matches_dense(n in 2usize..12, seed in prop::collection::vec(-1.0f64..1.0, 1..30)) {
            let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| (i * 7 + j * 3) % 4 == 0).collect();
            let g = Graph::unattributed(n, edges).unwrap();
            let s = Arc::new(g.normalized_adjacency());
            let x = matrix(n, 3, &seed);
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let sp = t.spmm(&s, xv).unwrap();
            let dense = t.leaf(s.to_dense());
            let dp = t.matmul(dense, xv).unwrap();
            for (p, q) in t.value(sp).iter().zip(t.value(dp).iter()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
            let report = check_gradients(&[x], STEP, |t, v| {
                let y = t.spmm(&s, v[0])?;
                Ok(t.frob_sq(y))
            }).unwrap();
            prop_assert!(report.max_rel_err <= TOL);
        }
    }

    #[test]
    fn deterministic_forward_and_backward() {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(matrix(5, 4, &[0.3, -1.2, 0.8]));
            let s = t.row_softmax(x);
            let f = t.frob_sq(s);
            (t.scalar(f).unwrap(), t.backward(f).unwrap().wrt(x))
        };
        let (a, ga) = run();
        let (b, gb) = run();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ga, gb);
    }
}
