//! Randomized finite-difference cases for every primitive on the tape.
//!
//! Each case reduces the primitive's output to a scalar with a fixed random
//! weighting, so no output coordinate cancels against another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::TapeError;
use crate::tape::{NormMode, Tape, Var};
use crate::tensor::Tensor;

type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TapeError> + Send + Sync>;

pub struct PrimitiveCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: CaseFn,
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

/// `sum(out * W)` for a weight matrix `W` fixed by `seed`.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, TapeError> {
    let [r, c] = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = tape.constant(random_tensor(&mut rng, r, c, 1.0));
    let prod = tape.hadamard(out, w)?;
    Ok(tape.sum(prod))
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    seed: u64,
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var, TapeError> + Send + Sync + 'static,
) -> PrimitiveCase {
    PrimitiveCase {
        name,
        inputs,
        f: Box::new(move |t, v| {
            let out = op(t, v)?;
            weighted_sum(t, out, seed)
        }),
    }
}

/// One instance of every primitive at a random point drawn from `seed`.
pub fn primitive_cases(seed: u64) -> Vec<PrimitiveCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |rows, cols| random_tensor(&mut rng, rows, cols, 1.0);
    let stats_mean: Vec<f64> = vec![0.2, -0.1, 0.4];
    let stats_var: Vec<f64> = vec![0.5, 1.5, 0.9];
    vec![
        case("matmul", vec![r(3, 4), r(4, 2)], seed, |t, v| t.matmul(v[0], v[1])),
        case("transpose", vec![r(3, 2)], seed, |t, v| Ok(t.transpose(v[0]))),
        case("linear", vec![r(5, 4), r(3, 4)], seed, |t, v| t.linear(v[0], v[1], None)),
        case("linear_bias", vec![r(5, 4), r(3, 4), r(1, 5)], seed, |t, v| {
            t.linear(v[0], v[1], Some(v[2]))
        }),
        case("add", vec![r(2, 3), r(2, 3)], seed, |t, v| t.add(v[0], v[1])),
        case("add_row", vec![r(4, 3), r(1, 3)], seed, |t, v| t.add_row(v[0], v[1])),
        case("scale", vec![r(2, 3)], seed, |t, v| Ok(t.scale(v[0], -1.7))),
        case("hadamard", vec![r(3, 3), r(3, 3)], seed, |t, v| t.hadamard(v[0], v[1])),
        case("concat_rows", vec![r(2, 3), r(1, 3)], seed, |t, v| t.concat(&v[..2], 0)),
        case("concat_cols", vec![r(2, 3), r(2, 1), r(2, 2)], seed, |t, v| {
            t.concat(v, 1)
        }),
        case("mean_rows", vec![r(4, 3)], seed, |t, v| t.mean(v[0], 0)),
        case("mean_cols", vec![r(4, 3)], seed, |t, v| t.mean(v[0], 1)),
        case("sum", vec![r(3, 2)], seed, |t, v| Ok(t.sum(v[0]))),
        case("relu", vec![r(4, 4)], seed, |t, v| Ok(t.relu(v[0]))),
        case("sigmoid", vec![r(3, 3)], seed, |t, v| Ok(t.sigmoid(v[0]))),
        case("tanh", vec![r(3, 3)], seed, |t, v| Ok(t.tanh(v[0]))),
        case("softmax_rows", vec![r(3, 4)], seed, |t, v| t.softmax(v[0], 1)),
        case("softmax_cols", vec![r(3, 4)], seed, |t, v| t.softmax(v[0], 0)),
        case("log_softmax", vec![r(2, 5)], seed, |t, v| t.log_softmax(v[0], 1)),
        case("gather_rows", vec![r(3, 2)], seed, |t, v| {
            t.gather_rows(v[0], &[2, 0, 0, 1, 2])
        }),
        case("scatter_mean", vec![r(5, 2)], seed, |t, v| {
            t.scatter_mean(v[0], &[Some(1), None, Some(0), Some(1), Some(1)], 3)
        }),
        case("pick", vec![r(3, 4)], seed, |t, v| t.pick(v[0], 2, 1)),
        case("batch_norm", vec![r(5, 3), r(1, 3), r(1, 3)], seed, |t, v| {
            t.batch_norm(v[0], v[1], v[2], NormMode::Batch)
        }),
        case("batch_norm_eval", vec![r(5, 3), r(1, 3), r(1, 3)], seed, move |t, v| {
            t.batch_norm(
                v[0],
                v[1],
                v[2],
                NormMode::Fixed {
                    mean: &stats_mean,
                    var: &stats_var,
                },
            )
        }),
        case("scaled_dot_attention", vec![r(2, 4), r(3, 4), r(3, 4)], seed, |t, v| {
            t.scaled_dot_attention(v[0], v[1], v[2])
        }),
        case("multi_head_attention", vec![r(2, 6), r(4, 6), r(4, 6)], seed, |t, v| {
            t.multi_head_attention(v[0], v[1], v[2], 3)
        }),
        case(
            "mha_block",
            vec![r(1, 4), r(5, 4), r(8, 4), r(8, 4), r(8, 4)],
            seed,
            |t, v| {
                let q = t.linear(v[2], v[0], None)?;
                let k = t.linear(v[3], v[1], None)?;
                let val = t.linear(v[4], v[1], None)?;
                t.multi_head_attention(q, k, val, 2)
            },
        ),
    ]
}
