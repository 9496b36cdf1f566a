//! Records a small network on the tape, backpropagates, and checks one
//! directional derivative against central differences.
//!
//! cargo run --example autodiff

use avsdf::numerics::{check_direction, mixed_direction, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward(x: &[f64], w: &[f64]) -> f64 {
    // tanh(W x) summed, in f64.
    (0..2)
        .map(|o| (0..3).map(|i| w[o * 3 + i] * x[i]).sum::<f64>().tanh())
        .sum()
}

fn main() -> avsdf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = [0.3f32, -0.8, 0.5];
    let w = Tensor::uniform(&[2, 3], 1.0, &mut rng);

    let mut tape = Tape::new();
    let xv = tape.var(Tensor::from_rows(1, 3, x.to_vec()));
    let wv = tape.var(w.clone());
    let h = tape.matmul_t(xv, false, wv, true)?;
    let h = tape.tanh(h);
    let out = tape.sum(h);
    let grads = tape.backward(out)?;
    println!("value      {:.6}", tape.value(out).item());
    println!("d/dx       {:?}", grads.get(xv).data());
    println!("d/dW       {:?}", grads.get(wv).data());

    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let w64: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = grads.get(xv).data().iter().map(|&v| v as f64).collect();
    let dir = mixed_direction(&g, &mut rng);
    let check =
        check_direction(|y| Ok((forward(y, &w64), 0)), &x64, &g, &dir, 1e-3)?.expect("smooth");
    println!(
        "analytic {:.8}  numeric {:.8}  rel err {:.1e}",
        check.analytic,
        check.numeric,
        check.rel_err()
    );
    Ok(())
}
