//! Builds a tiny conv, batch norm and linear graph on the tape and compares
//! its gradient with central differences.

use octforce::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn loss(inputs: &[Tensor]) -> octforce::Result<(Tape, Var, Vec<Var>)> {
    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let h = tape.conv1d(v[0], v[1], None, 2, 1)?;
    let (h, _) = tape.batch_norm_train(h, v[2], v[3])?;
    let h = tape.relu(h);
    let h = tape.global_avg_pool(h)?;
    let y = tape.linear(h, v[4], v[5])?;
    let target = tape.constant(Tensor::zeros(&[3, 1]));
    let l = tape.mse(y, target)?;
    Ok((tape, l, v))
}

fn main() -> octforce::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut inputs = vec![
        random(&[3, 2, 9], &mut rng),
        random(&[4, 2, 3], &mut rng),
        random(&[4], &mut rng),
        random(&[4], &mut rng),
        random(&[1, 4], &mut rng),
        random(&[1], &mut rng),
    ];
    let (tape, l, vars) = loss(&inputs)?;
    let grads = tape.backward(l)?;
    println!("loss {:.6}", tape.value(l).item()?);

    let names = [
        "input",
        "conv weight",
        "gamma",
        "beta",
        "head weight",
        "head bias",
    ];
    let h = 1e-6;
    for (i, name) in names.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).expect("gradient").data().to_vec();
        let mut worst: f64 = 0.0;
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            inputs[i].data_mut()[j] = x + h;
            let (t, up, _) = loss(&inputs)?;
            let up = t.value(up).item()?;
            inputs[i].data_mut()[j] = x - h;
            let (t, down, _) = loss(&inputs)?;
            let down = t.value(down).item()?;
            inputs[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let rel =
                (numeric - analytic[j]).abs() / numeric.abs().max(analytic[j].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!("{name:>12}: worst relative error {worst:.2e}");
    }
    Ok(())
}
