//! Fit a two-layer network to a sine with the tape and Adam, then verify
//! its gradients against central differences.

use hsi_core::autodiff::{check_gradients, AdamState, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 64;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 * 6.0 - 3.0).collect();
    let x = Tensor::from_vec(n, 1, xs.clone());
    let y = Tensor::from_vec(n, 1, xs.iter().map(|v| 0.5 + 0.4 * v.sin()).collect());
    let mut params: Vec<Tensor<f64>> = [(1, 16), (1, 16), (16, 1), (1, 1)]
        .iter()
        .map(|&(r, c)| Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let mut adam = AdamState::new(&params.iter().map(|p| p.data.len()).collect::<Vec<_>>(), 0.02);

    let loss = |t: &mut Tape<f64>, v: &[hsi_core::autodiff::Var]| {
        let xv = t.constant(x.clone());
        let h = t.linear(xv, v[0], Some(v[1]))?;
        let h = t.sigmoid(h);
        let o = t.linear(h, v[2], Some(v[3]))?;
        let o = t.sigmoid(o);
        let yv = t.constant(y.clone());
        let l = t.bce(o, yv)?;
        Ok(t.mean(l))
    };
    for step in 0..=2000 {
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let l = loss(&mut tape, &vars).unwrap();
        let grads = tape.backward(l).unwrap();
        if step % 500 == 0 {
            println!("step {step:4}  loss {:.5}", tape.value(l).data[0]);
        }
        let gs: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get(v).unwrap().data.clone()).collect();
        let mut ps: Vec<&mut [f64]> = params.iter_mut().map(|p| p.data.as_mut_slice()).collect();
        let gr: Vec<&[f64]> = gs.iter().map(|g| g.as_slice()).collect();
        adam.update(&mut ps, &gr).unwrap();
    }
    let err = check_gradients(&params, 1e-5, loss).unwrap();
    println!("gradient check rel err {err:.1e}");
}
