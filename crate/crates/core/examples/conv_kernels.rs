//! 3D convolution forward and backward against the nested-loop reference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ts3dcnn::ops::{conv3d_backward, conv3d_forward, conv3d_reference, ConvSpec};
use ts3dcnn::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = ConvSpec::new(2, 4, 3, 2, 1).with_bias();
    let x = Tensor::<f64>::randn(&[2, 2, 9, 9, 9], 1.0, &mut rng);
    let w = Tensor::<f64>::randn(&spec.weight_shape(), 0.3, &mut rng);
    let b = Tensor::<f64>::randn(&[4], 0.1, &mut rng);

    let y = conv3d_forward(&x, &w, Some(&b), &spec)?;
    let r = conv3d_reference(&x, &w, Some(&b), &spec)?;
    let err = y.data().iter().zip(r.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("output {:?}, max difference from reference {err:.2e}", y.shape());

    // With upstream gradient u, <conv(x), u> = <x, dx> for a bias-free conv.
    let u = Tensor::<f64>::randn(y.shape(), 1.0, &mut rng);
    let g = conv3d_backward(&u, &x, &w, &spec)?;
    let plain = ConvSpec { has_bias: false, ..spec };
    let y0 = conv3d_forward(&x, &w, None, &plain)?;
    let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
    let dx = g.input.expect("input gradient");
    println!("<y, u> = {:.9}, <x, dx> = {:.9}", dot(&y0, &u), dot(&x, &dx));
    println!("dW {:?}, db {:?}", g.weights.shape(), g.bias.map(|t| t.shape().to_vec()));
    Ok(())
}
