use crate::error::{Error, Result};
use crate::nn::{Layer, Network};

/// Folds every batch-norm layer into the conv/linear layer right before it.
///
/// With `s = γ / √(σ² + e)` per channel the fused layer uses `w' = w·s` and
/// `b' = (b − μ)·s + β`, which reproduces inference-mode outputs.
pub fn canonize(net: &Network) -> Result<Network> {
    let mut layers: Vec<Layer> = Vec::with_capacity(net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        let Layer::BatchNorm2d(bn) = layer else {
            layers.push(layer.clone());
            continue;
        };
        let scale: Vec<f32> = bn
            .gamma
            .iter()
            .zip(&bn.running_var)
            .map(|(g, v)| g / (v + bn.eps).sqrt())
            .collect();
        let fuse = |weight: &mut [f32], bias: &mut [f32]| {
            let per = weight.len() / bias.len();
            for ch in 0..bias.len() {
                for w in &mut weight[ch * per..(ch + 1) * per] {
                    *w *= scale[ch];
                }
                bias[ch] = (bias[ch] - bn.running_mean[ch]) * scale[ch] + bn.beta[ch];
            }
        };
        match layers.last_mut() {
            Some(Layer::Conv2d(c)) if c.out_channels == bn.channels => {
                fuse(&mut c.weight, &mut c.bias)
            }
            Some(Layer::Linear(l)) if l.out_features == bn.channels => {
                fuse(&mut l.weight, &mut l.bias)
            }
            prev => {
                let msg = match prev {
                    None => "no preceding layer".to_string(),
                    Some(p) => format!("preceded by {}, not a matching Conv2d or Linear", p.kind().name()),
                };
                return Err(Error::Canonize { layer: i, msg });
            }
        }
    }
    Network::new(net.input_shape().to_vec(), net.classes(), layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_small_cnn, BatchNorm2d, Linear};

    #[test]
    fn identity_bn_keeps_weights() {
        let mut l = Linear::zeros(2, 2);
        l.weight = vec![1.0, 2.0, 3.0, 4.0];
        l.bias = vec![0.5, -0.5];
        let mut bn = BatchNorm2d::new(2);
        bn.eps = 1e-12;
        let net = Network::new(vec![2], 2, vec![Layer::Linear(l.clone()), Layer::BatchNorm2d(bn)]).unwrap();
        let c = canonize(&net).unwrap();
        assert_eq!(c.layers().len(), 1);
        let Layer::Linear(fused) = &c.layers()[0] else { panic!() };
        for (a, b) in fused.weight.iter().zip(&l.weight) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in fused.bias.iter().zip(&l.bias) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn stacked_blocks_both_fuse() {
        let net = build_small_cnn([1, 8, 8], 3, 0).unwrap();
        let c = canonize(&net).unwrap();
        assert_eq!(c.layers().len(), net.layers().len() - 2);
        assert!(c.layers().iter().all(|l| !matches!(l, Layer::BatchNorm2d(_))));
    }

    #[test]
    fn bn_without_fusible_predecessor() {
        let net = Network::new(
            vec![2],
            2,
            vec![
                Layer::Linear(Linear::zeros(2, 2)),
                Layer::Relu,
                Layer::BatchNorm2d(BatchNorm2d::new(2)),
            ],
        )
        .unwrap();
        assert!(matches!(canonize(&net), Err(Error::Canonize { layer: 2, .. })));
        let lead = Network::new(vec![2], 2, vec![Layer::BatchNorm2d(BatchNorm2d::new(2))]).unwrap();
        assert!(matches!(canonize(&lead), Err(Error::Canonize { layer: 0, .. })));
    }
}
